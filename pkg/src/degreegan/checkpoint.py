"""Parameter checkpoints: named float64 tensors plus the specs that shaped them."""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import container
from .autodiff import ParamSet
from .nets import GeneratorSpec, RgcnSpec
from .qm9 import VocabSpec


def _spec_meta(gen: GeneratorSpec, critics: Sequence[RgcnSpec], extra: dict) -> str:
    meta = {
        "vocab": asdict(gen.vocab),
        "generator": {"z_dim": gen.z_dim, "hidden": list(gen.hidden)},
        "critics": [
            {
                "layers": list(c.layers),
                "attention_hidden": c.attention_hidden,
                "glimpse": c.glimpse,
                "head": c.head,
            }
            for c in critics
        ],
        **extra,
    }
    return json.dumps(meta, sort_keys=True)


def save_checkpoint(
    path: str | Path,
    param_sets: Sequence[ParamSet],
    gen_spec: GeneratorSpec,
    critic_specs: Sequence[RgcnSpec] = (),
    **extra,
) -> None:
    w = container.Writer(container.KIND_PARAMS)
    w.text(_spec_meta(gen_spec, critic_specs, extra))
    w.u16(len(param_sets))
    for ps in param_sets:
        w.text(ps.role)
        w.u32(len(ps))
        for name in ps:
            t = ps[name]
            w.text(name)
            w.u8(t.ndim)
            for d in t.shape:
                w.u32(d)
            w.f64_array(t.data)
    w.save(path)


class Checkpoint:
    def __init__(self, params: dict[str, ParamSet], gen_spec: GeneratorSpec, critic_specs, meta):
        self.params = params
        self.gen_spec = gen_spec
        self.critic_specs = critic_specs
        self.meta = meta

    @property
    def vocab(self) -> VocabSpec:
        return self.gen_spec.vocab


def load_checkpoint(path: str | Path) -> Checkpoint:
    r = container.Reader.open(path, container.KIND_PARAMS)
    meta = json.loads(r.text())
    sets = {}
    for _ in range(r.u16()):
        role = r.text()
        arrays = {}
        for _ in range(r.u32()):
            name = r.text()
            shape = tuple(r.u32() for _ in range(r.u8()))
            arrays[name] = r.f64_array(shape)
        sets[role] = ParamSet(role, arrays)
    r.done()
    v = meta["vocab"]
    vocab = VocabSpec(tuple(v["node_types"]), tuple(v["edge_types"]), v["max_nodes"])
    gen = GeneratorSpec(vocab, meta["generator"]["z_dim"], tuple(meta["generator"]["hidden"]))
    critics = [
        RgcnSpec(vocab, tuple(c["layers"]), c["attention_hidden"], c["glimpse"], c["head"])
        for c in meta["critics"]
    ]
    return Checkpoint(sets, gen, critics, meta)
