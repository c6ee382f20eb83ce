"""Generator MLP and the R-GCN discriminator / reward network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, ShapeError, Tensor
from .graphs import GraphSample, RelaxedGraph, discretize, stack_graphs
from .qm9 import VocabSpec


@dataclass(frozen=True)
class GeneratorSpec:
    vocab: VocabSpec = VocabSpec()
    z_dim: int = 32
    hidden: tuple[int, ...] = (128, 256, 512)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass(frozen=True)
class RgcnSpec:
    """R-GCN stack with an attention readout and a scalar head.

    ``head`` is ``"linear"`` for the discriminator and ``"sigmoid"`` for the
    reward network.
    """

    vocab: VocabSpec = VocabSpec()
    layers: tuple[int, ...] = (64, 32)
    attention_hidden: int = 64
    glimpse: int = 128
    head: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.head not in ("linear", "sigmoid"):
            raise ValueError(f"head must be 'linear' or 'sigmoid', not {self.head!r}")
        if not self.layers:
            raise ValueError("need at least one convolution layer")

    @property
    def prefix(self) -> str:
        return "disc" if self.head == "linear" else "reward"

    @property
    def n_relations(self) -> int:
        return self.vocab.n_edge_types - 1

    @property
    def relation_types(self) -> list[int]:
        return [b for b in range(self.vocab.n_edge_types) if b != self.vocab.no_edge_index]


# ------------------------------------------------------------------- params


def _param_shapes(spec) -> list[tuple[str, tuple[int, ...]]]:
    v = spec.vocab
    shapes = []

    def dense(name, n_in, n_out):
        shapes.append((f"{name}.weight", (n_in, n_out)))
        shapes.append((f"{name}.bias", (n_out,)))

    if isinstance(spec, GeneratorSpec):
        width = spec.z_dim
        for k, h in enumerate(spec.hidden):
            dense(f"gen.dense{k}", width, h)
            width = h
        dense("gen.nodes", width, v.max_nodes * v.n_node_types)
        dense("gen.edges", width, v.max_nodes * v.max_nodes * v.n_edge_types)
        return shapes

    p, T = spec.prefix, v.n_node_types
    width = T
    for layer, out in enumerate(spec.layers):
        n_in = width if layer == 0 else width + T
        for y in range(1, spec.n_relations + 1):
            shapes.append((f"{p}.layer{layer}.weight_y{y}", (n_in, out)))
            shapes.append((f"{p}.layer{layer}.bias_y{y}", (out,)))
        shapes.append((f"{p}.layer{layer}.weight_self", (n_in, out)))
        shapes.append((f"{p}.layer{layer}.bias_self", (out,)))
        width = out
    for mlp in ("gate", "value"):
        dense(f"{p}.{mlp}.hidden", width + T, spec.attention_hidden)
        dense(f"{p}.{mlp}.out", spec.attention_hidden, spec.glimpse)
    dense(f"{p}.head", spec.glimpse, 1)
    return shapes


def init_params(spec: GeneratorSpec | RgcnSpec, seed: int) -> ParamSet:
    """Glorot-uniform weights and zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in _param_shapes(spec):
        if len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    if isinstance(spec, GeneratorSpec):
        role = "generator"
    else:
        role = "discriminator" if spec.head == "linear" else "reward"
    return ParamSet(role, arrays)


def _dense(x: Tensor, params: ParamSet, name: str) -> Tensor:
    return x @ params[f"{name}.weight"] + params[f"{name}.bias"]


# ---------------------------------------------------------------- generator


def generate(z, params: ParamSet, spec: GeneratorSpec) -> RelaxedGraph:
    """Map a batch of noise vectors (b x z_dim) to relaxed graphs."""
    z = ad.tensor(z)
    if z.ndim != 2 or z.shape[1] != spec.z_dim:
        raise ShapeError(f"generator expects noise of shape (b, {spec.z_dim}), got {z.shape}")
    v = spec.vocab
    N, T, B = v.max_nodes, v.n_node_types, v.n_edge_types
    b = z.shape[0]

    h = z
    for k in range(len(spec.hidden)):
        h = ad.tanh(_dense(h, params, f"gen.dense{k}"))
    nodes = ad.softmax(_dense(h, params, "gen.nodes").reshape(b, N, T))
    logits = _dense(h, params, "gen.edges").reshape(b, N, N, B)
    logits = (logits + logits.transpose(0, 2, 1, 3)) * 0.5

    off_diag = (1.0 - np.eye(N))[:, :, None]
    diag = np.zeros((N, N, B))
    diag[np.arange(N), np.arange(N), v.no_edge_index] = 1.0
    adjacency = ad.softmax(logits) * off_diag + diag
    return RelaxedGraph(nodes, adjacency, v.empty_index, v.no_edge_index)


# -------------------------------------------------------------------- R-GCN


def rgcn_layer(
    h: Tensor | None,
    x: Tensor,
    adj: Tensor,
    norm: Tensor,
    params: ParamSet,
    prefix: str,
    n_relations: int,
) -> Tensor:
    """One relational convolution over a batch.

    ``h`` is (b, N, w) or ``None`` for the first layer, ``x`` the node
    features (b, N, T), ``adj`` the real-edge-type slices (b, Y, N, N) and
    ``norm`` the clamped neighbour counts (b, N, 1).
    """
    ann = x if h is None else ad.concat([h, x], axis=-1)
    weights = [params[f"{prefix}.weight_y{y}"] for y in range(1, n_relations + 1)]
    biases = [params[f"{prefix}.bias_y{y}"] for y in range(1, n_relations + 1)]
    weights.append(params[f"{prefix}.weight_self"])
    biases.append(params[f"{prefix}.bias_self"])
    if ann.shape[-1] != weights[0].shape[0]:
        raise ShapeError(f"{prefix}: input width {ann.shape[-1]} vs weight {weights[0].shape}")
    width = weights[0].shape[1]

    out = ann @ ad.concat(weights, axis=1) + ad.concat(biases, axis=0)
    b, n = out.shape[0], out.shape[1]
    messages = out[..., : n_relations * width].reshape(b, n, n_relations, width)
    messages = messages.transpose(0, 2, 1, 3)
    neighbours = (adj @ messages).sum(axis=1)
    self_loop = out[..., n_relations * width :]
    return ad.tanh(neighbours / norm + self_loop)


def attention_readout(h: Tensor, x: Tensor, params: ParamSet, prefix: str) -> Tensor:
    """Gated sum over nodes followed by the scalar head; returns shape (b,)."""
    ann = ad.concat([h, x], axis=-1)
    gate = ad.sigmoid(_dense(ad.tanh(_dense(ann, params, f"{prefix}.gate.hidden")), params, f"{prefix}.gate.out"))
    value = ad.tanh(_dense(ad.tanh(_dense(ann, params, f"{prefix}.value.hidden")), params, f"{prefix}.value.out"))
    glimpse = ad.tanh((gate * value).sum(axis=1))
    out = _dense(glimpse, params, f"{prefix}.head")
    return out.reshape(out.shape[0])


def as_tensors(g) -> tuple[Tensor, Tensor]:
    """Node and adjacency tensors for a relaxed graph, graph list or pair."""
    if isinstance(g, RelaxedGraph):
        return g.nodes, g.adjacency
    if isinstance(g, GraphSample):
        g = [g]
    if isinstance(g, tuple) and len(g) == 2 and not isinstance(g[0], GraphSample):
        return ad.tensor(g[0]), ad.tensor(g[1])
    x, a = stack_graphs(g)
    return Tensor(x), Tensor(a)


def rgcn_forward(nodes: Tensor, adjacency: Tensor, params: ParamSet, spec: RgcnSpec) -> Tensor:
    v = spec.vocab
    if nodes.ndim != 3 or nodes.shape[1:] != (v.max_nodes, v.n_node_types):
        raise ShapeError(f"node tensor {nodes.shape} does not match the vocabulary")
    if adjacency.ndim != 4 or adjacency.shape[1:] != (v.max_nodes, v.max_nodes, v.n_edge_types):
        raise ShapeError(f"adjacency tensor {adjacency.shape} does not match the vocabulary")
    if adjacency.shape[0] != nodes.shape[0]:
        raise ShapeError(f"batch mismatch {nodes.shape} vs {adjacency.shape}")

    rel = spec.relation_types
    if rel == list(range(rel[0], rel[-1] + 1)):
        adj = adjacency[..., rel[0] : rel[-1] + 1]
    else:
        adj = adjacency[..., rel]
    # clamp to 1: exact for one-hot graphs, avoids huge steps for relaxed ones
    norm = ad.maximum(adj.sum(axis=(2, 3)).reshape(nodes.shape[0], v.max_nodes, 1), 1.0)
    adj = adj.transpose(0, 3, 1, 2)

    h = None
    for layer in range(len(spec.layers)):
        h = rgcn_layer(h, nodes, adj, norm, params, f"{spec.prefix}.layer{layer}", spec.n_relations)
    out = attention_readout(h, nodes, params, spec.prefix)
    return ad.sigmoid(out) if spec.head == "sigmoid" else out


def discriminate(g, params: ParamSet, spec: RgcnSpec) -> Tensor:
    """Unbounded critic score per graph, shape (b,)."""
    if spec.head != "linear":
        raise ValueError("discriminator spec needs a linear head")
    return rgcn_forward(*as_tensors(g), params, spec)


def reward_predict(g, params: ParamSet, spec: RgcnSpec) -> Tensor:
    """Predicted reward in (0, 1) per graph, shape (b,)."""
    if spec.head != "sigmoid":
        raise ValueError("reward network spec needs a sigmoid head")
    return rgcn_forward(*as_tensors(g), params, spec)


def sample_graphs(
    params: ParamSet, spec: GeneratorSpec, n: int, seed: int, batch: int = 256
) -> list[GraphSample]:
    """Draw ``n`` discrete graphs; the same seed gives the same graphs."""
    rng = np.random.default_rng(seed)
    frozen = params.frozen()
    out: list[GraphSample] = []
    with ad.no_record():
        while len(out) < n:
            k = min(batch, n - len(out))
            z = rng.standard_normal((k, spec.z_dim))
            out.extend(discretize(generate(z, frozen, spec)))
    return out

