"""Command-line entry points.

Exit codes: 0 success, 2 unreadable or malformed input, 3 not enough
records, 4 bad configuration, 5 training produced a non-finite value.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .autodiff import NonFiniteError
from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .container import ContainerError
from .experiments import experiment_table1, experiment_table2, shrink_dataset
from .graphs import GraphSample, mean_degree_over_set, percent_unique
from .nets import sample_graphs
from .qm9 import (
    InsufficientRecordsError,
    ParseError,
    VocabSpec,
    load_dataset,
    load_samples,
    read_sdf,
    sample_split,
    save_dataset,
    save_samples,
)
from .training import train

EXIT_PARSE = 2
EXIT_DATA = 3
EXIT_CONFIG = 4
EXIT_NAN = 5

def _load_run(args) -> tuple[RunConfig, Path, Path]:
    # relative paths in the config are taken from the working directory
    cfg = load_config(args.config)
    return cfg, Path(cfg.dataset), Path(cfg.out_dir)


def cmd_ingest(args) -> int:
    result = read_sdf(args.sdf)
    print(f"parsed {result.n_records} records, kept {len(result.samples)}")
    for reason, count in sorted(result.skipped.items()):
        print(f"skipped {count}: {reason}")
    split = sample_split(result.samples, args.train_n, args.val_n, args.seed, source_indices=result.record_indices)
    save_dataset(split, args.out)
    print(f"selected {len(split.train)} train and {len(split.validation)} validation records -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg, data_path, out_dir = _load_run(args)
    dataset = load_dataset(data_path)
    if args.scale != 1.0:
        cfg = cfg.scaled(args.scale)
        dataset = shrink_dataset(dataset, args.scale)
    gen_spec, disc_spec, reward_spec = cfg.specs(dataset.vocab)
    schedule = replace(cfg.schedule, seed=cfg.master_seed)
    result = train(dataset, schedule, cfg.objective, gen_spec, disc_spec, reward_spec, out_dir=out_dir)
    last = result.log[-1]
    print(
        json.dumps(
            {
                "epochs": len(result.log),
                "val_mean_degree": last.val_mean_degree,
                "val_percent_unique": last.val_pct_unique,
                "checkpoint": str(out_dir / "final.ckpt"),
                "config_hash": cfg.hash(),
            }
        )
    )
    return 0


def cmd_sample(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    graphs = sample_graphs(ck.params["generator"], ck.gen_spec, args.n, seed=args.seed)
    save_samples(graphs, ck.vocab, args.out)
    print(f"wrote {len(graphs)} graphs to {args.out}")
    return 0


def cmd_eval(args) -> int:
    graphs, _ = load_samples(args.samples)
    print(
        json.dumps(
            {
                "samples": len(graphs),
                "percent_unique": percent_unique(graphs),
                "mean_degree": mean_degree_over_set(graphs),
            }
        )
    )
    return 0


def _dot_label(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(g: GraphSample, vocab: VocabSpec, name: str = "g") -> str:
    """Undirected DOT text; padding nodes are left out."""
    lines = [f"graph {name} {{"]
    types, edges = g.node_types, g.edge_types
    live = [i for i in range(g.n_nodes) if types[i] != g.empty_type]
    for i in live:
        lines.append(f"  n{i} [label={_dot_label(vocab.node_types[types[i]])}];")
    for a, i in enumerate(live):
        for j in live[a + 1 :]:
            if edges[i, j] != g.no_edge_type:
                lines.append(f"  n{i} -- n{j} [label={_dot_label(vocab.edge_types[edges[i, j]])}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_export_dot(args) -> int:
    graphs, vocab = load_samples(args.samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k = min(args.k, len(graphs))
    for idx in range(k):
        (out / f"graph_{idx:03d}.dot").write_text(to_dot(graphs[idx], vocab, f"g{idx}"))
    print(f"wrote {k} DOT files to {out}")
    return 0


def _cmd_table(which):
    def run(args) -> int:
        cfg, data_path, out_dir = _load_run(args)
        dataset = load_dataset(data_path)
        out = Path(args.out) if args.out else out_dir
        fn = experiment_table1 if which == 1 else experiment_table2
        report = fn(cfg, dataset, scale=args.scale, workers=args.workers, out_dir=out)
        for row in report.summary():
            print(json.dumps(row))
        return 0

    return run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="degreegan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse an SDF file and write a train/validation dataset")
    s.add_argument("--sdf", required=True, help="input SDF (V2000) file")
    s.add_argument("--out", required=True, help="dataset file to write")
    s.add_argument("--seed", type=int, default=0, help="seed of the random split (default 0)")
    s.add_argument("--train-n", type=int, default=5000, help="training records (default 5000)")
    s.add_argument("--val-n", type=int, default=1664, help="validation records (default 1664)")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("train", help="run one training schedule from a config file")
    s.add_argument("--config", required=True, help="YAML run configuration")
    s.add_argument("--scale", type=float, default=1.0, help="shrink epochs, data and samples by this factor")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="draw graphs from a checkpoint's generator")
    s.add_argument("--checkpoint", required=True, help="checkpoint file")
    s.add_argument("--n", type=int, default=6400, help="number of graphs (default 6400)")
    s.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    s.add_argument("--out", required=True, help="sample file to write")
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("eval", help="print percent unique and mean degree as one JSON line")
    s.add_argument("--samples", required=True, help="sample file")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("export-dot", help="write sampled graphs as DOT files")
    s.add_argument("--samples", required=True, help="sample file")
    s.add_argument("--k", type=int, default=12, help="number of graphs to export (default 12)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(fn=cmd_export_dot)

    for n, what in ((1, "degree targets d = 1, 2, 4, 6 plus the lambda = 1 baseline"), (2, "lambda sweep at d = 2")):
        s = sub.add_parser(f"table{n}", help=f"sweep over {what}")
        s.add_argument("--config", required=True, help="YAML run configuration")
        s.add_argument("--scale", type=float, default=1.0, help="desk-scale factor in (0, 1] (default 1)")
        s.add_argument("--workers", type=int, default=1, help="parallel worker processes (default 1)")
        s.add_argument("--out", help="report directory (default: out_dir from the config)")
        s.set_defaults(fn=_cmd_table(n))
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ContainerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InsufficientRecordsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
