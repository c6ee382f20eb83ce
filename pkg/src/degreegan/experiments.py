"""Sweeps over the degree target and over lambda, with CSV reports."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import RunConfig
from .graphs import mean_degree_over_set, percent_unique
from .nets import sample_graphs
from .qm9 import DatasetSplit
from .training import train

log = logging.getLogger(__name__)

TABLE1_TARGETS = (1.0, 2.0, 4.0, 6.0)
TABLE2_LAMBDAS = (1.0, 0.75, 0.5, 0.25, 0.05, 0.0)

SUMMARY_COLUMNS = ("objective", "value", "status", "trials_ok", "percent_unique", "mean_degree", "config_hash", "code_version")
TRIAL_COLUMNS = (
    "objective",
    "value",
    "trial",
    "seed",
    "status",
    "percent_unique",
    "mean_degree",
    "pretrain_percent_unique",
    "pretrain_mean_degree",
    "error",
    "config_hash",
    "code_version",
)


@dataclass(frozen=True)
class Cell:
    objective: str  # "d", "baseline" or "lambda"
    value: float
    target_degree: float
    lambda_main: float

    @property
    def label(self) -> str:
        return f"{self.objective}={self.value:g}"


@dataclass
class TrialRow:
    cell: Cell
    trial: int
    seed: int
    status: str = "ok"
    percent_unique: float | None = None
    mean_degree: float | None = None
    pretrain_percent_unique: float | None = None
    pretrain_mean_degree: float | None = None
    error: str = ""


@dataclass
class ExperimentReport:
    table: str
    config_hash: str
    code_version: str
    cells: list[Cell]
    trials: list[TrialRow] = field(default_factory=list)

    def cell_trials(self, cell: Cell) -> list[TrialRow]:
        return [t for t in self.trials if t.cell == cell]

    def summary(self) -> list[dict]:
        rows = []
        for cell in self.cells:
            ok = [t for t in self.cell_trials(cell) if t.status == "ok"]
            failed = len(self.cell_trials(cell)) - len(ok)
            rows.append(
                {
                    "objective": cell.objective,
                    "value": cell.value,
                    "status": "ok" if not failed else "failed",
                    "trials_ok": len(ok),
                    "percent_unique": float(np.mean([t.percent_unique for t in ok])) if ok else None,
                    "mean_degree": float(np.mean([t.mean_degree for t in ok])) if ok else None,
                    "config_hash": self.config_hash,
                    "code_version": self.code_version,
                }
            )
        return rows

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary_path = out / f"{self.table}.csv"
        trials_path = out / f"{self.table}_trials.csv"
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_COLUMNS)
            for row in self.summary():
                w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
        with open(trials_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRIAL_COLUMNS)
            for t in self.trials:
                w.writerow(
                    [
                        t.cell.objective,
                        _fmt(t.cell.value),
                        t.trial,
                        t.seed,
                        t.status,
                        _fmt(t.percent_unique),
                        _fmt(t.mean_degree),
                        _fmt(t.pretrain_percent_unique),
                        _fmt(t.pretrain_mean_degree),
                        t.error,
                        self.config_hash,
                        self.code_version,
                    ]
                )
        return summary_path, trials_path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def shrink_dataset(ds: DatasetSplit, scale: float) -> DatasetSplit:
    if scale >= 1:
        return ds
    n_train = max(1, round(len(ds.train) * scale))
    n_val = max(1, round(len(ds.validation) * scale)) if ds.validation else 0
    return DatasetSplit(
        ds.train[:n_train],
        ds.validation[:n_val],
        ds.seed,
        ds.vocab,
        ds.train_indices[:n_train],
        ds.val_indices[:n_val],
    )


def run_trial(
    cfg: RunConfig, dataset: DatasetSplit, cell: Cell, trial: int, out_dir: str | Path | None = None
) -> TrialRow:
    """Train once and score the final and pretrain-only generators.

    Failures are caught and reported on the row so a sweep can go on.
    """
    seed = cfg.master_seed + trial
    row = TrialRow(cell, trial, seed)
    try:
        gen_spec, disc_spec, reward_spec = cfg.specs(dataset.vocab)
        schedule = replace(cfg.schedule, lambda_main=cell.lambda_main, seed=seed)
        objective = replace(cfg.objective, target_degree=cell.target_degree)
        result = train(dataset, schedule, objective, gen_spec, disc_spec, reward_spec, out_dir=out_dir)
        final = sample_graphs(result.generator, gen_spec, cfg.eval_samples, seed=seed)
        row.percent_unique = percent_unique(final)
        row.mean_degree = mean_degree_over_set(final)
        if result.pretrain is not None:
            pre = sample_graphs(result.pretrain[0], gen_spec, cfg.eval_samples, seed=seed)
            row.pretrain_percent_unique = percent_unique(pre)
            row.pretrain_mean_degree = mean_degree_over_set(pre)
    except Exception as exc:  # recorded, the sweep continues
        log.warning("%s trial %d failed: %s", cell.label, trial, exc)
        row.status = "failed"
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def _job(args):
    return run_trial(*args)


def run_sweep(
    table: str,
    cells: Sequence[Cell],
    cfg: RunConfig,
    dataset: DatasetSplit,
    scale: float = 1.0,
    workers: int = 1,
    out_dir: str | Path | None = None,
) -> ExperimentReport:
    cfg = cfg.scaled(scale)
    dataset = shrink_dataset(dataset, scale)
    report = ExperimentReport(table, cfg.hash(), __version__, list(cells))
    jobs = []
    for cell in cells:
        for trial in range(cfg.trials):
            run_dir = None if out_dir is None else Path(out_dir) / table / cell.label / f"trial{trial}"
            jobs.append((cfg, dataset, cell, trial, run_dir))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    # merge in cell order whatever the completion order was
    report.trials = rows
    if out_dir is not None:
        report.write(out_dir)
    return report


def table1_cells(targets: Sequence[float] = TABLE1_TARGETS, lambda_main: float = 0.0) -> list[Cell]:
    cells = [Cell("d", float(d), float(d), lambda_main) for d in targets]
    cells.append(Cell("baseline", 1.0, 2.0, 1.0))
    return cells


def table2_cells(lambdas: Sequence[float] = TABLE2_LAMBDAS, target_degree: float = 2.0) -> list[Cell]:
    return [Cell("lambda", float(lam), target_degree, float(lam)) for lam in lambdas]


def experiment_table1(cfg: RunConfig, dataset: DatasetSplit, **kw) -> ExperimentReport:
    return run_sweep("table1", table1_cells(lambda_main=cfg.schedule.lambda_main), cfg, dataset, **kw)


def experiment_table2(cfg: RunConfig, dataset: DatasetSplit, **kw) -> ExperimentReport:
    return run_sweep("table2", table2_cells(target_degree=cfg.objective.target_degree), cfg, dataset, **kw)
