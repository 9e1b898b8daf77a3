"""Four-case experiment grid, shard sweep, metrics and report files.

Cases:

1. one model (S=1) trained on the data including poisoned conditions
2. SISA ensemble with S shards trained on the same data
3. one model retrained from scratch without the poisoned conditions
4. SISA unlearning of the poisoned conditions starting from case-2 checkpoints

Cases 1-2 are scored on the whole test split; cases 3-4 on the test split
minus the removed conditions. Timings cover only (re)training.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .checkpoint import Checkpoint, CheckpointStore
from .conditions import CLASS_NAMES, FaultCondition
from .config import ExperimentConfig
from .dataset import WindowSet
from .pipeline import Dataset, build_dataset
from .plan import ShardSlicePlan, plan_shards
from .sisa import ConstituentModel, aggregate_predict, train_ensemble, unlearn

log = logging.getLogger(__name__)

NUM_CLASSES = len(CLASS_NAMES)
CASES = (1, 2, 3, 4)


class MissingCheckpointsError(RuntimeError):
    pass


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def row_normalize(cm: np.ndarray) -> np.ndarray:
    totals = cm.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, cm / np.where(totals > 0, totals, 1), 0.0)


@dataclass
class CaseReport:
    case: int
    shards: int
    confusion: np.ndarray  # raw counts, rows = true class
    models: int = 1  # constituent models in the evaluated ensemble (1 for cases 1 and 3)
    seconds: float = 0.0
    shards_retrained: int = 0
    stages_executed: int = 0
    stage_epochs: int = 0
    excluded: tuple[int, ...] = ()
    skipped: bool = False
    seconds_runs: list[float] = field(default_factory=list)

    @property
    def test_size(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def recall(self) -> np.ndarray:
        totals = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, np.diag(self.confusion) / np.maximum(totals, 1), np.nan)

    @property
    def normalized(self) -> np.ndarray:
        return row_normalize(self.confusion)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case": self.case,
            "shards": self.shards,
            "models": self.models,
            "accuracy": self.accuracy,
            "recall": dict(zip(CLASS_NAMES, (None if np.isnan(r) else float(r) for r in self.recall))),
            "confusion": self.confusion.tolist(),
            "test_size": self.test_size,
            "seconds": self.seconds,
            "seconds_runs": list(self.seconds_runs),
            "shards_retrained": self.shards_retrained,
            "stages_executed": self.stages_executed,
            "stage_epochs": self.stage_epochs,
            "excluded": [str(FaultCondition.from_id(c)) for c in self.excluded],
            "skipped": self.skipped,
        }


@dataclass
class TrainedEnsemble:
    plan: ShardSlicePlan
    models: dict[int, ConstituentModel]
    checkpoints: dict[int, list[Checkpoint | None]]
    seconds: float
    removed: tuple[int, ...] = ()


@dataclass
class SweepRow:
    shards: int
    reports: dict[int, CaseReport]
    retrain_seconds: float  # median case 3
    unlearn_seconds: float  # median case 4
    unlearn_stage_epochs: int
    full_stage_epochs: int

    @property
    def speedup(self) -> float:
        return self.retrain_seconds / self.unlearn_seconds if self.unlearn_seconds > 0 else float("nan")

    @property
    def time_ratio(self) -> float:
        return self.unlearn_seconds / self.retrain_seconds if self.retrain_seconds > 0 else float("nan")

    @property
    def work_ratio(self) -> float:
        return self.unlearn_stage_epochs / self.full_stage_epochs


def evaluate(models: dict[int, ConstituentModel], test: WindowSet, exclude=()) -> np.ndarray:
    """Confusion matrix of the aggregated ensemble on ``test`` minus ``exclude`` conditions."""
    keep = np.flatnonzero(~np.isin(test.condition_ids, list(exclude)))
    sub = test.take(keep)
    pred = aggregate_predict([models[s] for s in sorted(models)], sub.x).label
    return confusion_matrix(sub.labels, pred)


class Experiment:
    """Holds one dataset and the ensembles trained on it, so cases can share work."""

    def __init__(self, cfg: ExperimentConfig, dataset: Dataset | None = None, store_root: str | None = None):
        self.cfg = cfg
        self.ds = dataset if dataset is not None else build_dataset(cfg)
        self.store_root = Path(store_root) if store_root else None
        self._trained: dict[tuple[int, tuple[int, ...]], TrainedEnsemble] = {}
        self._unlearned: dict[int, dict[int, ConstituentModel]] = {}

    @property
    def poisoned(self) -> tuple[int, ...]:
        return self.ds.poisoned

    def plan(self, shards: int) -> ShardSlicePlan:
        return plan_shards(shards, self.cfg.slices if shards != 1 else None, self.cfg.strategy)

    def store(self, shards: int, removed: tuple[int, ...]) -> CheckpointStore | None:
        if self.store_root is None:
            return None
        return CheckpointStore(self.store_root / (f"S{shards}_retrain" if removed else f"S{shards}"))

    def train(self, shards: int, removed=(), force: bool = False) -> TrainedEnsemble:
        removed = tuple(sorted(removed))
        key = (shards, removed)
        if key in self._trained and not force:
            return self._trained[key]
        plan = self.plan(shards)
        workers = self.cfg.workers
        t0 = time.perf_counter()
        models, ckpts = train_ensemble(
            self.ds.split.train, plan, self.cfg.model, self.cfg.train, self.cfg.seed,
            removed, self.store(shards, removed), workers,
        )
        elapsed = time.perf_counter() - t0
        log.info("trained S=%d (removed %s) in %.1fs", shards, list(removed), elapsed)
        out = TrainedEnsemble(plan, models, ckpts, elapsed, removed)
        self._trained[key] = out
        return out

    def checkpoints_for(self, shards: int) -> TrainedEnsemble:
        key = (shards, ())
        if key in self._trained:
            return self._trained[key]
        raise MissingCheckpointsError(
            f"case 4 with S={shards} needs the case-2 checkpoints for S={shards}; train that ensemble first"
        )

    def run_case(self, case: int, shards: int = 1, repeats: int = 1) -> CaseReport:
        """Run one case in the context of shard count ``shards``.

        Cases 1 and 3 always use a single model; ``shards`` only labels the
        report. ``repeats > 1`` re-times the (re)training and keeps the median.
        """
        if case not in CASES:
            raise ValueError(f"case must be one of {CASES}")
        test = self.ds.split.test
        poisoned = self.poisoned
        epochs = self.cfg.train.epochs_total
        if case in (1, 2, 3):
            s = shards if case == 2 else 1
            removed = poisoned if case == 3 else ()
            runs = [self.train(s, removed, force=i > 0).seconds for i in range(repeats)]
            te = self.train(s, removed)
            return CaseReport(
                case, shards, evaluate(te.models, test, removed), models=s,
                seconds=statistics.median(runs), shards_retrained=s,
                stages_executed=s * te.plan.slices_per_shard, stage_epochs=s * epochs,
                excluded=removed, seconds_runs=runs,
            )
        base = self.checkpoints_for(shards)
        if not poisoned:
            # an empty unlearning request is invalid; case 4 is then case 2 unchanged
            self._unlearned[shards] = base.models
            return CaseReport(4, shards, evaluate(base.models, test), models=shards, skipped=True)
        runs = []
        for _ in range(repeats):
            result = unlearn(
                poisoned, base.models, base.checkpoints, self.ds.split.train, base.plan,
                self.cfg.model, self.cfg.train, self.cfg.seed,
            )
            runs.append(result.report.total_seconds)
        rep = result.report
        self._unlearned[shards] = result.models
        return CaseReport(
            4, shards, evaluate(result.models, test, poisoned), models=shards,
            seconds=statistics.median(runs), shards_retrained=rep.shards_retrained,
            stages_executed=sum(len(r.stages) for r in rep.runs.values()),
            stage_epochs=rep.stage_epochs, excluded=poisoned, seconds_runs=runs,
        )

    def unlearned(self, shards: int) -> dict[int, ConstituentModel]:
        return self._unlearned[shards]


def run_sweep(cfg: ExperimentConfig, exp: Experiment | None = None) -> list[SweepRow]:
    """Cases 1-4 for every shard count; timings are medians over ``cfg.repeats`` runs."""
    exp = exp or Experiment(cfg)
    if cfg.workers != 1:
        log.warning("timing with %d workers measures parallelism as well as saved work", cfg.workers)
    case3 = exp.run_case(3, repeats=cfg.repeats) if exp.poisoned else None
    rows = []
    for s in cfg.shards:
        try:
            reports = {1: exp.run_case(1, s), 2: exp.run_case(2, s)}
            if case3 is not None:
                reports[3] = replace(case3, shards=s)
            reports[4] = exp.run_case(4, s, repeats=cfg.repeats)
        except Exception as exc:
            raise RuntimeError(f"sweep failed at S={s}: {exc}") from exc
        full = cfg.train.epochs_total * s
        r4 = reports[4]
        rows.append(SweepRow(
            s, reports, case3.seconds if case3 else float("nan"), r4.seconds, r4.stage_epochs, full,
        ))
    return rows


# --------------------------------------------------------------------------
# report files

SUMMARY_FIELDS = (
    ["case", "shards", "accuracy"]
    + [f"recall_{c}" for c in CLASS_NAMES]
    + ["test_size", "seconds", "speedup", "shards_retrained", "stages_executed", "stage_epochs"]
)


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def write_confusion(path: Path, cm: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *CLASS_NAMES])
        for name, row in zip(CLASS_NAMES, cm):
            w.writerow([name, *(int(v) for v in row)])


def environment() -> dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
    }


def emit_reports(
    reports: list[CaseReport],
    out_dir: str | os.PathLike,
    cfg: ExperimentConfig,
    speedups: dict[int, float] | None = None,
    extra: dict[str, Any] | None = None,
) -> list[Path]:
    """Write ``summary.csv``, one ``confusion_<case>_<S>.csv`` per report, and ``run.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write reports to {out}: {exc}") from exc
    speedups = speedups or {}
    written = []
    summary = out / "summary.csv"
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in reports:
            sp = speedups.get(r.shards) if r.case == 4 else None
            w.writerow([
                r.case, r.shards, _fmt(r.accuracy), *(_fmt(x) for x in r.recall),
                r.test_size, _fmt(r.seconds), _fmt(sp), r.shards_retrained, r.stages_executed, r.stage_epochs,
            ])
    written.append(summary)
    for r in reports:
        p = out / f"confusion_{r.case}_{r.shards}.csv"
        write_confusion(p, r.confusion)
        written.append(p)
    run = {
        "config": cfg.to_dict(),
        "environment": environment(),
        "seeds": {"data": cfg.data_seed, "split": cfg.split_seed, "train": cfg.seed, "emi": cfg.emi.seed},
        "cases": [r.to_dict() for r in reports],
        "speedups": {str(k): v for k, v in sorted(speedups.items())},
    }
    if extra:
        run.update(extra)
    path = out / "run.json"
    path.write_text(json.dumps(run, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    written.append(path)
    return written


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def sweep_reports(rows: list[SweepRow]) -> tuple[list[CaseReport], dict[int, float]]:
    """Flatten sweep rows into one report per (case, S) plus the speedup per S."""
    reports = [row.reports[c] for row in rows for c in sorted(row.reports)]
    return reports, {row.shards: row.speedup for row in rows}
