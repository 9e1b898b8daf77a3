"""Sharded, isolated, sliced, aggregated training and exact unlearning.

Each shard's constituent model is trained in stages: stage ``r`` sees the
union of slices ``1..r`` and ends with a checkpoint. Every random draw is
keyed by ``(seed root, shard, stage, epoch[, batch])`` and every stage's
sample order is derived from the sorted retained indices, so resuming from
checkpoint ``r*-1`` with some conditions removed reproduces, bit for bit,
what training from scratch on the retained data would have produced.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lstm
from .checkpoint import Checkpoint, CheckpointStore, RngCursor
from .dataset import WindowSet
from .lstm import ModelConfig, Params
from .optim import AdamState, adam_step
from .plan import ShardSlicePlan, locate_affected
from .rng import RngStream

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs_total: int = 60
    batch_size: int = 512
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.epochs_total < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs_total, batch_size and lr must be positive")


def stage_epochs(epochs_total: int, num_stages: int) -> list[int]:
    """``ceil(E/R)`` epochs per stage, trimmed from the end so they sum to ``E``.

    >>> stage_epochs(60, 8)
    [8, 8, 8, 8, 8, 8, 8, 4]
    """
    per = math.ceil(epochs_total / num_stages)
    counts = [per] * num_stages
    excess = per * num_stages - epochs_total
    for r in range(num_stages - 1, -1, -1):
        cut = min(excess, counts[r])
        counts[r] -= cut
        excess -= cut
    if any(c == 0 for c in counts):
        raise ValueError(
            f"{epochs_total} epochs over {num_stages} stages leaves a stage without training: {counts}"
        )
    return counts


@dataclass(frozen=True)
class DataFingerprint:
    retained_conditions: tuple[int, ...]
    window_hash: str


@dataclass
class ConstituentModel:
    shard: int
    params: Params
    config: ModelConfig
    fingerprint: DataFingerprint


@dataclass(frozen=True)
class EnsemblePrediction:
    per_shard: np.ndarray  # (S, ..., C)
    probabilities: np.ndarray  # (..., C)
    label: np.ndarray | int


@dataclass
class ShardRun:
    """Record of one (re)training pass over a shard."""

    shard: int
    start_stage: int
    stages: list[int]
    stage_epochs: int
    seconds: float
    fallback: bool = False


@dataclass
class UnlearnReport:
    affected: dict[int, int]
    runs: dict[int, ShardRun] = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return sum(r.seconds for r in self.runs.values())

    @property
    def stage_epochs(self) -> int:
        return sum(r.stage_epochs for r in self.runs.values())

    @property
    def shards_retrained(self) -> int:
        return len(self.runs)

    @property
    def fallbacks(self) -> list[int]:
        return [s for s, r in self.runs.items() if r.fallback]


@dataclass
class UnlearnResult:
    models: dict[int, ConstituentModel]
    checkpoints: dict[int, list[Checkpoint | None]]
    report: UnlearnReport


# --------------------------------------------------------------------------
# data selection


def _sorted_order(data: WindowSet) -> np.ndarray:
    return np.lexsort((data.window_starts, data.condition_ids))


def _check_data(data: WindowSet, plan: ShardSlicePlan, shard: int) -> None:
    present = set(np.unique(data.condition_ids).tolist())
    unknown = present - set(plan.assignment)
    if unknown:
        raise ValueError(f"data holds conditions absent from the plan: {sorted(unknown)}")
    missing = set(plan.conditions_in(shard)) - present
    if missing:
        raise ValueError(f"shard {shard} conditions missing from the data: {sorted(missing)}")


def stage_indices(
    data: WindowSet, plan: ShardSlicePlan, shard: int, stage: int, removed: Iterable[int] = ()
) -> np.ndarray:
    """Indices of the windows used by ``stage``, ordered by (condition, start)."""
    removed = set(removed)
    conds = [c for c in plan.conditions_in(shard, range(1, stage + 1)) if c not in removed]
    order = _sorted_order(data)
    return order[np.isin(data.condition_ids[order], conds)]


def fingerprint(data: WindowSet, plan: ShardSlicePlan, shard: int, removed: Iterable[int] = ()) -> DataFingerprint:
    idx = stage_indices(data, plan, shard, plan.slices_per_shard, removed)
    keys = np.stack([data.condition_ids[idx], data.window_starts[idx]], axis=1).astype("<i8")
    retained = tuple(c for c in plan.conditions_in(shard) if c not in set(removed))
    return DataFingerprint(retained, hashlib.blake2b(keys.tobytes(), digest_size=8).hexdigest())


# --------------------------------------------------------------------------
# training


def initial_checkpoint(shard: int, cfg: ModelConfig, seed_root: int) -> Checkpoint:
    params = lstm.init_params(cfg, RngStream(seed_root, "init", shard).generator())
    return Checkpoint(shard, 0, params, AdamState.zeros(params), RngCursor(seed_root, 1, 0, 0))


def _train_stage(
    data: WindowSet,
    idx: np.ndarray,
    params: Params,
    adam: AdamState,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    seed_root: int,
    shard: int,
    stage: int,
    epochs: int,
) -> tuple[Params, AdamState]:
    n = len(idx)
    loss = float("nan")
    for epoch in range(epochs):
        order = idx[RngStream(seed_root, "shuffle", shard, stage, epoch).generator().permutation(n)]
        drop = RngStream(seed_root, "dropout", shard, stage, epoch)
        for b, lo in enumerate(range(0, n, tcfg.batch_size)):
            bi = order[lo:lo + tcfg.batch_size]
            logits, cache = lstm.forward(params, data.x[bi], cfg, train=True, rng=drop.generator(b))
            loss, dlogits = lstm.softmax_cross_entropy(logits, data.labels[bi])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in shard {shard}, stage {stage}, epoch {epoch}, batch {b}")
            grads = lstm.backward(params, cache, dlogits)
            params, adam = adam_step(params, grads, adam, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
        log.debug("shard %d stage %d epoch %d: last batch loss %.4f", shard, stage, epoch, loss)
    return params, adam


def run_stages(
    data: WindowSet,
    plan: ShardSlicePlan,
    start: Checkpoint,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    seed_root: int,
    removed: Iterable[int] = (),
    on_checkpoint: Callable[[Checkpoint], None] | None = None,
) -> list[Checkpoint]:
    """Continue a shard from ``start`` through the last stage; return new checkpoints."""
    shard = start.shard
    removed = frozenset(removed)
    epochs = stage_epochs(tcfg.epochs_total, plan.slices_per_shard)
    params = {k: v.copy() for k, v in start.params.items()}
    lstm.check_params(params, cfg)
    adam = start.adam.copy()
    out = []
    for stage in range(start.stage + 1, plan.slices_per_shard + 1):
        idx = stage_indices(data, plan, shard, stage, removed)
        params, adam = _train_stage(data, idx, params, adam, cfg, tcfg, seed_root, shard, stage, epochs[stage - 1])
        ckpt = Checkpoint(shard, stage, params, adam.copy(), RngCursor(seed_root, stage + 1, 0, adam.t))
        if on_checkpoint is not None:
            on_checkpoint(ckpt)
        out.append(ckpt)
    return out


def train_shard(
    data: WindowSet,
    plan: ShardSlicePlan,
    shard: int,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    seed_root: int,
    removed: Iterable[int] = (),
    store: CheckpointStore | None = None,
) -> tuple[ConstituentModel, list[Checkpoint]]:
    """Train one shard from initialization; returns the model and checkpoints ``0..R``."""
    _check_data(data, plan, shard)
    removed = frozenset(removed)
    ckpt0 = initial_checkpoint(shard, cfg, seed_root)
    save = store.save if store is not None else None
    if save:
        save(ckpt0)
    ckpts = [ckpt0] + run_stages(data, plan, ckpt0, cfg, tcfg, seed_root, removed, save)
    model = ConstituentModel(shard, ckpts[-1].params, cfg, fingerprint(data, plan, shard, removed))
    return model, ckpts


def oracle_retrain(
    data: WindowSet,
    plan: ShardSlicePlan,
    shard: int,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    seed_root: int,
    removed: Iterable[int],
) -> tuple[ConstituentModel, list[Checkpoint]]:
    """Reference: train ``shard`` from scratch with ``removed`` excluded from every stage."""
    return train_shard(data, plan, shard, cfg, tcfg, seed_root, removed)


def train_ensemble(
    data: WindowSet,
    plan: ShardSlicePlan,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    seed_root: int,
    removed: Iterable[int] = (),
    store: CheckpointStore | None = None,
    workers: int = 1,
) -> tuple[dict[int, ConstituentModel], dict[int, list[Checkpoint]]]:
    """Train every shard; results do not depend on ``workers``."""
    removed = frozenset(removed)
    shards = range(plan.num_shards)

    def one(s):
        return train_shard(data, plan, s, cfg, tcfg, seed_root, removed, store)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, shards))
    else:
        results = [one(s) for s in shards]
    return {s: m for s, (m, _) in zip(shards, results)}, {s: c for s, (_, c) in zip(shards, results)}


# --------------------------------------------------------------------------
# unlearning


def unlearn(
    request: Iterable[int],
    models: Mapping[int, ConstituentModel],
    checkpoints: Mapping[int, Sequence[Checkpoint | None]] | CheckpointStore,
    data: WindowSet,
    plan: ShardSlicePlan,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    seed_root: int,
    store: CheckpointStore | None = None,
) -> UnlearnResult:
    """Remove ``request`` condition ids by retraining affected shards from their earliest affected slice.

    Unaffected shards are returned as the very same objects. A shard whose
    resume checkpoint is missing or corrupt is retrained from initialization
    and flagged in the report.
    """
    request = sorted(set(int(c) for c in request))
    if not request:
        raise ValueError("unlearn request must name at least one condition")
    present = {c for m in models.values() for c in m.fingerprint.retained_conditions}
    absent = [c for c in request if c not in present]
    affected = locate_affected(request, plan)
    if absent:
        raise ValueError(f"conditions not present in the trained models: {absent}")
    removed = (set(plan.assignment) - present) | set(request)

    new_models = dict(models)
    new_ckpts: dict[int, list[Checkpoint | None]] = {}
    report = UnlearnReport(affected)
    epochs = stage_epochs(tcfg.epochs_total, plan.slices_per_shard)
    for shard, r_star in affected.items():
        t0 = time.perf_counter()
        if isinstance(checkpoints, CheckpointStore):
            chain = [checkpoints.load(shard, r) for r in range(r_star)]
        else:
            chain = list(checkpoints.get(shard, []))[:r_star]
        resume = chain[r_star - 1] if len(chain) == r_star else None
        fallback = resume is None or resume.shard != shard or resume.stage != r_star - 1
        if fallback:
            log.warning("shard %d: checkpoint %d unavailable, retraining from initialization", shard, r_star - 1)
            start = initial_checkpoint(shard, cfg, seed_root)
            kept: list[Checkpoint | None] = [start]
            if store is not None:
                store.save(start)
        else:
            start = resume
            kept = list(chain)
        save = store.save if store is not None else None
        fresh = run_stages(data, plan, start, cfg, tcfg, seed_root, removed, save)
        elapsed = time.perf_counter() - t0
        chain_out = kept + fresh
        new_ckpts[shard] = chain_out
        new_models[shard] = ConstituentModel(shard, chain_out[-1].params, cfg, fingerprint(data, plan, shard, removed))
        stages = [c.stage for c in fresh]
        report.runs[shard] = ShardRun(
            shard, start.stage + 1, stages, sum(epochs[r - 1] for r in stages), elapsed, fallback
        )
    return UnlearnResult(new_models, new_ckpts, report)


# --------------------------------------------------------------------------
# aggregation


def aggregate_predict(models: Sequence[ConstituentModel], x: np.ndarray, batch_size: int = 1024) -> EnsemblePrediction:
    """Average per-shard softmax probabilities; ties go to the lowest class index.

    ``x`` is one window ``(T, D)`` or a batch ``(N, T, D)``.
    """
    models = list(models)
    if not models:
        raise ValueError("need at least one constituent model")
    cfg = models[0].config
    if any(m.config != cfg for m in models):
        raise ValueError("constituent models have different configurations")
    single = np.ndim(x) == 2
    xb = np.asarray(x)[None] if single else np.asarray(x)
    per = np.stack([lstm.predict_proba(m.params, xb, cfg, batch_size) for m in models])
    agg, label = aggregate_probabilities(per)
    if single:
        return EnsemblePrediction(per[:, 0], agg[0], int(label[0]))
    return EnsemblePrediction(per, agg, label)


def aggregate_probabilities(per_shard: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean over the leading shard axis and lowest-index argmax."""
    agg = per_shard.sum(axis=0) / per_shard.shape[0]
    return agg, np.argmax(agg, axis=-1)
