"""Assignment of fault conditions to shards and label-balanced slices."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .conditions import CLASS_NAMES, NUM_CONDITIONS, FaultCondition, all_conditions

NUM_LABELS = len(CLASS_NAMES)
STRATEGIES = ("severity_grouped", "uniform")


@dataclass(frozen=True)
class ShardSlicePlan:
    num_shards: int
    slices_per_shard: int
    assignment: dict[int, tuple[int, int]]  # condition id -> (shard, 1-based slice)
    strategy: str = "severity_grouped"

    def conditions_in(self, shard: int, slices: Iterable[int] | None = None) -> list[int]:
        """Sorted condition ids of ``shard``, optionally restricted to ``slices``."""
        wanted = None if slices is None else set(slices)
        return sorted(
            cid for cid, (s, r) in self.assignment.items()
            if s == shard and (wanted is None or r in wanted)
        )

    def shard_of(self, condition_id: int) -> int:
        return self.assignment[condition_id][0]

    def slice_of(self, condition_id: int) -> int:
        return self.assignment[condition_id][1]

    def validate(self) -> None:
        if sorted(self.assignment) != list(range(NUM_CONDITIONS)):
            raise ValueError("every condition must be assigned exactly once")
        for s in range(self.num_shards):
            for r in range(1, self.slices_per_shard + 1):
                labels = sorted(FaultCondition.from_id(c).label for c in self.conditions_in(s, [r]))
                if labels != list(range(NUM_LABELS)):
                    raise ValueError(f"shard {s} slice {r} is not label balanced: {labels}")


def default_slices(num_shards: int) -> int:
    return NUM_CONDITIONS // (NUM_LABELS * num_shards)


def plan_shards(
    num_shards: int,
    slices_per_shard: int | None = None,
    strategy: str = "severity_grouped",
    conditions: Sequence[FaultCondition] | None = None,
    seed: int = 0,
) -> ShardSlicePlan:
    """Split the 48 conditions into ``num_shards`` shards of label-balanced slices.

    ``severity_grouped`` cuts contiguous severity blocks, so shards have
    disjoint severity sets. ``uniform`` deals each label's conditions to
    shards in a seeded random order. Inside a shard, slice ``k`` takes the
    ``k``-th lowest-severity condition of every label.
    """
    conditions = list(conditions) if conditions is not None else all_conditions()
    if sorted(c.condition_id for c in conditions) != list(range(NUM_CONDITIONS)):
        raise ValueError("plan_shards needs all 48 conditions exactly once")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    per_label_total = NUM_CONDITIONS // NUM_LABELS
    if num_shards < 1 or per_label_total % num_shards:
        raise ValueError(
            f"number of shards must divide the {per_label_total} conditions of each label, got {num_shards}"
        )
    per_label = per_label_total // num_shards
    r_default = per_label
    if slices_per_shard is None:
        slices_per_shard = r_default
    if slices_per_shard != r_default:
        raise ValueError(
            f"one condition per label per slice forces R = {r_default} for S = {num_shards}, "
            f"got R = {slices_per_shard}"
        )

    by_label: dict[int, list[FaultCondition]] = {k: [] for k in range(NUM_LABELS)}
    for c in conditions:
        by_label[c.label].append(c)
    shard_members: dict[int, list[FaultCondition]] = {s: [] for s in range(num_shards)}
    if strategy == "severity_grouped":
        ordered = sorted(conditions, key=lambda c: (c.severity, c.label))
        block = NUM_CONDITIONS // num_shards
        for i, c in enumerate(ordered):
            shard_members[i // block].append(c)
    else:
        rng = np.random.default_rng(seed)
        for label in range(NUM_LABELS):
            members = sorted(by_label[label], key=lambda c: c.severity)
            order = rng.permutation(len(members))
            for j, k in enumerate(order):
                shard_members[j % num_shards].append(members[k])

    assignment: dict[int, tuple[int, int]] = {}
    for s, members in shard_members.items():
        for label in range(NUM_LABELS):
            ranked = sorted((c for c in members if c.label == label), key=lambda c: c.severity)
            for k, c in enumerate(ranked, start=1):
                assignment[c.condition_id] = (s, k)
    plan = ShardSlicePlan(num_shards, slices_per_shard, assignment, strategy)
    plan.validate()
    return plan


def locate_affected(removed: Iterable[int], plan: ShardSlicePlan) -> dict[int, int]:
    """Map each shard holding a removed condition to its earliest affected slice."""
    removed = list(removed)
    if not removed:
        raise ValueError("unlearn request must name at least one condition")
    out: dict[int, int] = {}
    for cid in removed:
        if cid not in plan.assignment:
            raise ValueError(f"unknown condition id {cid}")
        s, r = plan.assignment[cid]
        out[s] = min(out.get(s, r), r)
    return dict(sorted(out.items()))
