"""Windowing, per-condition 4:1:1 splitting and standardization."""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .signals import Recording


@dataclass(frozen=True)
class WindowedSample:
    window: np.ndarray  # (window_len, 6)
    label: int
    condition_id: int
    window_start: int
    poisoned: bool


@dataclass(frozen=True)
class WindowSet:
    """Column-oriented collection of windows; row ``i`` is one WindowedSample."""

    x: np.ndarray  # (n, window_len, 6)
    labels: np.ndarray  # (n,) int64
    condition_ids: np.ndarray  # (n,) int64
    window_starts: np.ndarray  # (n,) int64
    poisoned: np.ndarray  # (n,) bool

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> WindowedSample:
        return WindowedSample(
            self.x[i], int(self.labels[i]), int(self.condition_ids[i]),
            int(self.window_starts[i]), bool(self.poisoned[i]),
        )

    def __iter__(self) -> Iterator[WindowedSample]:
        return (self[i] for i in range(len(self)))

    @property
    def window_len(self) -> int:
        return self.x.shape[1]

    def take(self, idx: np.ndarray) -> WindowSet:
        return WindowSet(
            self.x[idx], self.labels[idx], self.condition_ids[idx],
            self.window_starts[idx], self.poisoned[idx],
        )

    def keys(self) -> set[tuple[int, int]]:
        return set(zip(self.condition_ids.tolist(), self.window_starts.tolist()))

    @classmethod
    def empty(cls, window_len: int, channels: int = 6) -> WindowSet:
        z = np.zeros(0, dtype=np.int64)
        return cls(np.zeros((0, window_len, channels)), z, z.copy(), z.copy(), np.zeros(0, bool))

    @classmethod
    def concat(cls, parts: Sequence[WindowSet]) -> WindowSet:
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.condition_ids for p in parts]),
            np.concatenate([p.window_starts for p in parts]),
            np.concatenate([p.poisoned for p in parts]),
        )


def window_count(n: int, window_len: int, stride: int) -> int:
    if n < window_len:
        return 0
    return (n - window_len) // stride + 1


def window_recording(recording: Recording, window_len: int = 50, stride: int = 25) -> WindowSet:
    """Cut full windows starting at 0, stride, 2*stride, ..."""
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if window_len <= 0:
        raise ValueError(f"window_len must be positive, got {window_len}")
    if stride > window_len:
        raise ValueError(f"stride {stride} exceeds window_len {window_len}")
    n = recording.num_samples
    count = window_count(n, window_len, stride)
    if count == 0:
        return WindowSet.empty(window_len)
    starts = np.arange(count, dtype=np.int64) * stride
    data = recording.channels.T  # (n, 6)
    x = np.stack([data[s:s + window_len] for s in starts])
    return WindowSet(
        x,
        np.full(count, recording.label, dtype=np.int64),
        np.full(count, recording.condition_id, dtype=np.int64),
        starts,
        np.full(count, recording.poisoned, dtype=bool),
    )


def split_counts(n: int) -> tuple[int, int, int]:
    """Per-condition train/val/test sizes for a 4:1:1 split.

    Each count lies within one window of its exact share, e.g. 599 windows
    split 400/100/99 and 300 windows split 200/50/50.
    """
    if n < 6:
        raise ValueError(f"need at least 6 windows per condition, got {n}")
    train = math.ceil(4 * n / 6)
    val = math.floor(n / 6 + 0.5)
    return train, val, n - train - val


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray  # (6,)
    std: np.ndarray  # (6,)

    def apply(self, ws: WindowSet) -> WindowSet:
        x = (ws.x - self.mean) / self.std
        return WindowSet(x, ws.labels, ws.condition_ids, ws.window_starts, ws.poisoned)

    @classmethod
    def fit(cls, ws: WindowSet) -> StandardizationStats:
        flat = ws.x.reshape(-1, ws.x.shape[-1])
        std = flat.std(axis=0)
        if np.any(std == 0):
            raise ValueError("a channel has zero variance on the training set")
        return cls(flat.mean(axis=0), std)


@dataclass(frozen=True)
class DatasetSplit:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    stats: StandardizationStats


def split_dataset(
    windows: Mapping[int, WindowSet],
    shuffle_seed: int,
    test_windows: Mapping[int, WindowSet] | None = None,
) -> DatasetSplit:
    """Partition each condition's windows 4:1:1 in start order, then shuffle per subset.

    If ``test_windows`` is given, the test subset takes the same window
    positions from it instead (used to score on clean measurements while
    training on corrupted ones). Standardization statistics are fitted on
    the training subset only and applied to all three.
    """
    parts: dict[str, list[WindowSet]] = {"train": [], "val": [], "test": []}
    for cid in sorted(windows):
        ws = windows[cid]
        if len(ws) < 6:
            raise ValueError(f"condition {cid} has only {len(ws)} windows; need >= 6")
        order = np.argsort(ws.window_starts, kind="stable")
        n_train, n_val, _ = split_counts(len(ws))
        parts["train"].append(ws.take(order[:n_train]))
        parts["val"].append(ws.take(order[n_train:n_train + n_val]))
        test = ws.take(order[n_train + n_val:])
        if test_windows is not None:
            alt = test_windows[cid]
            pos = {int(s): i for i, s in enumerate(alt.window_starts)}
            try:
                test = alt.take(np.array([pos[int(s)] for s in test.window_starts], dtype=np.int64))
            except KeyError:
                raise ValueError(f"condition {cid}: test windows do not cover the same positions") from None
        parts["test"].append(test)

    subsets = {}
    for k, name in enumerate(("train", "val", "test")):
        ws = WindowSet.concat(parts[name])
        perm = np.random.default_rng([int(shuffle_seed), k]).permutation(len(ws))
        subsets[name] = ws.take(perm)
    stats = StandardizationStats.fit(subsets["train"])
    return DatasetSplit(
        stats.apply(subsets["train"]), stats.apply(subsets["val"]), stats.apply(subsets["test"]), stats
    )
