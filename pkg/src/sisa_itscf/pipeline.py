"""Dataset assembly: generate recordings, poison some, window and split."""

from __future__ import annotations

import os
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditions import FaultCondition, all_conditions
from .config import EmiConfig, ExperimentConfig
from .dataset import DatasetSplit, split_dataset, window_recording
from .recordio import read_manifest, read_recording, recording_filename, write_manifest, write_recording
from .signals import Recording, apply_emi, generate_condition


@dataclass(frozen=True)
class Dataset:
    """Windows for training and evaluation.

    ``recordings`` are the measurements used for training and validation,
    with EMI on the poisoned conditions. ``clean`` holds the uncorrupted
    recordings; the test split always comes from these.
    """

    recordings: dict[int, Recording]
    clean: dict[int, Recording]
    split: DatasetSplit
    poisoned: tuple[int, ...]
    window_len: int
    stride: int
    split_seed: int


def generate_recordings(data_seed: int) -> dict[int, Recording]:
    return {c.condition_id: generate_condition(c, data_seed) for c in all_conditions()}


def poison_recordings(
    recordings: Mapping[int, Recording], poisoned: Iterable[int], emi: EmiConfig
) -> dict[int, Recording]:
    out = dict(recordings)
    for cid in poisoned:
        rec = out[cid]
        out[cid] = apply_emi(rec, emi.spec_for(rec.condition))
    return out


def split_recordings(
    recordings: Mapping[int, Recording],
    window_len: int,
    stride: int,
    split_seed: int,
    test_recordings: Mapping[int, Recording] | None = None,
) -> DatasetSplit:
    windows = {cid: window_recording(rec, window_len, stride) for cid, rec in recordings.items()}
    test = None
    if test_recordings is not None:
        test = {cid: window_recording(rec, window_len, stride) for cid, rec in test_recordings.items()}
    return split_dataset(windows, split_seed, test)


def assemble(
    clean: Mapping[int, Recording],
    poisoned: Iterable[int],
    emi: EmiConfig,
    window_len: int,
    stride: int,
    split_seed: int,
) -> Dataset:
    poisoned = tuple(sorted(set(poisoned)))
    recs = poison_recordings(clean, poisoned, emi)
    split = split_recordings(recs, window_len, stride, split_seed, clean)
    return Dataset(recs, dict(clean), split, poisoned, window_len, stride, split_seed)


def build_dataset(cfg: ExperimentConfig, poisoned: Iterable[int] | None = None) -> Dataset:
    """Recordings from ``cfg.data_seed`` with EMI on the poisoned training measurements."""
    poisoned = cfg.poisoned if poisoned is None else poisoned
    clean = generate_recordings(cfg.data_seed)
    return assemble(clean, poisoned, cfg.emi, cfg.model.window_len, cfg.stride, cfg.split_seed)


def manifest_for(ds: Dataset, files: Mapping[int, str], clean_files: Mapping[int, str],
                 data_seed: int | None = None) -> dict:
    return {
        "format": "itscf-dataset-v1",
        "data_seed": data_seed,
        "files": {str(cid): files[cid] for cid in sorted(files)},
        "clean_files": {str(cid): clean_files[cid] for cid in sorted(clean_files)},
        "poisoned": [str(FaultCondition.from_id(c)) for c in ds.poisoned],
        "window_len": ds.window_len,
        "stride": ds.stride,
        "split_seed": ds.split_seed,
        "split_sizes": {
            "train": len(ds.split.train), "val": len(ds.split.val), "test": len(ds.split.test),
        },
        "standardization": {
            "mean": [float(v) for v in ds.split.stats.mean],
            "std": [float(v) for v in ds.split.stats.std],
        },
    }


def write_dataset(ds: Dataset, directory: str | os.PathLike, data_seed: int | None = None) -> Path:
    """Write one file per recording plus ``manifest.json``; returns the manifest path.

    Clean recordings go in ``directory``; the EMI-corrupted versions of
    poisoned conditions go in ``directory/poisoned``.
    """
    directory = Path(directory)
    clean_files = {cid: write_recording(ds.clean[cid], directory).name for cid in sorted(ds.clean)}
    files = dict(clean_files)
    for cid in ds.poisoned:
        files[cid] = "poisoned/" + write_recording(ds.recordings[cid], directory / "poisoned").name
    return write_manifest(directory / "manifest.json", manifest_for(ds, files, clean_files, data_seed))


def load_dataset(directory: str | os.PathLike) -> Dataset:
    """Rebuild a dataset (windows, split and stats) from written recording files."""
    directory = Path(directory)
    man = read_manifest(directory / "manifest.json")
    recs = {int(cid): read_recording(directory / name) for cid, name in man["files"].items()}
    clean = {int(cid): read_recording(directory / name) for cid, name in man["clean_files"].items()}
    split = split_recordings(recs, man["window_len"], man["stride"], man["split_seed"], clean)
    poisoned = tuple(sorted(cid for cid, r in recs.items() if r.poisoned))
    if not np.array_equal(split.stats.mean, np.array(man["standardization"]["mean"])):
        raise ValueError("recordings do not reproduce the manifest's standardization stats")
    return Dataset(recs, clean, split, poisoned, man["window_len"], man["stride"], man["split_seed"])


def expected_filenames() -> list[str]:
    return [recording_filename(c) for c in all_conditions()]
