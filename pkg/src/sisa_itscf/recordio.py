"""Text recording files and the dataset manifest.

A recording file starts with the header line
``itscf-v1,<condition_id>,<side>,<phase>,<severity>,<sample_rate>,<poisoned>``
followed by one row per sample with the six channel values written with 17
significant digits, so floats round-trip exactly and files are
byte-reproducible.
"""

from __future__ import annotations

import json
import os
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from .conditions import FaultCondition
from .signals import NUM_CHANNELS, Recording

FORMAT_TAG = "itscf-v1"
SIDE_NAMES = {"H": "HV", "L": "LV"}
_SIDE_CODES = {v: k for k, v in SIDE_NAMES.items()}


def recording_filename(condition: FaultCondition) -> str:
    return f"cond_{condition.condition_id:02d}_{condition}.csv"


def format_recording(rec: Recording) -> str:
    c = rec.condition
    header = ",".join([
        FORMAT_TAG, str(c.condition_id), SIDE_NAMES[c.side], c.phase,
        str(c.severity), str(rec.sample_rate_hz), str(int(rec.poisoned)),
    ])
    rows = [",".join(format(float(v), ".17g") for v in row) for row in rec.channels.T]
    return header + "\n" + "\n".join(rows) + "\n"


def parse_recording(text: str) -> Recording:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty recording file")
    head = lines[0].split(",")
    if len(head) != 7 or head[0] != FORMAT_TAG:
        raise ValueError(f"bad recording header {lines[0]!r}")
    _, cid, side, phase, severity, rate, poisoned = head
    if side not in _SIDE_CODES:
        raise ValueError(f"bad side {side!r} in header")
    cond = FaultCondition(_SIDE_CODES[side], phase, int(severity))
    if cond.condition_id != int(cid):
        raise ValueError(f"header condition id {cid} does not match {cond}")
    data = np.loadtxt(lines[1:], delimiter=",", dtype=np.float64, ndmin=2)
    if data.shape[1] != NUM_CHANNELS:
        raise ValueError(f"expected {NUM_CHANNELS} values per row")
    return Recording(cond, data.T.copy(), int(rate), poisoned == "1")


def write_recording(rec: Recording, directory: str | os.PathLike) -> Path:
    path = Path(directory) / recording_filename(rec.condition)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_recording(rec), encoding="ascii")
    return path


def read_recording(path: str | os.PathLike) -> Recording:
    return parse_recording(Path(path).read_text(encoding="ascii"))


def write_manifest(path: str | os.PathLike, manifest: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | os.PathLike) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
