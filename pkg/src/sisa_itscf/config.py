"""Experiment configuration, run profiles and the flat ``key=value`` file format.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Unknown keys are errors, so typos do not silently fall back to a
default. List values are comma separated and harmonics are written as
``order:amplitude`` pairs, e.g. ``emi_harmonics = 7:0.1``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any

from .conditions import CLASS_NAMES, NUM_CONDITIONS, FaultCondition
from .lstm import ModelConfig
from .signals import NUM_CHANNELS, EmiSpec
from .sisa import TrainConfig

PROFILES = ("desk", "paper")
EMI_CHANNEL_MODES = ("mirror", "fault", "both", "all")
NUM_LABELS = len(CLASS_NAMES)

SINGLE_POISON = ("LA1",)
SIX_POISON = ("HA1", "HB5", "HC1", "LA5", "LB1", "LC5")


def parse_conditions(values) -> tuple[int, ...]:
    """Condition ids from names like ``"LA1"`` or bare ids, sorted and unique."""
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    out = set()
    for v in values:
        out.add(v if isinstance(v, int) else FaultCondition.parse(str(v)).condition_id)
    return tuple(sorted(out))


@dataclass(frozen=True)
class EmiConfig:
    """EMI magnitudes applied to every poisoned condition.

    ``channels`` picks the corrupted CT channels relative to the poisoned
    condition: ``mirror`` is the same phase on the opposite side, ``fault``
    the faulted channel itself, ``both`` the pair, ``all`` every channel.
    Explicit channel indices are also accepted.
    """

    noise_std: float = 0.08
    spike_rate_hz: float = 20.0
    spike_magnitude: float = 1.5
    amplitude_bias: float = 1.15
    phase_deviation_rad: float = 0.1
    harmonic_orders: tuple[tuple[int, float], ...] = ((7, 0.1),)
    channels: str | tuple[int, ...] = "both"
    seed: int = 2024

    def __post_init__(self) -> None:
        if isinstance(self.channels, str) and self.channels not in EMI_CHANNEL_MODES:
            raise ValueError(f"emi channels must be one of {EMI_CHANNEL_MODES} or channel indices")
        self.spec_for(FaultCondition.from_id(0))  # validates magnitudes

    def channels_for(self, condition: FaultCondition) -> tuple[int, ...]:
        fault = condition.label
        mirror = (fault + 3) % NUM_CHANNELS
        if isinstance(self.channels, tuple):
            return self.channels
        return {
            "mirror": (mirror,),
            "fault": (fault,),
            "both": tuple(sorted((fault, mirror))),
            "all": tuple(range(NUM_CHANNELS)),
        }[self.channels]

    def spec_for(self, condition: FaultCondition) -> EmiSpec:
        return EmiSpec(
            noise_std=self.noise_std,
            spike_rate_hz=self.spike_rate_hz,
            spike_magnitude=self.spike_magnitude,
            amplitude_bias=self.amplitude_bias,
            phase_deviation_rad=self.phase_deviation_rad,
            harmonic_orders=self.harmonic_orders,
            affected_channels=self.channels_for(condition),
            seed=self.seed,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str = "desk"
    shards: tuple[int, ...] = (1, 2, 4)
    slices: int | None = None
    strategy: str = "severity_grouped"
    poisoned: tuple[int, ...] = parse_conditions(SINGLE_POISON)
    emi: EmiConfig = field(default_factory=EmiConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    stride: int = 25
    data_seed: int = 7
    split_seed: int = 11
    seed: int = 0
    repeats: int = 3
    workers: int = 1
    out: str = "runs/latest"

    def __post_init__(self) -> None:
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")
        if not self.shards:
            raise ValueError("need at least one shard count")
        for s in self.shards:
            if s < 1 or (NUM_CONDITIONS // NUM_LABELS) % s:
                raise ValueError(f"shard count {s} must divide the {NUM_CONDITIONS // NUM_LABELS} conditions per label")
        for c in self.poisoned:
            if not 0 <= c < NUM_CONDITIONS:
                raise ValueError(f"unknown poisoned condition id {c}")
        if self.repeats < 1 or self.workers < 1 or self.stride < 1:
            raise ValueError("repeats, workers and stride must be positive")

    @property
    def deterministic(self) -> bool:
        return self.workers == 1

    def with_overrides(self, **kw: Any) -> ExperimentConfig:
        return apply_overrides(self, {k: str(v) for k, v in kw.items()})

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["poisoned_names"] = [str(FaultCondition.from_id(c)) for c in self.poisoned]
        return d


def desk_profile() -> ExperimentConfig:
    """Small model and non-overlapping windows; a full sweep fits on one core."""
    return ExperimentConfig(
        profile="desk",
        model=ModelConfig(lstm1_hidden=32, lstm2_hidden=16, fc_hidden=64),
        train=TrainConfig(epochs_total=16, batch_size=64, lr=1e-3),
        stride=50,
    )


def paper_profile() -> ExperimentConfig:
    """Full-size classifier and schedule."""
    return ExperimentConfig(profile="paper", model=ModelConfig(), train=TrainConfig(), stride=25)


def get_profile(name: str) -> ExperimentConfig:
    if name == "desk":
        return desk_profile()
    if name == "paper":
        return paper_profile()
    raise ValueError(f"unknown profile {name!r}; expected one of {PROFILES}")


# --------------------------------------------------------------------------
# key=value files


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _harmonics(v: str) -> tuple[tuple[int, float], ...]:
    out = []
    for item in v.split(","):
        item = item.strip()
        if not item:
            continue
        order, _, amp = item.partition(":")
        if not amp:
            raise ValueError(f"harmonic {item!r} must be written order:amplitude")
        out.append((int(order), float(amp)))
    return tuple(out)


def _channels(v: str) -> str | tuple[int, ...]:
    v = v.strip()
    return v if v in EMI_CHANNEL_MODES else _ints(v)


def _optional_int(v: str) -> int | None:
    return None if v.strip().lower() in ("", "none", "auto") else int(v)


# key -> (section, attribute, parser); section None means ExperimentConfig itself
_KEYS: dict[str, tuple[str | None, str, Any]] = {
    "shards": (None, "shards", _ints),
    "slices": (None, "slices", _optional_int),
    "strategy": (None, "strategy", str),
    "poisoned": (None, "poisoned", parse_conditions),
    "stride": (None, "stride", int),
    "data_seed": (None, "data_seed", int),
    "split_seed": (None, "split_seed", int),
    "seed": (None, "seed", int),
    "repeats": (None, "repeats", int),
    "workers": (None, "workers", int),
    "out": (None, "out", str),
    "window_len": ("model", "window_len", int),
    "lstm1_hidden": ("model", "lstm1_hidden", int),
    "lstm2_hidden": ("model", "lstm2_hidden", int),
    "fc_hidden": ("model", "fc_hidden", int),
    "dropout_rate": ("model", "dropout_rate", float),
    "epochs": ("train", "epochs_total", int),
    "batch_size": ("train", "batch_size", int),
    "lr": ("train", "lr", float),
    "emi_noise_std": ("emi", "noise_std", float),
    "emi_spike_rate_hz": ("emi", "spike_rate_hz", float),
    "emi_spike_magnitude": ("emi", "spike_magnitude", float),
    "emi_amplitude_bias": ("emi", "amplitude_bias", float),
    "emi_phase_deviation_rad": ("emi", "phase_deviation_rad", float),
    "emi_harmonics": ("emi", "harmonic_orders", _harmonics),
    "emi_channels": ("emi", "channels", _channels),
    "emi_seed": ("emi", "seed", int),
}
CONFIG_KEYS = tuple(_KEYS)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines into a dict, rejecting unknown or repeated keys."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        if key not in _KEYS:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def apply_overrides(cfg: ExperimentConfig, values: dict[str, str]) -> ExperimentConfig:
    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {"model": {}, "train": {}, "emi": {}}
    for key, raw in values.items():
        if key not in _KEYS:
            raise ValueError(f"unknown key {key!r}")
        section, attr, parse = _KEYS[key]
        try:
            value = parse(raw)
        except ValueError as exc:
            raise ValueError(f"bad value for {key}: {raw!r} ({exc})") from None
        (top if section is None else sections[section])[attr] = value
    for name, kw in sections.items():
        if kw:
            top[name] = replace(getattr(cfg, name), **kw)
    return replace(cfg, **top)


def load_config(path: str | os.PathLike, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read(), str(path))
    return apply_overrides(base or desk_profile(), values)


def dump_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` in the key=value format accepted by :func:`load_config`."""
    lines = []
    for key, (section, attr, _) in _KEYS.items():
        value = getattr(cfg if section is None else getattr(cfg, section), attr)
        if key == "poisoned":
            value = ",".join(str(FaultCondition.from_id(c)) for c in value)
        elif key == "emi_harmonics":
            value = ",".join(f"{o}:{a!r}" for o, a in value)
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = "auto"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

