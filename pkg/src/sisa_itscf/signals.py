"""Parametric three-phase current model for inter-turn short-circuit faults.

Each recording holds six channels, HV then LV side, phases A/B/C. A channel
is a 60 Hz sinusoid at the side's nominal peak with a slow common load
modulation. The faulted channel gains a severity-scaled amplitude increase
plus 3rd/5th harmonics; the same phase on the opposite side picks up 40% of
that signature, and the remaining channels on the faulted side pick up a
smaller share (larger on LV, where the phases are deliberately similar).

EMI sensor failures are modelled separately by :func:`apply_emi`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .conditions import CLASS_NAMES, PHASES, SIDES, FaultCondition

SAMPLE_RATE_HZ = 1000
DURATION_S = 15
NUM_SAMPLES = SAMPLE_RATE_HZ * DURATION_S
NUM_CHANNELS = 6
CHANNEL_NAMES = CLASS_NAMES

F0_HZ = 60.0
PHASE_OFFSETS = (0.0, -2.0 * np.pi / 3.0, 2.0 * np.pi / 3.0)
# Peak winding currents of a 1.5 MW, 34.5 kV / 690 V step-up transformer.
NOMINAL_PEAK = {"H": 35.5, "L": 1775.0}
PHASE_BALANCE = {"H": (1.00, 0.94, 1.06), "L": (1.00, 1.01, 0.99)}

FAULT_AMPLITUDE_PER_SEVERITY = 0.04
FAULT_H3_PER_SEVERITY = 0.015
FAULT_H5_PER_SEVERITY = 0.008
CROSS_SIDE_COUPLING = 0.40
SAME_SIDE_COUPLING = {"H": 0.05, "L": 0.25}
NOISE_FLOOR = 0.005
LOAD_MODULATION_DEPTH = 0.02


def channel_index(side: str, phase: str) -> int:
    return SIDES.index(side) * 3 + PHASES.index(phase)


def nominal_peaks() -> np.ndarray:
    """Per-channel nominal peak amplitude, shape (6,)."""
    return np.array([NOMINAL_PEAK[s] for s in SIDES for _ in PHASES])


@dataclass(frozen=True)
class Recording:
    condition: FaultCondition
    channels: np.ndarray  # (6, n_samples), amperes
    sample_rate_hz: int = SAMPLE_RATE_HZ
    poisoned: bool = False

    def __post_init__(self) -> None:
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != NUM_CHANNELS:
            raise ValueError(f"expected (6, n) channel array, got {ch.shape}")
        if not np.all(np.isfinite(ch)):
            raise ValueError("recording contains non-finite samples")
        ch.flags.writeable = False
        object.__setattr__(self, "channels", ch)

    @property
    def num_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    @property
    def condition_id(self) -> int:
        return self.condition.condition_id

    @property
    def label(self) -> int:
        return self.condition.label


def _coupling(condition: FaultCondition, side: str, phase: str) -> float:
    if side == condition.side and phase == condition.phase:
        return 1.0
    if phase == condition.phase:
        return CROSS_SIDE_COUPLING
    if side == condition.side:
        return SAME_SIDE_COUPLING[side]
    return 0.0


def generate_condition(
    condition: FaultCondition,
    seed: int,
    num_samples: int = NUM_SAMPLES,
    sample_rate_hz: int = SAMPLE_RATE_HZ,
) -> Recording:
    """Simulate one 15 s recording for ``condition``.

    Deterministic in ``(condition, seed)``.
    """
    rng = np.random.default_rng([int(seed), condition.condition_id])
    t = np.arange(num_samples) / sample_rate_hz
    jitter = rng.uniform(-np.pi, np.pi)
    mod_freq = rng.uniform(0.1, 0.3)
    mod_phase = rng.uniform(-np.pi, np.pi)
    load = 1.0 + LOAD_MODULATION_DEPTH * np.sin(2.0 * np.pi * mod_freq * t + mod_phase)
    noise = rng.standard_normal((NUM_CHANNELS, num_samples))

    sev = condition.severity
    out = np.empty((NUM_CHANNELS, num_samples))
    for side in SIDES:
        for p, phase in enumerate(PHASES):
            ch = channel_index(side, phase)
            amp = NOMINAL_PEAK[side] * PHASE_BALANCE[side][p] * load
            theta = 2.0 * np.pi * F0_HZ * t + PHASE_OFFSETS[p] + jitter
            k = _coupling(condition, side, phase)
            wave = amp * (1.0 + k * FAULT_AMPLITUDE_PER_SEVERITY * sev) * np.sin(theta)
            if k:
                wave += amp * k * sev * (
                    FAULT_H3_PER_SEVERITY * np.sin(3.0 * theta)
                    + FAULT_H5_PER_SEVERITY * np.sin(5.0 * theta)
                )
            out[ch] = wave + NOISE_FLOOR * NOMINAL_PEAK[side] * noise[ch]
    return Recording(condition, out, sample_rate_hz)


@dataclass(frozen=True)
class EmiSpec:
    """Electromagnetic interference on a subset of CT channels.

    Relative quantities are fractions of the channel's nominal peak.
    """

    noise_std: float = 0.0
    spike_rate_hz: float = 0.0
    spike_magnitude: float = 0.0
    amplitude_bias: float = 1.0
    phase_deviation_rad: float = 0.0
    harmonic_orders: tuple[tuple[int, float], ...] = ()
    affected_channels: tuple[int, ...] = field(default=(0, 1, 2, 3, 4, 5))
    seed: int = 0
    noise_band_hz: tuple[float, float] = (100.0, 450.0)

    def __post_init__(self) -> None:
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.spike_rate_hz < 0:
            raise ValueError("spike_rate_hz must be >= 0")
        if self.spike_magnitude < 0:
            raise ValueError("spike_magnitude must be >= 0")
        if not self.amplitude_bias > 0:
            raise ValueError("amplitude_bias must be > 0")
        harmonics = tuple((int(o), float(a)) for o, a in self.harmonic_orders)
        for order, _ in harmonics:
            if order < 2:
                raise ValueError(f"harmonic order must be >= 2, got {order}")
        object.__setattr__(self, "harmonic_orders", harmonics)
        chans = tuple(int(c) for c in self.affected_channels)
        if not chans:
            raise ValueError("affected_channels must be non-empty")
        if len(set(chans)) != len(chans) or any(not 0 <= c < NUM_CHANNELS for c in chans):
            raise ValueError(f"invalid affected_channels {self.affected_channels!r}")
        object.__setattr__(self, "affected_channels", chans)


def _phase_shift(x: np.ndarray, phi: float) -> np.ndarray:
    # sin(theta + phi) = sin(theta) cos(phi) - H[sin](theta) sin(phi)
    hx = np.imag(sps.hilbert(x))
    return x * np.cos(phi) - hx * np.sin(phi)


def _band_noise(rng: np.random.Generator, n: int, fs: float, band: tuple[float, float]) -> np.ndarray:
    lo, hi = band
    sos = sps.butter(4, [lo, min(hi, 0.49 * fs)], btype="bandpass", fs=fs, output="sos")
    w = sps.sosfiltfilt(sos, rng.standard_normal(n))
    return w / w.std()


def apply_emi(recording: Recording, spec: EmiSpec) -> Recording:
    """Return a poisoned copy of ``recording`` with EMI on the affected channels.

    Perturbations are applied in a fixed order: amplitude bias, phase
    deviation, harmonics, band-limited noise, impulsive spikes. Parameters at
    their neutral values leave the channel bitwise unchanged.
    """
    fs = recording.sample_rate_hz
    n = recording.num_samples
    t = np.arange(n) / fs
    peaks = nominal_peaks()
    out = recording.channels.copy()
    for ch in spec.affected_channels:
        rng = np.random.default_rng([int(spec.seed), recording.condition_id, ch])
        x = out[ch]
        peak = peaks[ch]
        if spec.amplitude_bias != 1.0:
            x = x * spec.amplitude_bias
        if spec.phase_deviation_rad != 0.0:
            x = _phase_shift(x, spec.phase_deviation_rad)
        for order, rel in spec.harmonic_orders:
            x = x + rel * peak * np.sin(2.0 * np.pi * order * F0_HZ * t + rng.uniform(-np.pi, np.pi))
        if spec.noise_std > 0:
            x = x + spec.noise_std * peak * _band_noise(rng, n, fs, spec.noise_band_hz)
        if spec.spike_rate_hz > 0 and spec.spike_magnitude > 0:
            count = rng.poisson(spec.spike_rate_hz * n / fs)
            idx = rng.integers(0, n, size=count)
            signs = rng.choice((-1.0, 1.0), size=count)
            x = x.copy()
            np.add.at(x, idx, signs * spec.spike_magnitude * peak)
        out[ch] = x
    return replace(recording, channels=out, poisoned=True)


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))
