import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sisa_itscf.conditions import CLASS_NAMES, NUM_CONDITIONS, FaultCondition, all_conditions
from sisa_itscf.signals import (
    F0_HZ,
    NUM_SAMPLES,
    EmiSpec,
    Recording,
    apply_emi,
    channel_index,
    generate_condition,
    nominal_peaks,
    rms,
)

conditions = st.integers(0, NUM_CONDITIONS - 1).map(FaultCondition.from_id)


def test_condition_grid_is_a_bijection():
    conds = all_conditions()
    assert len({(c.side, c.phase, c.severity) for c in conds}) == 48
    assert [c.condition_id for c in conds] == list(range(48))
    assert {c.label_name for c in conds} == set(CLASS_NAMES)


@given(conditions)
def test_condition_roundtrips(c):
    assert FaultCondition.from_id(c.condition_id) == c
    assert FaultCondition.parse(str(c)) == c
    assert FaultCondition.parse(str(c.condition_id)) == c
    assert CLASS_NAMES[c.label] == c.label_name


@pytest.mark.parametrize("bad", ["XA1", "HD1", "HA9", "HA0", "H", "48"])
def test_condition_parse_rejects(bad):
    with pytest.raises(ValueError):
        FaultCondition.parse(bad)


def test_recording_shape_and_fundamental():
    rec = generate_condition(FaultCondition("H", "A", 1), seed=7)
    assert rec.channels.shape == (6, NUM_SAMPLES)
    assert np.all(np.isfinite(rec.channels))
    assert rec.duration_s == 15
    spec = np.abs(np.fft.rfft(rec.channels[0]))
    freqs = np.fft.rfftfreq(NUM_SAMPLES, 1 / rec.sample_rate_hz)
    assert freqs[np.argmax(spec)] == pytest.approx(F0_HZ)


def test_generation_is_deterministic():
    a = generate_condition(FaultCondition("L", "B", 4), seed=11)
    b = generate_condition(FaultCondition("L", "B", 4), seed=11)
    assert a.channels.tobytes() == b.channels.tobytes()
    c = generate_condition(FaultCondition("L", "B", 4), seed=12)
    assert not np.array_equal(a.channels, c.channels)


def test_severity_raises_fault_channel_rms():
    la = channel_index("L", "A")
    low = generate_condition(FaultCondition("L", "A", 1), seed=3)
    high = generate_condition(FaultCondition("L", "A", 8), seed=3)
    assert rms(high.channels[la]) > rms(low.channels[la])


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(["H", "L"]), st.sampled_from(["A", "B", "C"]), st.integers(0, 2**32 - 1))
def test_fault_channel_rms_nondecreasing_in_severity(side, phase, seed):
    ch = channel_index(side, phase)
    values = [rms(generate_condition(FaultCondition(side, phase, s), seed).channels[ch]) for s in range(1, 9)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def _harmonic_ratio(x, order):
    spec = np.abs(np.fft.rfft(x))
    k = int(round(F0_HZ * len(x) / 1000))
    return spec[order * k] / spec[k]


def test_fault_channel_carries_odd_harmonics():
    ch = channel_index("H", "B")
    rec = generate_condition(FaultCondition("H", "B", 8), seed=1)
    other = generate_condition(FaultCondition("L", "C", 8), seed=1)
    assert _harmonic_ratio(rec.channels[ch], 3) > 10 * _harmonic_ratio(other.channels[ch], 3)
    assert _harmonic_ratio(rec.channels[ch], 5) > 10 * _harmonic_ratio(other.channels[ch], 5)


def test_lv_classes_are_closer_than_hv_classes():
    # spread of per-channel RMS between faults on different phases, relative to nominal peak
    peaks = nominal_peaks()

    def side_spread(side):
        profiles = []
        for phase in "ABC":
            rec = generate_condition(FaultCondition(side, phase, 4), seed=5)
            profiles.append([rms(rec.channels[channel_index(side, p)]) / peaks[channel_index(side, p)]
                             for p in "ABC"])
        profiles = np.array(profiles)
        return min(np.abs(profiles[i] - profiles[j]).max() for i in range(3) for j in range(i + 1, 3))

    assert side_spread("L") < side_spread("H")


def test_recording_rejects_non_finite():
    ch = np.zeros((6, 10))
    ch[2, 3] = np.nan
    with pytest.raises(ValueError):
        Recording(FaultCondition.from_id(0), ch)


# --------------------------------------------------------------------------
# EMI


@pytest.fixture(scope="module")
def base():
    return generate_condition(FaultCondition("L", "A", 2), seed=9)


def test_neutral_emi_is_identity(base):
    out = apply_emi(base, EmiSpec(affected_channels=(0, 3, 5), seed=1))
    assert out.poisoned and not base.poisoned
    assert out.channels.tobytes() == base.channels.tobytes()


def test_pure_bias_scales_one_channel(base):
    out = apply_emi(base, EmiSpec(amplitude_bias=2.0, affected_channels=(4,)))
    np.testing.assert_array_equal(out.channels[4], 2.0 * base.channels[4])
    for ch in (0, 1, 2, 3, 5):
        assert out.channels[ch].tobytes() == base.channels[ch].tobytes()


def test_noise_std_matches_spec(base):
    ch = 3
    out = apply_emi(base, EmiSpec(noise_std=0.05, affected_channels=(ch,), seed=4))
    diff = out.channels[ch] - base.channels[ch]
    target = 0.05 * nominal_peaks()[ch]
    assert abs(diff.std() - target) < 0.1 * target


def test_phase_deviation_shifts_the_fundamental():
    rec = generate_condition(FaultCondition("H", "A", 1), seed=2)
    out = apply_emi(rec, EmiSpec(phase_deviation_rad=0.3, affected_channels=(1,)))
    k = int(round(F0_HZ * NUM_SAMPLES / 1000))
    before = np.angle(np.fft.rfft(rec.channels[1])[k])
    after = np.angle(np.fft.rfft(out.channels[1])[k])
    assert np.angle(np.exp(1j * (after - before))) == pytest.approx(0.3, abs=0.01)


def test_spikes_follow_rate(base):
    out = apply_emi(base, EmiSpec(spike_rate_hz=20.0, spike_magnitude=3.0, affected_channels=(0,), seed=3))
    big = np.abs(out.channels[0] - base.channels[0]) > 2.0 * nominal_peaks()[0]
    assert 200 <= big.sum() <= 400  # Poisson(300)


def test_harmonic_is_added_at_its_order(base):
    out = apply_emi(base, EmiSpec(harmonic_orders=((7, 0.1),), affected_channels=(2,)))
    diff = out.channels[2] - base.channels[2]
    spec = np.abs(np.fft.rfft(diff))
    freqs = np.fft.rfftfreq(len(diff), 1 / 1000)
    assert freqs[np.argmax(spec)] == pytest.approx(7 * F0_HZ)


@settings(max_examples=10, deadline=None)
@given(
    st.floats(0, 0.2), st.floats(0, 30), st.floats(0.5, 2.0), st.floats(-0.5, 0.5),
    st.sets(st.integers(0, 5), min_size=1), st.integers(0, 2**63 - 1),
)
def test_emi_locality_and_determinism(noise, rate, bias, phase, chans, seed):
    rec = generate_condition(FaultCondition.from_id(seed % 48), seed=seed % 1000)
    spec = EmiSpec(noise_std=noise, spike_rate_hz=rate, spike_magnitude=1.0, amplitude_bias=bias,
                   phase_deviation_rad=phase, harmonic_orders=((3, 0.02),), affected_channels=tuple(chans), seed=seed)
    a = apply_emi(rec, spec)
    b = apply_emi(rec, spec)
    assert a.channels.tobytes() == b.channels.tobytes()
    for ch in set(range(6)) - chans:
        assert a.channels[ch].tobytes() == rec.channels[ch].tobytes()


@pytest.mark.parametrize("kw", [
    {"affected_channels": ()}, {"affected_channels": (6,)}, {"affected_channels": (1, 1)},
    {"noise_std": -0.1}, {"spike_rate_hz": -1.0}, {"amplitude_bias": 0.0}, {"harmonic_orders": ((1, 0.1),)},
])
def test_emi_spec_validation(kw):
    with pytest.raises(ValueError):
        EmiSpec(**kw)
