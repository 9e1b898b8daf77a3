import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sisa_itscf import lstm
from sisa_itscf.checkpoint import Checkpoint, CheckpointError, CheckpointStore, RngCursor, fnv1a_64
from sisa_itscf.optim import AdamState
from sisa_itscf.rng import RngStream

from conftest import TINY_MODEL


@pytest.mark.parametrize("data,expected", [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
])
def test_fnv1a_reference_vectors(data, expected):
    assert fnv1a_64(data) == expected


def _checkpoint(seed, shard=1, stage=2):
    rng = np.random.default_rng(seed)
    params = lstm.init_params(TINY_MODEL, rng)
    adam = AdamState({k: rng.standard_normal(v.shape) for k, v in params.items()},
                     {k: rng.random(v.shape) for k, v in params.items()}, 7)
    return Checkpoint(shard, stage, params, adam, RngCursor(seed, stage + 1, 0, 7))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 7), st.integers(0, 8))
def test_roundtrip_is_byte_identical(seed, shard, stage):
    ck = _checkpoint(seed, shard, stage)
    raw = ck.to_bytes()
    back = Checkpoint.from_bytes(raw)
    assert back.to_bytes() == raw
    assert (back.shard, back.stage, back.cursor, back.adam.t) == (shard, stage, ck.cursor, 7)
    for k in lstm.PARAM_NAMES:
        assert back.params[k].tobytes() == ck.params[k].tobytes()


def test_negative_zero_and_subnormals_survive():
    ck = _checkpoint(0)
    ck.params["fc2.b"][:3] = [-0.0, 5e-324, np.finfo(float).max]
    back = Checkpoint.from_bytes(ck.to_bytes())
    assert back.params["fc2.b"][:3].tobytes() == ck.params["fc2.b"][:3].tobytes()


def test_any_flipped_byte_is_detected():
    raw = bytearray(_checkpoint(3).to_bytes())
    rng = np.random.default_rng(0)
    for pos in rng.choice(len(raw), 40, replace=False):
        bad = bytearray(raw)
        bad[pos] ^= 0x10
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(bytes(bad))


def test_truncation_is_detected():
    raw = _checkpoint(3).to_bytes()
    for n in (0, 10, len(raw) - 1):
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(raw[:n])


def test_cursor_must_match_adam_step():
    ck = _checkpoint(1)
    bad = Checkpoint(ck.shard, ck.stage, ck.params, ck.adam, RngCursor(1, 3, 0, 8))
    with pytest.raises(CheckpointError):
        bad.to_bytes()


def test_store_roundtrip_and_corruption(tmp_path):
    store = CheckpointStore(tmp_path)
    ck = _checkpoint(5, shard=0, stage=1)
    path = store.save(ck)
    assert path == tmp_path / "shard_0" / "stage_1.ckpt"
    assert store.load(0, 1).to_bytes() == ck.to_bytes()
    assert store.load(0, 2) is None
    data = bytearray(path.read_bytes())
    data[100] ^= 1
    path.write_bytes(bytes(data))
    assert store.load(0, 1) is None
    assert [c is None for c in store.load_shard(0, 2)] == [True, True, True]
    assert not list(tmp_path.glob("**/*.tmp"))


def test_rng_streams_are_keyed():
    a = RngStream(3, "shuffle", 1, 2, 0).generator().random(4)
    b = RngStream(3, "shuffle", 1, 2, 0).generator().random(4)
    np.testing.assert_array_equal(a, b)
    others = [
        RngStream(4, "shuffle", 1, 2, 0), RngStream(3, "dropout", 1, 2, 0), RngStream(3, "shuffle", 0, 2, 0),
        RngStream(3, "shuffle", 1, 3, 0), RngStream(3, "shuffle", 1, 2, 1),
    ]
    for s in others:
        assert not np.array_equal(s.generator().random(4), a)
    assert not np.array_equal(RngStream(3, "shuffle", 1, 2, 0).generator(1).random(4), a)
