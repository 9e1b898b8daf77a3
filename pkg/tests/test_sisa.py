import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sisa_itscf import lstm
from sisa_itscf.checkpoint import CheckpointStore
from sisa_itscf.conditions import FaultCondition
from sisa_itscf.plan import plan_shards
from sisa_itscf.sisa import (
    ConstituentModel,
    aggregate_predict,
    aggregate_probabilities,
    fingerprint,
    oracle_retrain,
    stage_indices,
    train_ensemble,
    unlearn,
)

from conftest import TINY_MODEL, TINY_TRAIN

SEED = 5


def _same(a, b):
    return all(a[k].tobytes() == b[k].tobytes() for k in lstm.PARAM_NAMES)


@pytest.fixture(scope="module")
def trained(tiny_data):
    plan = plan_shards(2)
    models, ckpts = train_ensemble(tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED)
    return plan, models, ckpts


def test_stage_indices_are_cumulative_and_sorted(tiny_data):
    plan = plan_shards(2)
    prev = set()
    for r in range(1, 5):
        idx = stage_indices(tiny_data, plan, 1, r)
        keys = list(zip(tiny_data.condition_ids[idx], tiny_data.window_starts[idx]))
        assert keys == sorted(keys)
        assert prev < set(idx.tolist())
        prev = set(idx.tolist())
        assert set(tiny_data.condition_ids[idx].tolist()) == set(plan.conditions_in(1, range(1, r + 1)))


def test_training_is_deterministic_and_worker_independent(tiny_data, trained):
    plan, models, ckpts = trained
    again, _ = train_ensemble(tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED, workers=2)
    for s in models:
        assert _same(models[s].params, again[s].params)
    assert [c.stage for c in ckpts[0]] == [0, 1, 2, 3, 4]
    assert ckpts[0][-1].cursor.draws == ckpts[0][-1].adam.t > 0


def test_storage_order_does_not_matter(tiny_data, trained):
    plan, models, _ = trained
    perm = np.random.default_rng(1).permutation(len(tiny_data))
    shuffled, _ = train_ensemble(tiny_data.take(perm), plan, TINY_MODEL, TINY_TRAIN, SEED)
    assert _same(models[1].params, shuffled[1].params)


@pytest.mark.parametrize("names", [["LA1"], ["HB3"], ["HA1", "HB4", "LC1"], ["HA1", "LC5"]])
def test_unlearn_equals_oracle(tiny_data, trained, names):
    plan, models, ckpts = trained
    removed = [FaultCondition.parse(n).condition_id for n in names]
    res = unlearn(removed, models, ckpts, tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED)
    affected = {plan.shard_of(c) for c in removed}
    for s in range(plan.num_shards):
        if s in affected:
            oracle, oracle_ckpts = oracle_retrain(tiny_data, plan, s, TINY_MODEL, TINY_TRAIN, SEED, removed)
            assert _same(res.models[s].params, oracle.params)
            assert res.checkpoints[s][-1].to_bytes() == oracle_ckpts[-1].to_bytes()
            assert res.models[s].fingerprint == oracle.fingerprint
        else:
            assert res.models[s] is models[s]
    r_star = min(plan.slice_of(c) for c in removed if plan.shard_of(c) == min(affected))
    assert res.report.runs[min(affected)].start_stage == r_star
    assert not res.report.fallbacks


def test_unlearn_reuses_earlier_checkpoints(tiny_data, trained):
    plan, models, ckpts = trained
    hb3 = FaultCondition.parse("HB3").condition_id
    res = unlearn([hb3], models, ckpts, tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED)
    run = res.report.runs[plan.shard_of(hb3)]
    assert run.stages == [3, 4]
    assert run.stage_epochs == 2
    for r in range(3):
        assert res.checkpoints[0][r] is ckpts[0][r]


def test_sequential_unlearning_matches_joint_oracle(tiny_data, trained):
    plan, models, ckpts = trained
    a, b = FaultCondition.parse("LB2").condition_id, FaultCondition.parse("HC1").condition_id
    first = unlearn([a], models, ckpts, tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED)
    chains = {**ckpts, **first.checkpoints}
    second = unlearn([b], first.models, chains, tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED)
    oracle, _ = oracle_retrain(tiny_data, plan, 0, TINY_MODEL, TINY_TRAIN, SEED, [a, b])
    assert _same(second.models[0].params, oracle.params)


def test_missing_checkpoint_falls_back_to_scratch(tiny_data, trained, tmp_path):
    plan, models, ckpts = trained
    store = CheckpointStore(tmp_path)
    for chain in ckpts.values():
        for c in chain:
            store.save(c)
    hb3 = FaultCondition.parse("HB3").condition_id
    p = store.path(0, 2)
    p.write_bytes(p.read_bytes()[:-1] + b"\x00")
    res = unlearn([hb3], models, store, tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED, store=store)
    assert res.report.fallbacks == [0]
    assert res.report.runs[0].stages == [1, 2, 3, 4]
    oracle, _ = oracle_retrain(tiny_data, plan, 0, TINY_MODEL, TINY_TRAIN, SEED, [hb3])
    assert _same(res.models[0].params, oracle.params)
    assert store.load(0, 4).to_bytes() == res.checkpoints[0][-1].to_bytes()


def test_unlearn_request_validation(tiny_data, trained):
    plan, models, ckpts = trained
    with pytest.raises(ValueError):
        unlearn([], models, ckpts, tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED)
    la1 = FaultCondition.parse("LA1").condition_id
    res = unlearn([la1], models, ckpts, tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED)
    with pytest.raises(ValueError, match="not present"):
        unlearn([la1], res.models, {**ckpts, **res.checkpoints}, tiny_data, plan, TINY_MODEL, TINY_TRAIN, SEED)


def test_training_rejects_data_missing_a_condition(tiny_data):
    plan = plan_shards(1)
    data = tiny_data.take(np.flatnonzero(tiny_data.condition_ids != 3))
    with pytest.raises(ValueError):
        train_ensemble(data, plan, TINY_MODEL, TINY_TRAIN, 0)


def test_fingerprint_tracks_retained_conditions(tiny_data):
    plan = plan_shards(2)
    full = fingerprint(tiny_data, plan, 0)
    less = fingerprint(tiny_data, plan, 0, [0])
    assert 0 in full.retained_conditions and 0 not in less.retained_conditions
    assert full.window_hash != less.window_hash


# --------------------------------------------------------------------------
# aggregation


def _models(S, seed=0):
    rng = np.random.default_rng(seed)
    return [ConstituentModel(s, lstm.init_params(TINY_MODEL, rng), TINY_MODEL, None) for s in range(S)]


@pytest.mark.parametrize("S", [1, 2, 4])
def test_aggregation_sums_to_one(S):
    x = np.random.default_rng(S).standard_normal((200, TINY_MODEL.window_len, 6)) * 3
    pred = aggregate_predict(_models(S), x, batch_size=64)
    assert pred.per_shard.shape == (S, 200, 6)
    np.testing.assert_allclose(pred.per_shard.sum(axis=-1), 1, atol=1e-12)
    np.testing.assert_allclose(pred.probabilities.sum(axis=-1), 1, atol=1e-12)
    np.testing.assert_array_equal(pred.label, pred.probabilities.argmax(axis=-1))


def test_single_model_aggregation_is_its_softmax():
    models = _models(1)
    x = np.random.default_rng(0).standard_normal((50, TINY_MODEL.window_len, 6))
    pred = aggregate_predict(models, x)
    direct = lstm.softmax(lstm.predict_logits(models[0].params, x, TINY_MODEL))
    assert pred.probabilities.tobytes() == direct.tobytes()


def test_single_window_input():
    models = _models(2)
    x = np.random.default_rng(0).standard_normal((TINY_MODEL.window_len, 6))
    pred = aggregate_predict(models, x)
    assert isinstance(pred.label, int) and pred.probabilities.shape == (6,)


def test_ties_go_to_lowest_index():
    per = np.array([[[0.5, 0.0, 0.5, 0, 0, 0]], [[0.0, 0.5, 0.0, 0.5, 0, 0]]])
    agg, label = aggregate_probabilities(per)
    np.testing.assert_array_equal(agg[0], [0.25, 0.25, 0.25, 0.25, 0, 0])
    assert label[0] == 0
    agg, label = aggregate_probabilities(np.full((4, 1, 6), 1 / 6))
    assert label[0] == 0


@given(arrays(np.float64, (3, 4, 6), elements=st.floats(0.01, 1.0)), st.integers(1, 6))
def test_aggregation_is_order_and_scale_invariant(raw, k):
    per = raw / raw.sum(axis=-1, keepdims=True)
    agg, label = aggregate_probabilities(per)
    agg2, _ = aggregate_probabilities(per[::-1])
    np.testing.assert_allclose(agg, agg2, atol=1e-15)
    rep, _ = aggregate_probabilities(np.tile(per, (k, 1, 1)))
    np.testing.assert_allclose(rep, agg, atol=1e-15)
    np.testing.assert_allclose(agg.sum(axis=-1), 1, atol=1e-12)


def test_aggregation_rejects_mixed_configs():
    a = _models(1)[0]
    other_cfg = TINY_MODEL.__class__(lstm1_hidden=5, lstm2_hidden=3, fc_hidden=5, window_len=6)
    b = ConstituentModel(1, lstm.init_params(other_cfg, np.random.default_rng(0)), other_cfg, None)
    with pytest.raises(ValueError):
        aggregate_predict([a, b], np.zeros((1, 6, 6)))
    with pytest.raises(ValueError):
        aggregate_predict([], np.zeros((1, 6, 6)))
