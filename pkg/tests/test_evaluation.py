import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vaenilm.evaluation import (
    DetectionScores,
    MetricsReport,
    ScenarioResult,
    disaggregate,
    epd,
    evaluate,
    f1_from,
    mae,
    mae_on,
    prf1,
    recombine_median,
    states,
    welch_t,
)
from vaenilm.ndkernel import ContractError
from vaenilm.pipeline import APPLIANCES, PowerTrace, StandardizationStats
from vaenilm.vae import ModelConfig, VaeNilm

DELTAS = (50.0, 2000.0, 200.0, 20.0, 10.0)


def fixture(seed, n=10_000):
    """Random truth/prediction pair with ON bursts, noise and a sprinkling of masked samples."""
    rng = np.random.default_rng(seed)
    delta = DELTAS[seed % len(DELTAS)]
    truth = np.zeros(n)
    for _ in range(rng.integers(5, 40)):
        s = rng.integers(0, n)
        truth[s:s + rng.integers(1, 400)] = rng.uniform(0.5, 3.0) * delta
    pred = np.maximum(truth + rng.normal(0, 0.3 * delta, n), 0)
    pred[rng.random(n) < 0.02] = 0.0
    mask = rng.random(n) < 0.05
    return pred, truth, mask, delta


# ---------------------------------------------------------------------------
# worked examples


def test_mae_examples():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0
    assert mae([10, 20, 30], [0, 20, 40]) == pytest.approx(20 / 3)
    assert mae([10, 20, 30], [0, 20, 40], [False, False, True]) == pytest.approx(5.0)
    with pytest.raises(ContractError):
        mae([1.0], [1.0], [True])
    with pytest.raises(ContractError):
        mae([1.0, 2.0], [1.0])


def test_mae_on_examples():
    assert mae_on([10, 20, 30], [0, 20, 40], 20) == pytest.approx(5.0)
    assert mae_on([10, 20], [1, 2], 20) is None
    assert mae_on([30, 40], [30, 40], 20) == 0


def test_epd_examples():
    day = 14400
    assert epd(np.zeros(day), np.full(day, 600.0)) == pytest.approx(14400.0)
    truth = np.full(2 * day, 100.0)
    pred = truth.copy()
    pred[:day] += 100 / (day * 6 / 3600)  # +100 Wh on day one
    pred[day:] -= 100 / (day * 6 / 3600)  # -100 Wh on day two
    assert epd(pred, truth) == pytest.approx(100.0)
    assert epd(truth, truth) == 0
    # trailing partial day ignored
    assert epd(np.zeros(day + 10), np.r_[np.zeros(day), np.full(10, 1e6)]) == 0
    with pytest.raises(ContractError):
        epd(np.zeros(day - 1), np.zeros(day - 1))


def test_f1_example():
    assert f1_from(0.858, 0.949) == pytest.approx(0.901, abs=5e-4)
    assert f1_from(0.0, 0.0) == 0.0


def test_prf1_examples():
    truth = np.array([0, 1, 1, 0, 1], dtype=bool)
    assert tuple(prf1(truth, truth)) == (1.0, 1.0, 1.0)
    s = prf1(np.zeros(5, dtype=bool), truth)
    assert tuple(s) == (0.0, 0.0, 0.0) and (s.tp, s.fp, s.fn) == (0, 0, 3)
    assert isinstance(s, DetectionScores)
    assert states([19.9, 20.0, 20.1], 20).tolist() == [False, True, True]


def test_welch_examples():
    t, df = welch_t([1, 2, 3], [4, 5, 6])
    assert t == pytest.approx(-3.674, abs=5e-4)
    assert df == pytest.approx(4.0)
    assert welch_t([1, 2, 4], [1, 2, 4])[0] == 0
    assert welch_t([4, 5, 6], [1, 2, 3])[0] == pytest.approx(3.674, abs=5e-4)
    with pytest.raises(ContractError):
        welch_t([1, 1], [2, 2])
    with pytest.raises(ContractError):
        welch_t([1], [2, 3])


def test_recombine_examples():
    w = np.arange(8.0).reshape(2, 1, 4)
    np.testing.assert_array_equal(recombine_median(w, [0, 4], 8), np.arange(8.0))
    both = np.stack([np.full((1, 4), 3.0), np.full((1, 4), 7.0)])
    np.testing.assert_array_equal(recombine_median(both, [0, 0], 4), np.full(4, 5.0))
    three = np.array([[[1.0]], [[9.0]], [[2.0]]])
    assert recombine_median(three, [0, 0, 0], 1).tolist() == [2.0]
    with pytest.raises(ContractError):
        recombine_median(w, [0, 5], 9)


def test_recombine_discards_padded_tail():
    w = np.ones((2, 1, 4))
    assert recombine_median(w, [0, 3], 6).shape == (6,)


# ---------------------------------------------------------------------------
# oracle equivalence


@pytest.mark.parametrize("seed", range(0, 100, 9))
def test_metrics_match_oracles(seed):
    pred, truth, mask, delta = fixture(seed)
    assert abs(mae(pred, truth, mask) - oracles.mae(pred, truth, mask)) < 1e-9
    got, want = mae_on(pred, truth, delta, mask), oracles.mae_on(pred, truth, delta, mask)
    assert (got is None and want is None) or abs(got - want) < 1e-9
    got = epd(pred, truth, mask, samples_per_day=2500)
    assert abs(got - oracles.epd(pred, truth, mask, per_day=2500)) < 1e-9
    scores = prf1(states(pred, delta), states(truth, delta), mask)
    for a, b in zip(scores, oracles.prf1(pred, truth, delta, mask)):
        assert abs(a - b) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 32 - 1), st.integers(0, 6))
def test_recombine_matches_brute_force(T, S_raw, seed, extra):
    S = (S_raw - 1) % T + 1
    rng = np.random.default_rng(seed)
    length = T + rng.integers(0, 30)
    n = -(-(length - T) // S) + 1
    origins = list(np.arange(n) * S)
    # extra randomly placed windows give uneven coverage counts
    origins += list(rng.integers(0, length, extra))
    windows = rng.normal(size=(len(origins), T)).round(1)  # repeated values exercise ties
    got = recombine_median(windows[:, None, :], origins, length)
    want = oracles.median_recombine(list(windows), origins, length)
    np.testing.assert_array_equal(got, want)


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12),
       st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12))
def test_welch_matches_oracle(a, b):
    if np.var(a) + np.var(b) < 1e-6:
        return
    t, df = welch_t(a, b)
    t_ref, df_ref = oracles.welch(a, b)
    assert t == pytest.approx(t_ref, rel=1e-9, abs=1e-9)
    assert df == pytest.approx(df_ref, rel=1e-9)
    assert welch_t(b, a)[0] == pytest.approx(-t, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=60)
@given(st.integers(0, 2 ** 32 - 1))
def test_mae_is_convex_combination_of_on_and_off(seed):
    pred, truth, _, delta = fixture(seed % 1000, n=500)
    total = mae(pred, truth)
    on = mae_on(pred, truth, delta)
    off_mask = truth >= delta
    parts = [v for v in (on, mae(pred, truth, off_mask) if not off_mask.all() else None) if v is not None]
    assert on is None or on >= 0
    assert total <= max(parts) + 1e-9
    assert total >= min(parts) - 1e-9


def test_epd_permutation_within_day_and_cross_day_sensitivity():
    rng = np.random.default_rng(0)
    day = 14400
    truth = rng.uniform(0, 500, 2 * day)
    pred = truth + rng.normal(0, 50, 2 * day)
    base = epd(pred, truth)
    perm = np.r_[rng.permutation(day), day + rng.permutation(day)]
    assert epd(pred[perm], truth[perm]) == pytest.approx(base, rel=1e-12)
    err = np.zeros(2 * day)
    err[:100] = 600.0
    err[200:300] = -600.0  # cancels within the day
    assert epd(truth + err, truth) == pytest.approx(0.0, abs=1e-6)
    moved = np.roll(err, day - 200)  # negative block now falls on day two
    assert epd(truth + moved, truth) > 1.0


# ---------------------------------------------------------------------------
# evaluate / reports


def _trace(values, gaps=None):
    return PowerTrace(0, values, gaps)


def test_evaluate_identity_and_zero_baseline():
    rng = np.random.default_rng(1)
    truth = np.where(rng.random(20000) < 0.1, 2500.0, 0.0)
    spec = APPLIANCES["kettle"]
    r = evaluate(_trace(truth), _trace(truth), spec)
    assert r.mae == 0 and r.epd == 0 and r.f1 == 1 and r.mae_on == 0
    z = evaluate(_trace(np.zeros_like(truth)), _trace(truth), spec)
    assert z.mae == pytest.approx(truth.mean()) and z.recall == 0
    assert z.f1 == pytest.approx(f1_from(z.precision, z.recall))
    assert z.n_on == int((truth >= 2000).sum()) and z.n_samples == truth.size


def test_evaluate_masks_gaps_and_short_traces():
    spec = APPLIANCES["fridge"]
    truth = _trace([0.0, 100.0, 5000.0], [False, False, True])
    pred = _trace([0.0, 100.0, 0.0])
    r = evaluate(pred, truth, spec)
    assert r.mae == 0 and r.n_samples == 2 and r.epd is None
    with pytest.raises(ContractError):
        evaluate(pred, truth, spec, require_day=True)
    with pytest.raises(ContractError):
        evaluate(PowerTrace(6, [0.0, 0.0, 0.0]), truth, spec)


def test_report_json_keys_and_round_trip():
    r = evaluate(_trace([0.0, 60.0]), _trace([0.0, 70.0]), APPLIANCES["fridge"])
    d = r.to_dict()
    assert set(d) == {"mae_w", "mae_on_w", "epd_wh", "precision", "recall", "f1", "tp", "fp", "fn",
                      "n_on", "n_samples"}
    assert MetricsReport.from_dict(d) == r


def test_scenario_statistics_recomputed():
    reps = [evaluate(_trace([float(v), 0.0]), _trace([100.0, 0.0]), APPLIANCES["fridge"]) for v in (80, 90, 95)]
    sc = ScenarioResult(reps)
    assert sc.mean()["mae_w"] == pytest.approx(np.mean([r.mae for r in reps]))
    assert sc.std()["mae_w"] == pytest.approx(np.std([r.mae for r in reps]))
    assert sc.mean()["epd_wh"] is None
    assert ScenarioResult(reps[:1]).std()["mae_w"] == 0
    other = ScenarioResult([evaluate(_trace([float(v), 0.0]), _trace([100.0, 0.0]), APPLIANCES["fridge"])
                            for v in (40, 60, 70)])
    cmp = sc.compare(other)
    assert cmp["mae_w"]["t"] < 0 and cmp["epd_wh"] is None
    d = sc.to_dict(other)
    assert d["repetitions"] == 3 and "welch" in d


# ---------------------------------------------------------------------------
# disaggregate


def _tiny_model():
    return VaeNilm(ModelConfig(window_len=32, depth=2, latent_dim=4, channels=(4, 4, 8)), seed=1)


def test_disaggregate_invariants():
    from vaenilm.checkpoint import ModelCheckpoint

    model = _tiny_model()
    stats = StandardizationStats(300.0, 400.0, 2500.0)
    spec = APPLIANCES["kettle"]
    rng = np.random.default_rng(3)
    gaps = np.zeros(500, dtype=bool)
    gaps[100:110] = True
    agg = PowerTrace(60, rng.uniform(0, 3000, 500), gaps)
    a = disaggregate(model, agg, spec, stride=8, stats=stats)
    b = disaggregate(model, agg, spec, stride=8, stats=stats)
    assert len(a) == len(agg) and a.start_time == agg.start_time
    assert np.array_equal(a.values, b.values)
    assert a.values.min() >= 0
    np.testing.assert_array_equal(a.gap_mask, gaps)
    assert not a.values[gaps].any()
    ckpt = ModelCheckpoint.from_model(model, stats, spec, seed=0)
    c = disaggregate(ckpt, agg, spec, stride=8)
    np.testing.assert_allclose(c.values, a.values, rtol=1e-5, atol=1e-3)
    with pytest.raises(ContractError):
        disaggregate(model, PowerTrace(0, np.zeros(20)), spec, stride=8, stats=stats)
    with pytest.raises(ContractError):
        disaggregate(model, agg, spec, stride=8)
