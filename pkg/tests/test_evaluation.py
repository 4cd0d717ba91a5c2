import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dyndiff.data import synth_generate
from dyndiff.evaluation import (
    EvalReport,
    climatology_ensembles,
    comparison_rows,
    crps,
    crps_ensemble,
    histogram_table,
    mae,
    mse,
    oracle_ensembles,
    point_forecast,
    score,
    summarize_trials,
    two_modes,
)
from dyndiff.pipeline import evaluate_frame, fit

from conftest import tiny_config

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def crps_by_integration(samples, x, n=100_000):
    """Midpoint rule for the integral of (F(y) - 1{y >= x})^2 with the empirical step CDF."""
    samples = np.sort(np.asarray(samples, dtype=np.float64))
    lo, hi = min(samples[0], x) - 1.0, max(samples[-1], x) + 1.0
    h = (hi - lo) / n
    y = lo + h * (np.arange(n) + 0.5)
    F = np.searchsorted(samples, y, side="right") / len(samples)
    return float(((F - (y >= x)) ** 2).sum() * h)


def test_crps_single_sample_is_absolute_error():
    assert crps([2.5], -1.0) == 3.5
    rng = np.random.default_rng(0)
    s, x = rng.standard_normal((1, 3, 4)), rng.standard_normal((3, 4))
    np.testing.assert_array_equal(crps_ensemble(s, x), np.abs(s[0] - x))


def test_crps_two_point_value():
    assert crps([0.0, 1.0], 0.0) == pytest.approx(0.25, abs=1e-15)
    assert crps_by_integration([0.0, 1.0], 0.0) == pytest.approx(0.25, abs=1e-4)


def test_crps_all_equal_is_zero():
    assert crps([1.7] * 9, 1.7) == 0.0


def test_crps_matches_integration_on_random_cases():
    rng = np.random.default_rng(42)
    for _ in range(100):
        K = int(rng.integers(1, 30))
        samples = rng.normal(rng.normal(0, 2), rng.uniform(0.1, 3), K)
        x = rng.normal(0, 2)
        assert crps(samples, x) == pytest.approx(crps_by_integration(samples, x), abs=1e-4)


def test_crps_empty_is_error():
    with pytest.raises(ValueError, match="empty"):
        crps([], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=1, max_size=20), finite, st.randoms(use_true_random=False))
def test_crps_permutation_invariant(vals, x, rnd):
    perm = list(vals)
    rnd.shuffle(perm)
    assert crps(perm, x) == pytest.approx(crps(vals, x), rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(-10, 10), st.floats(-10, 10))
def test_crps_translation_invariant(vals, x, c):
    shifted = crps(np.array(vals) + c, x + c)
    assert shifted == pytest.approx(crps(vals, x), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=1, max_size=20), finite)
def test_crps_nonnegative_and_bounded_by_mae(vals, x):
    c = crps(vals, x)
    assert c >= -1e-9
    assert c <= np.mean(np.abs(np.array(vals) - x)) + 1e-9


def test_point_forecast():
    assert point_forecast(np.array([[1.0], [3.0]]))[0] == 2.0
    one = np.array([[[4.0, 5.0]]])
    np.testing.assert_array_equal(point_forecast(one), one[0])
    draws = np.random.default_rng(0).normal(3.0, 1.0, (100, 5))
    assert np.all(np.abs(point_forecast(draws) - 3.0) < 3 / np.sqrt(100))


def test_mae_mse_simple():
    t = np.arange(6.0).reshape(2, 3)
    assert mae(t, t) == 0 and mse(t, t) == 0
    assert mae(t + 2, t) == 2 and mse(t + 2, t) == 4
    with pytest.raises(ValueError, match="mae"):
        mae(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError, match="mse"):
        mse(np.zeros(3), np.zeros(4))


def test_mae_mse_against_loops():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((3, 10)), rng.standard_normal((3, 10))
    abs_sum = sq_sum = 0.0
    for i in range(3):
        for j in range(10):
            abs_sum += abs(a[i, j] - b[i, j])
            sq_sum += (a[i, j] - b[i, j]) ** 2
    assert mae(a, b) == pytest.approx(abs_sum / 30, rel=1e-15)
    assert mse(a, b) == pytest.approx(sq_sum / 30, rel=1e-15)


def test_score_oracle_is_zero():
    truths = np.random.default_rng(0).standard_normal((5, 2, 10))
    rep = score(oracle_ensembles(truths, 1), truths)
    assert all(v == 0 for d in rep.per_horizon.values() for v in d.values())
    assert all(v == 0 for v in rep.overall.values())
    assert sorted(rep.per_horizon) == [1, 4, 7, 10]


def test_score_slices_horizons():
    rng = np.random.default_rng(1)
    ens, truths = rng.standard_normal((4, 6, 1, 10)), rng.standard_normal((4, 1, 10))
    rep = score(ens, truths, horizons=(4,))
    pts = ens.mean(axis=1)
    assert rep.per_horizon[4]["mae"] == pytest.approx(np.abs(pts[..., 3] - truths[..., 3]).mean())
    c = np.mean([crps(ens[w, :, 0, 3], truths[w, 0, 3]) for w in range(4)])
    assert rep.per_horizon[4]["crps"] == pytest.approx(c)
    overall = np.mean([crps(ens[w, :, 0, h], truths[w, 0, h]) for w in range(4) for h in range(10)])
    assert rep.overall["crps"] == pytest.approx(overall)


def test_single_path_crps_equals_mae():
    rng = np.random.default_rng(2)
    truths = rng.standard_normal((3, 2, 10))
    rep = score(rng.standard_normal((3, 1, 2, 10)), truths)
    for d in rep.per_horizon.values():
        assert d["crps"] == pytest.approx(d["mae"], rel=1e-15)


def test_score_rejects_long_horizon():
    with pytest.raises(ValueError, match="horizon 11"):
        score(np.zeros((1, 2, 1, 10)), np.zeros((1, 1, 10)), horizons=(1, 11))


def test_report_text_round_trip():
    rng = np.random.default_rng(3)
    rep = score(rng.standard_normal((2, 3, 1, 10)), rng.standard_normal((2, 1, 10)),
                config_hash="abc", seeds=[1, 2], label="m")
    back = EvalReport.from_text(rep.to_text())
    assert back == rep


def test_trial_summary_and_comparison():
    rng = np.random.default_rng(4)
    truths = rng.standard_normal((3, 1, 10))
    good = [score(truths[:, None] + 0.1 * rng.standard_normal((3, 4, 1, 10)), truths, label="good") for _ in range(3)]
    bad = [score(truths[:, None] + 2.0 * rng.standard_normal((3, 4, 1, 10)), truths, label="bad") for _ in range(3)]
    sg, sb = summarize_trials(good), summarize_trials(bad)
    vals = [r.overall["crps"] for r in good]
    assert sg.mean["overall.crps"] == pytest.approx(np.mean(vals))
    assert sg.std["overall.crps"] == pytest.approx(np.std(vals))
    assert sg.trials == 3 and "+-" in sg.to_text()
    assert [r[0] for r in comparison_rows([sb, sg])] == ["good", "bad"]


def test_histogram_counts_and_edges():
    rng = np.random.default_rng(5)
    model, truth = rng.standard_normal(100), rng.standard_normal(10) + 3
    rows = histogram_table(model, truth, bins=20)
    m = [r for r in rows if r[3] == "model"]
    t = [r for r in rows if r[3] == "truth"]
    assert len(m) == len(t) == 20
    assert sum(r[2] for r in m) == 100 and sum(r[2] for r in t) == 10
    pooled = np.concatenate([model, truth])
    assert m[0][0] == pooled.min() and m[-1][1] == pooled.max()


def test_histogram_degenerate_range():
    rows = histogram_table([2.0] * 5, [2.0], bins=4)
    assert sum(r[2] for r in rows if r[3] == "model") == 5


def test_two_modes():
    assert two_modes([1, 5, 9, 5, 1, 0, 1, 4, 8, 3]) == (2, 8, 5)
    assert two_modes([1, 3, 6, 9, 6, 3, 1]) is None
    assert two_modes([5, 9, 7, 8, 5]) is None  # trough 7 is above 60% of 8


def test_climatology_draws_from_training_values():
    train = np.array([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]])
    ens = climatology_ensembles(train, n_windows=4, K=50, horizon=5, seed=0)
    assert ens.shape == (4, 50, 2, 5)
    assert set(np.unique(ens[:, :, 0])) <= {1.0, 2.0, 3.0}
    assert set(np.unique(ens[:, :, 1])) <= {10.0, 20.0, 30.0}
    np.testing.assert_array_equal(ens, climatology_ensembles(train, 4, 50, 5, 0))


def test_evaluate_frame_is_deterministic():
    frame = synth_generate("ar2_seasonal", 1500, 0)
    cfg = tiny_config(steps=20)
    cfg.eval.max_windows = 5
    ck = fit(frame, cfg)
    a = evaluate_frame(ck, frame, cfg, K=8, seed=1)
    b = evaluate_frame(ck, frame, cfg, K=8, seed=1)
    assert a.to_text() == b.to_text()
    assert a.n_windows == 5 and a.seeds == [0, 1] and len(a.config_hash) == 16
    assert evaluate_frame(ck, frame, cfg, K=8, seed=2).to_text() != a.to_text()
