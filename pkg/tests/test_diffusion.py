import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dyndiff.diffusion import (
    NoisedBatch,
    build_schedule,
    forward_chain,
    make_noised_batch,
    q_sample,
    reverse_step,
    training_loss,
)
from dyndiff.numerics import ShapeError, Tensor, float64_mode


def test_default_schedule_endpoints():
    sched = build_schedule()
    assert sched.S == 50
    assert sched.beta[0] == 1e-4 and sched.beta[-1] == 0.5
    np.testing.assert_allclose(np.diff(sched.beta), (0.5 - 1e-4) / 49)


def test_schedule_invariants():
    sched = build_schedule()
    assert np.all((sched.beta > 0) & (sched.beta < 1))
    assert np.all(np.diff(sched.beta) >= 0)
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert sched.alpha_bar[0] == 1 - sched.beta[0]
    np.testing.assert_allclose(sched.sigma ** 2, sched.beta, rtol=1e-15)


def test_single_step_schedule():
    sched = build_schedule(1, 0.01, 0.01)
    np.testing.assert_array_equal(sched.beta, [0.01])
    np.testing.assert_array_equal(sched.alpha_bar, [0.99])


def test_alpha_bar_final_is_tiny():
    # independent product over plain floats
    betas = [1e-4 + (0.5 - 1e-4) * i / 49 for i in range(50)]
    prod = math.prod(1.0 - b for b in betas)
    assert prod < 1e-6
    assert build_schedule().alpha_bar[-1] == pytest.approx(prod, rel=1e-12)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.5), (10, 0.0, 0.5), (10, 0.3, 0.2), (10, 1e-4, 1.0)])
def test_schedule_rejects_bad_bounds(args):
    with pytest.raises(ValueError):
        build_schedule(*args)


def test_schedule_is_read_only():
    sched = build_schedule()
    with pytest.raises(ValueError):
        sched.beta[0] = 0.3


def test_q_sample_noiseless(rng):
    sched = build_schedule()
    x0 = rng.standard_normal((2, 3))
    for s in (1, 25, 50):
        np.testing.assert_allclose(q_sample(x0, s, np.zeros_like(x0), sched),
                                   np.sqrt(sched.alpha_bar[s - 1]) * x0)


def test_q_sample_per_item_steps(rng):
    sched = build_schedule()
    x0, eps = rng.standard_normal((3, 2, 4)), rng.standard_normal((3, 2, 4))
    s = np.array([1, 20, 50])
    out = q_sample(x0, s, eps, sched)
    for i in range(3):
        np.testing.assert_allclose(out[i], q_sample(x0[i], s[i], eps[i], sched))


def test_q_sample_errors(rng):
    sched = build_schedule()
    with pytest.raises(ShapeError):
        q_sample(np.zeros(3), 1, np.zeros(4), sched)
    with pytest.raises(ValueError):
        q_sample(np.zeros(3), 51, np.zeros(3), sched)


def test_q_sample_final_step_is_standard_normal(rng):
    sched = build_schedule()
    x0 = np.array([-1.5, 0.0, 0.7, 2.0])
    eps = rng.standard_normal((10_000, 4))
    out = q_sample(np.broadcast_to(x0, eps.shape), 50, eps, sched)
    assert np.all(np.abs(out.mean(axis=0)) < 0.05)
    assert np.all(np.abs(out.var(axis=0) - 1.0) < 0.1)


@pytest.mark.parametrize("s", [1, 5, 10])
def test_iterative_chain_matches_closed_form(s):
    sched = build_schedule(10, 1e-4, 0.5)
    rng = np.random.default_rng(s)
    x0 = np.array([1.0, -0.5, 2.0])
    N = 10_000
    draws = forward_chain(np.broadcast_to(x0, (N, 3)), s, sched, rng)
    ab = sched.alpha_bar[s - 1]
    mean, var = np.sqrt(ab) * x0, 1.0 - ab
    se_mean = np.sqrt(var / N)
    se_var = var * np.sqrt(2.0 / (N - 1))
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se_mean)
    assert np.all(np.abs(draws.var(axis=0, ddof=1) - var) < 3 * se_var)


def test_reverse_step_scalar_value():
    # alpha = 0.99 with alpha_bar = 0.9 is not reachable by a linear schedule; set the arrays directly
    sched = replace(build_schedule(2, 0.01, 0.01), alpha=np.array([0.99, 0.99]), alpha_bar=np.array([0.99, 0.9]))
    out = reverse_step(np.array(1.0), 2, np.array(0.5), sched, z=np.array(0.0))
    ref = (1.0 - (1 - 0.99) / math.sqrt(1 - 0.9) * 0.5) / math.sqrt(0.99)
    assert ref == pytest.approx(0.98914, abs=1e-4)
    assert float(out) == pytest.approx(ref, abs=1e-12)


def test_reverse_step_vanishing_noise():
    sched = build_schedule(3, 1e-12, 1e-12)
    xs = np.array([0.3, -1.2])
    np.testing.assert_allclose(reverse_step(xs, 2, np.zeros(2), sched, np.zeros(2)), xs, atol=1e-9)


def test_reverse_step_final_contract():
    sched = build_schedule(5)
    xs = np.ones(3)
    with pytest.raises(ValueError):
        reverse_step(xs, 1, np.zeros(3), sched, z=np.ones(3))
    np.testing.assert_array_equal(reverse_step(xs, 1, np.zeros(3), sched, z=np.zeros(3)),
                                  reverse_step(xs, 1, np.zeros(3), sched))
    with pytest.raises(ValueError):
        reverse_step(xs, 3, np.zeros(3), sched)
    with pytest.raises(ValueError):
        reverse_step(xs, 6, np.zeros(3), sched, np.zeros(3))


@pytest.mark.parametrize("s", [2, 17, 50])
def test_reverse_step_is_affine_with_exact_coefficients(s):
    sched = build_schedule()
    a, ab, sig = sched.alpha[s - 1], sched.alpha_bar[s - 1], sched.sigma[s - 1]
    zero = np.zeros(4)
    base = reverse_step(zero, s, zero, sched, zero)
    np.testing.assert_array_equal(base, zero)
    for i in range(4):
        unit = np.eye(4)[i]
        np.testing.assert_allclose(reverse_step(unit, s, zero, sched, zero), unit / np.sqrt(a), rtol=1e-14)
        np.testing.assert_allclose(reverse_step(zero, s, unit, sched, zero),
                                   -unit * (1 - a) / np.sqrt(1 - ab) / np.sqrt(a), rtol=1e-14)
        np.testing.assert_allclose(reverse_step(zero, s, zero, sched, unit), unit * sig, rtol=1e-14)


class _Echo:
    """Stand-in denoiser returning a fixed prediction."""

    def __init__(self, out):
        self.out = out

    def __call__(self, xs, s, e):
        return Tensor(self.out, dtype=np.float64)


def test_loss_zero_for_perfect_prediction(rng):
    sched = build_schedule()
    with float64_mode():
        batch = make_noised_batch(rng.standard_normal((8, 2, 5)), sched, rng)
        assert float(training_loss(batch, None, _Echo(batch.eps)).data) < 1e-10
        assert float(training_loss(batch, None, _Echo(batch.eps + 1e-3)).data) > 0


def test_loss_of_zero_prediction_is_about_one(rng):
    sched = build_schedule()
    batch = make_noised_batch(rng.standard_normal((64, 2, 32)), sched, rng)
    loss = float(training_loss(batch, None, _Echo(np.zeros((64, 2, 32)))).data)
    assert abs(loss - 1.0) < 0.05


def test_loss_shape_mismatch(rng):
    batch = make_noised_batch(np.zeros((2, 1, 3)), build_schedule(), rng)
    with pytest.raises(ShapeError):
        training_loss(batch, None, _Echo(np.zeros((2, 1, 4))))


def test_noised_batch_reconstructs(rng):
    sched = build_schedule()
    b = make_noised_batch(rng.standard_normal((16, 2, 3)), sched, rng)
    assert isinstance(b, NoisedBatch)
    assert b.s.min() >= 1 and b.s.max() <= 50
    ab = sched.alpha_bar[b.s - 1][:, None, None]
    np.testing.assert_allclose(b.xs, np.sqrt(ab) * b.x0 + np.sqrt(1 - ab) * b.eps)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50), st.floats(-3, 3), st.floats(-3, 3))
def test_loss_nonnegative(s, x, e):
    sched = build_schedule()
    batch = NoisedBatch(np.array([[[x]]]), np.array([s]), np.array([[[e]]]),
                        q_sample(np.array([[[x]]]), s, np.array([[[e]]]), sched))
    assert float(training_loss(batch, None, _Echo(np.array([[[x * e]]]))).data) >= 0
