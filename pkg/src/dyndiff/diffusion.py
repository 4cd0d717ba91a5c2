"""Noise schedule, closed-form forward noising, the reverse step and the training loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dyndiff.numerics import ShapeError, mse


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step arrays indexed ``s - 1`` for diffusion steps ``s = 1..S``."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def S(self) -> int:
        return len(self.beta)

    def check_step(self, s):
        s = np.asarray(s)
        if np.any(s < 1) or np.any(s > self.S):
            raise ValueError(f"diffusion step out of range [1, {self.S}]: {s}")
        return s


def build_schedule(S=50, beta_min=1e-4, beta_max=0.5) -> NoiseSchedule:
    """Linear variance schedule from ``beta_min`` to ``beta_max`` inclusive."""
    if int(S) != S or S < 1:
        raise ValueError(f"schedule needs S >= 1, got {S}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    beta = np.linspace(beta_min, beta_max, int(S), dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.flags.writeable = False
    sigma = np.sqrt(beta)
    sigma.flags.writeable = False
    return NoiseSchedule(beta, alpha, alpha_bar, sigma)


def _per_item(coef, s, ndim):
    """Coefficient for step(s) ``s`` shaped to broadcast against a batch of ``ndim``-D targets."""
    c = coef[np.asarray(s) - 1]
    if c.ndim:
        c = c.reshape(c.shape + (1,) * (ndim - c.ndim))
    return c


def q_sample(x0, s, eps, sched: NoiseSchedule):
    """Noise clean targets straight to step ``s``: ``sqrt(abar) x0 + sqrt(1 - abar) eps``.

    ``s`` is an int or one step per leading batch item.
    """
    x0, eps = np.asarray(x0), np.asarray(eps)
    if x0.shape != eps.shape:
        raise ShapeError(f"q_sample: x0 {x0.shape} vs eps {eps.shape}")
    s = sched.check_step(s)
    ab = _per_item(sched.alpha_bar, s, x0.ndim)
    out = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return out.astype(np.result_type(x0.dtype, eps.dtype), copy=False)


def forward_chain(x0, s, sched: NoiseSchedule, rng):
    """Run the one-step Gaussian transitions ``s`` times (reference path for ``q_sample``)."""
    x = np.asarray(x0, dtype=np.float64)
    for u in range(1, sched.check_step(s) + 1):
        b = sched.beta[u - 1]
        x = np.sqrt(1.0 - b) * x + np.sqrt(b) * rng.standard_normal(x.shape)
    return x


def reverse_step(xs, s: int, eps_hat, sched: NoiseSchedule, z=None):
    """One ancestral denoising step from ``x_s`` to ``x_{s-1}``.

    At ``s == 1`` the step is deterministic; passing a nonzero ``z`` there is an error.
    """
    s = int(sched.check_step(s))
    xs, eps_hat = np.asarray(xs), np.asarray(eps_hat)
    if xs.shape != eps_hat.shape:
        raise ShapeError(f"reverse_step: x_s {xs.shape} vs eps_hat {eps_hat.shape}")
    a, ab = sched.alpha[s - 1], sched.alpha_bar[s - 1]
    mean = (xs - ((1.0 - a) / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)
    if s == 1:
        if z is not None and np.any(np.asarray(z) != 0):
            raise ValueError("reverse_step: the final step (s=1) takes no noise")
        return mean
    if z is None:
        raise ValueError(f"reverse_step: step {s} needs a noise draw z")
    z = np.asarray(z)
    if z.shape != xs.shape:
        raise ShapeError(f"reverse_step: z {z.shape} vs x_s {xs.shape}")
    return mean + sched.sigma[s - 1] * z


@dataclass
class NoisedBatch:
    x0: np.ndarray
    s: np.ndarray
    eps: np.ndarray
    xs: np.ndarray


def make_noised_batch(x0, sched: NoiseSchedule, rng) -> NoisedBatch:
    """Draw one step per batch item and a standard normal ``eps``, then noise ``x0``."""
    x0 = np.asarray(x0)
    s = rng.integers(1, sched.S + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape).astype(x0.dtype)
    return NoisedBatch(x0, s, eps, q_sample(x0, s, eps, sched))


def training_loss(batch: NoisedBatch, e, denoiser):
    """Mean squared error between the drawn noise and the denoiser's prediction of it.

    ``e`` is the latent context batch, or ``None`` for an unconditional denoiser.
    """
    pred = denoiser(batch.xs, batch.s, e)
    if pred.shape != batch.eps.shape:
        raise ShapeError(f"training_loss: denoiser output {pred.shape} vs eps {batch.eps.shape}")
    return mse(pred, batch.eps.astype(pred.dtype, copy=False))
