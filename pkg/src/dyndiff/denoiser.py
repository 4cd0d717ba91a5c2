"""Noise-prediction network conditioned on the diffusion step and the latent context."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dyndiff.encoder import LatentContext
from dyndiff.nn import Module
from dyndiff.numerics import (
    ShapeError,
    Tensor,
    add_over_time,
    conv1d,
    dense,
    layer_norm,
    multi_head_attention,
    relu,
    silu,
)

OUTPUT_INIT_GAIN = 1e-2


@dataclass
class DenoiserConfig:
    n_vars: int
    horizon: int
    d_model: int = 128
    heads: int = 4
    res_blocks: int = 2
    ff_dim: int = 256
    kernel: int = 3
    unconditional: bool = False

    def __post_init__(self):
        for name in ("n_vars", "horizon", "d_model", "heads", "res_blocks", "ff_dim", "kernel"):
            if getattr(self, name) < 1:
                raise ValueError(f"denoiser.{name} must be >= 1")
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the sinusoidal step embedding")
        if self.kernel % 2 == 0:
            raise ValueError("denoiser kernel must be odd (centred convolution)")


@dataclass
class StepEmbedding:
    s: int
    vec: np.ndarray


def sinusoid(s, d_model):
    """Transformer position encoding of ``s`` (scalar or array) -> ``(..., d_model)``."""
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("diffusion step must be >= 0")
    freq = 10000.0 ** (-np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    ang = s[..., None] * freq
    out = np.empty(s.shape + (d_model,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def embed_step(s: int, d_model: int) -> StepEmbedding:
    return StepEmbedding(int(s), sinusoid(s, d_model))


def condition_inject(h, e, emb, w_latent, w_step):
    """``h + W_e e + W_s emb``, each projection broadcast over the time axis of ``h``."""
    e = e.e if isinstance(e, LatentContext) else e
    emb = emb.vec if isinstance(emb, StepEmbedding) else emb
    emb = Tensor(emb, dtype=h.dtype) if not isinstance(emb, Tensor) else emb
    if e.ndim == 1:
        e = e.reshape(1, -1)
    if emb.ndim == 1:
        emb = emb.reshape(1, -1)
    if e.shape[-1] != w_latent.shape[0] or emb.shape[-1] != w_step.shape[0]:
        raise ShapeError(f"condition_inject: latent {e.shape} / step {emb.shape} vs width {w_latent.shape[0]}")
    cond = dense(e, w_latent) + dense(emb, w_step)
    if cond.shape[0] != h.shape[0]:
        cond = cond + Tensor(np.zeros((h.shape[0], cond.shape[1])), dtype=h.dtype)
    return add_over_time(h, cond)


class Denoiser(Module):
    """Predicts the injected noise ``eps`` from ``(x_s, s, e)``.

    Pipeline: input projection plus learned per-position vector, conditioning,
    one post-norm transformer encoder layer over the horizon positions, then
    residual blocks of centred dilated convolutions whose skip outputs are
    summed and projected back to the target variables.
    """

    def __init__(self, cfg: DenoiserConfig, rng):
        super().__init__("denoiser")
        self.cfg = cfg
        d, n, ff, k = cfg.d_model, cfg.n_vars, cfg.ff_dim, cfg.kernel
        he = np.sqrt(2.0)
        self._weight(rng, "in.weight", (n, d), n)
        self._zeros("in.bias", (d,))
        self._add("pos", rng.standard_normal((cfg.horizon, d)) * 0.02)
        self._weight(rng, "cond.latent.weight", (d, d), d)
        self._weight(rng, "cond.step.weight", (d, d), d)
        for name in ("q", "k", "v", "o"):
            self._weight(rng, f"attn.{name}.weight", (d, d), d)
            self._zeros(f"attn.{name}.bias", (d,))
        self._ones("ln1.gamma", (d,))
        self._zeros("ln1.beta", (d,))
        self._weight(rng, "ff1.weight", (d, ff), d, he)
        self._zeros("ff1.bias", (ff,))
        self._weight(rng, "ff2.weight", (ff, d), ff)
        self._zeros("ff2.bias", (d,))
        self._ones("ln2.gamma", (d,))
        self._zeros("ln2.beta", (d,))
        for b in range(cfg.res_blocks):
            self._weight(rng, f"res{b}.cond.latent.weight", (d, d), d)
            self._weight(rng, f"res{b}.cond.step.weight", (d, d), d)
            self._weight(rng, f"res{b}.conv.weight", (k, d, d), k * d, he)
            self._zeros(f"res{b}.conv.bias", (d,))
            self._weight(rng, f"res{b}.out.weight", (d, 2 * d), d)
            self._zeros(f"res{b}.out.bias", (2 * d,))
        self._weight(rng, "out.weight", (d, n), d, OUTPUT_INIT_GAIN)
        self._zeros("out.bias", (n,))
        if cfg.unconditional:
            self._add("uncond.latent", rng.standard_normal(d))

    def _latent(self, e, batch):
        p = self.params
        if self.cfg.unconditional:
            # learned constant stands in for the context; any e passed is ignored
            return p["denoiser.uncond.latent"].reshape(1, -1) + Tensor(np.zeros((batch, self.cfg.d_model)))
        if e is None:
            raise ValueError("conditional denoiser needs a latent context")
        e = e.e if isinstance(e, LatentContext) else e
        if e.shape[-1] != self.cfg.d_model:
            raise ShapeError(f"latent dim {e.shape[-1]} does not match d_model {self.cfg.d_model}")
        if e.ndim == 1:
            e = e.reshape(1, -1)
        if e.shape[0] != batch:
            raise ShapeError(f"latent batch {e.shape[0]} does not match x_s batch {batch}")
        return e

    def predict_noise(self, xs, s, e=None, return_attention=False):
        """``xs`` is ``(n, p)`` or ``(B, n, p)``; ``s`` an int or one step per item."""
        cfg, p = self.cfg, self.params
        xs = xs.data if isinstance(xs, Tensor) else np.asarray(xs)
        single = xs.ndim == 2
        if single:
            xs = xs[None]
        if xs.ndim != 3 or xs.shape[1:] != (cfg.n_vars, cfg.horizon):
            raise ShapeError(f"predict_noise: expected (B, {cfg.n_vars}, {cfg.horizon}), got {xs.shape}")
        B = xs.shape[0]
        steps = np.broadcast_to(np.asarray(s), (B,))
        emb = Tensor(sinusoid(steps, cfg.d_model))
        lat = self._latent(e, B)

        x = Tensor(np.ascontiguousarray(xs.transpose(0, 2, 1)))
        h = dense(x, p["denoiser.in.weight"], p["denoiser.in.bias"]) + p["denoiser.pos"]
        h = condition_inject(h, lat, emb, p["denoiser.cond.latent.weight"], p["denoiser.cond.step.weight"])

        a, weights = multi_head_attention(
            h,
            *(p[f"denoiser.attn.{n}.{kind}"] for n in "qkvo" for kind in ("weight", "bias")),
            heads=cfg.heads,
            return_weights=True,
        )
        h = layer_norm(h + a, p["denoiser.ln1.gamma"], p["denoiser.ln1.beta"])
        f = dense(relu(dense(h, p["denoiser.ff1.weight"], p["denoiser.ff1.bias"])),
                  p["denoiser.ff2.weight"], p["denoiser.ff2.bias"])
        h = layer_norm(h + f, p["denoiser.ln2.gamma"], p["denoiser.ln2.beta"])

        d = cfg.d_model
        skip_sum = None
        for b in range(cfg.res_blocks):
            pre = f"denoiser.res{b}"
            y = condition_inject(h, lat, emb, p[f"{pre}.cond.latent.weight"], p[f"{pre}.cond.step.weight"])
            y = silu(conv1d(y, p[f"{pre}.conv.weight"], p[f"{pre}.conv.bias"], dilation=2 ** b, causal=False))
            y = dense(y, p[f"{pre}.out.weight"], p[f"{pre}.out.bias"])
            h = (h + y[..., :d]) * (1.0 / np.sqrt(2.0))
            skip = y[..., d:]
            skip_sum = skip if skip_sum is None else skip_sum + skip
        skip_sum = skip_sum * (1.0 / np.sqrt(cfg.res_blocks))
        out = dense(skip_sum, p["denoiser.out.weight"], p["denoiser.out.bias"]).transpose(0, 2, 1)
        if single:
            out = out[0]
        return (out, weights) if return_attention else out

    def __call__(self, xs, s, e=None):
        return self.predict_noise(xs, s, e)
