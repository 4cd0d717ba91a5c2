"""Temporal convolutional network that summarises a context window into a latent vector."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from dyndiff.nn import Module
from dyndiff.numerics import Tensor, conv1d, dense, relu

log = logging.getLogger(__name__)


@dataclass
class EncoderConfig:
    in_vars: int
    channels: int = 64
    layers: int = 4
    kernel: int = 3
    dilation_base: int = 2
    latent_dim: int = 128

    def __post_init__(self):
        for name in ("in_vars", "channels", "layers", "kernel", "dilation_base", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"encoder.{name} must be >= 1")

    @property
    def receptive_field(self) -> int:
        # two dilated convs per residual block, dilation base**l in block l
        span = sum(self.dilation_base ** l for l in range(self.layers))
        return 1 + 2 * (self.kernel - 1) * span


@dataclass
class LatentContext:
    e: Tensor
    source_end: object = None

    @property
    def dim(self) -> int:
        return self.e.shape[-1]


class ContextEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng):
        super().__init__("encoder")
        self.cfg = cfg
        k, ch = cfg.kernel, cfg.channels
        gain = np.sqrt(2.0)
        for l in range(cfg.layers):
            cin = cfg.in_vars if l == 0 else ch
            self._weight(rng, f"block{l}.conv1.weight", (k, cin, ch), k * cin, gain)
            self._zeros(f"block{l}.conv1.bias", (ch,))
            self._weight(rng, f"block{l}.conv2.weight", (k, ch, ch), k * ch, gain)
            self._zeros(f"block{l}.conv2.bias", (ch,))
            if cin != ch:
                self._weight(rng, f"block{l}.skip.weight", (cin, ch), cin)
                self._zeros(f"block{l}.skip.bias", (ch,))
        self._weight(rng, "out.weight", (ch, cfg.latent_dim), ch)
        self._zeros("out.bias", (cfg.latent_dim,))
        log.info("context encoder receptive field: %d steps", cfg.receptive_field)

    @property
    def receptive_field(self) -> int:
        return self.cfg.receptive_field

    def dilation(self, layer: int) -> int:
        return self.cfg.dilation_base ** layer

    def residual_block(self, h, layer: int, dilation: int | None = None):
        """``relu(conv(relu(conv(h)))) + skip(h)`` with causal dilated convs."""
        dilation = self.dilation(layer) if dilation is None else dilation
        if dilation < 1:
            raise ValueError(f"residual_block: dilation must be >= 1, got {dilation}")
        p = self.params
        pre = f"encoder.block{layer}"
        y = relu(conv1d(h, p[f"{pre}.conv1.weight"], p[f"{pre}.conv1.bias"], dilation))
        y = relu(conv1d(y, p[f"{pre}.conv2.weight"], p[f"{pre}.conv2.bias"], dilation))
        if f"{pre}.skip.weight" in p:
            h = dense(h, p[f"{pre}.skip.weight"], p[f"{pre}.skip.bias"])
        return y + h

    def _trunk(self, h):
        for l in range(self.cfg.layers):
            h = self.residual_block(h, l)
        return h

    def _prepare(self, X):
        """Validate variables-by-time input and return a ``(B, c, m)`` tensor."""
        X = X.data if isinstance(X, Tensor) else np.asarray(X)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[1] != self.cfg.in_vars:
            raise ValueError(f"encode_context: expected (batch, {self.cfg.in_vars}, c), got {X.shape}")
        if X.shape[2] == 0:
            raise ValueError("encode_context: empty context window")
        if not np.isfinite(X).all():
            raise ValueError("encode_context: context contains non-finite values")
        return Tensor(np.ascontiguousarray(X.transpose(0, 2, 1)))

    def features(self, X):
        """Per-time latent features ``(B, c, latent_dim)``; position ``i`` sees inputs ``<= i``."""
        h = self._trunk(self._prepare(X))
        return dense(h, self.params["encoder.out.weight"], self.params["encoder.out.bias"])

    def encode(self, X, source_end=None) -> LatentContext:
        """Latent vector at the last context step.

        The last step depends only on the trailing ``receptive_field`` inputs, so
        only those are run through the network.
        """
        h = self._prepare(X)
        if h.shape[1] > self.receptive_field:
            h = Tensor(h.data[:, -self.receptive_field:, :])
        h = self._trunk(h)[:, -1, :]
        e = dense(h, self.params["encoder.out.weight"], self.params["encoder.out.bias"])
        return LatentContext(e, source_end)

    __call__ = encode


def encode_context(X, encoder: ContextEncoder, source_end=None) -> LatentContext:
    return encoder.encode(X, source_end)
