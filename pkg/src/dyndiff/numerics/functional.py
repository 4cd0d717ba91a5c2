"""Differentiable kernels used by the context encoder and the denoiser.

Layout convention is channels-last: sequences are ``(batch, time, channels)``.
"""
from __future__ import annotations

import numpy as np

from dyndiff.numerics.tensor import ShapeError, Tensor, _unbroadcast, as_tensor

LAYER_NORM_EPS = 1e-5


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b, a.dtype)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}") from None

    def bw(g):
        A = a.data[None, :] if a.ndim == 1 else a.data
        B = b.data[:, None] if b.ndim == 1 else b.data
        G = g
        if a.ndim == 1:
            G = np.expand_dims(G, -2)
        if b.ndim == 1:
            G = np.expand_dims(G, -1)
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(G, np.swapaxes(B, -1, -2)), A.shape)
            a._accumulate(ga.reshape(a.shape))
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(A, -1, -2), G), B.shape)
            b._accumulate(gb.reshape(b.shape))

    return Tensor._make(out, (a, b), bw, "matmul")


def dense(x, weight, bias=None):
    """Affine map over the last axis: ``x @ weight + bias``.

    Leading axes are flattened into one GEMM so the weight gradient is a single
    product rather than a batched one.
    """
    x = as_tensor(x, weight.dtype)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[1])

    def bw(g):
        g2 = g.reshape(-1, weight.shape[1])
        if weight.requires_grad:
            weight._accumulate(x2.T @ g2)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            x._accumulate((g2 @ weight.data.T).reshape(x.shape))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, bw, "dense")


def conv1d(x, weight, bias=None, dilation=1, causal=True):
    """1-D convolution over time for ``x`` of shape ``(B, T, Cin)`` (or ``(T, Cin)``).

    ``weight`` has shape ``(kernel, Cin, Cout)``; tap ``j`` reads the input at
    offset ``j * dilation`` inside the padded window, so the last tap is the
    current step. Causal mode pads only on the left, which keeps output ``t``
    independent of inputs after ``t``. Non-causal mode centres the kernel and
    needs an even total padding ``(kernel - 1) * dilation``.
    """
    x = as_tensor(x, weight.dtype)
    if dilation < 1:
        raise ValueError(f"conv1d: dilation must be >= 1, got {dilation}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or weight.ndim != 3 or xd.shape[-1] != weight.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not match weight {weight.shape}")
    k, cin, cout = weight.shape
    B, T, _ = xd.shape
    pad = (k - 1) * dilation
    if causal:
        left, right = pad, 0
    else:
        if pad % 2:
            raise ValueError(f"conv1d: non-causal padding {pad} must be even")
        left = right = pad // 2
    xp = np.pad(xd, ((0, 0), (left, right), (0, 0))) if pad else xd
    if k == 1:
        cols = xp
    else:
        cols = np.concatenate([xp[:, j * dilation: j * dilation + T, :] for j in range(k)], axis=-1)
    cols2 = cols.reshape(B * T, k * cin)
    w2 = weight.data.reshape(k * cin, cout)
    out = cols2 @ w2
    if bias is not None:
        out = out + bias.data
    out = out.reshape(B, T, cout)
    if squeeze:
        out = out[0]

    def bw(g):
        g2 = g.reshape(B * T, cout)
        if weight.requires_grad:
            weight._accumulate((cols2.T @ g2).reshape(k, cin, cout))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ w2.T).reshape(B, T, k * cin)
            gxp = np.zeros((B, T + pad, cin), dtype=gcols.dtype)
            for j in range(k):
                gxp[:, j * dilation: j * dilation + T, :] += gcols[..., j * cin:(j + 1) * cin]
            gx = gxp[:, left:left + T, :]
            x._accumulate(gx[0] if squeeze else gx)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, bw, "conv1d")


def layer_norm(x, gamma=None, beta=None, eps=LAYER_NORM_EPS):
    """Normalise over the last axis; ``eps`` guards zero-variance rows."""
    x = as_tensor(x)
    n = x.shape[-1]
    for name, p in (("gamma", gamma), ("beta", beta)):
        if p is not None and p.shape != (n,):
            raise ShapeError(f"layer_norm: {name} {p.shape} does not match input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        if gamma is not None and gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=lead))
        if beta is not None and beta.requires_grad:
            beta._accumulate(g.sum(axis=lead))
        if x.requires_grad:
            gx = g * gamma.data if gamma is not None else g
            gx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(gx)

    parents = tuple(p for p in (x, gamma, beta) if p is not None)
    return Tensor._make(out, parents, bw, "layer_norm")


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return Tensor._make(y, (x,), bw, "softmax")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def bw(g):
        x._accumulate(g * mask)

    return Tensor._make(x.data * mask, (x,), bw, "relu")


def silu(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):  # exp overflow just saturates the sigmoid at 0
        sig = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        x._accumulate(g * (sig * (1.0 + x.data * (1.0 - sig))))

    return Tensor._make(x.data * sig, (x,), bw, "silu")


def mse(pred, target):
    """Mean of squared differences over every element."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        gd = (2.0 / n) * g * diff
        pred._accumulate(gd)
        target._accumulate(-gd)

    return Tensor._make(np.asarray((diff * diff).mean()), (pred, target), bw, "mse")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            t._accumulate(part)

    return Tensor._make(out, tuple(tensors), bw, "concat")


def add_over_time(x, v):
    """Add a per-item vector ``v`` of shape ``(B, C)`` to every step of ``x`` ``(B, T, C)``."""
    x, v = as_tensor(x), as_tensor(v)
    if x.ndim != 3 or v.shape != (x.shape[0], x.shape[2]):
        raise ShapeError(f"add_over_time: sequence {x.shape} vs vector {v.shape}")
    return x + v.reshape(x.shape[0], 1, x.shape[2])


def multi_head_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, heads, return_weights=False):
    """Scaled dot-product self-attention over the time axis of ``x`` ``(B, T, D)``."""
    B, T, D = x.shape
    if D % heads:
        raise ShapeError(f"multi_head_attention: width {D} not divisible by {heads} heads")
    dh = D // heads

    def split(t):
        return t.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)

    q = split(dense(x, wq, bq))
    k = split(dense(x, wk, bk))
    v = split(dense(x, wv, bv))
    scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    weights = softmax(scores, axis=-1)
    ctx = matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, T, D)
    out = dense(ctx, wo, bo)
    return (out, weights) if return_weights else out
