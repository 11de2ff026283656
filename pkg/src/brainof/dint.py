"""Differential-integral attention over the latent tokens.

Per head, queries/keys of width ``2d`` are split into halves. The combined
weight matrix is ``A1 - lam * A2 + lam * G`` where ``G`` repeats the column
mean of ``A1`` over every query row, so each row still sums to one.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError
from .numerics import (
    Module,
    Tensor,
    as_tensor,
    clip,
    exp,
    normal_init,
    parameter,
    rms_norm,
    rope_rotate,
    softmax_rows,
    tmean,
    tsum,
)

LAMBDA_CLAMP = 20.0


def lambda_init(layer: int) -> float:
    if layer < 1:
        raise InputError("layer depth starts at 1")
    # 0.8 - 0.6 * exp(-0.3 (l - 1)), arranged so that l = 1 gives exactly 0.2
    return 0.2 + 0.6 * -math.expm1(-0.3 * (layer - 1))


class DintAttention(Module):
    def __init__(self, d_model, n_heads, layer, rng=None, lambda_std=0.1):
        rng = rng or np.random.default_rng(0)
        head_width = d_model // n_heads
        if d_model % n_heads or head_width % 4:
            raise InputError("d_model / n_heads must be divisible by 4 (two even halves)")
        self.n_heads = n_heads
        self.layer = layer
        half = head_width // 2
        self.wq = normal_init(rng, (d_model, d_model))
        self.wk = normal_init(rng, (d_model, d_model))
        self.wv = normal_init(rng, (d_model, d_model))
        self.wo = normal_init(rng, (d_model, d_model))
        self.lambda_q1 = normal_init(rng, (n_heads, half), std=lambda_std)
        self.lambda_k1 = normal_init(rng, (n_heads, half), std=lambda_std)
        self.lambda_q2 = normal_init(rng, (n_heads, half), std=lambda_std)
        self.lambda_k2 = normal_init(rng, (n_heads, half), std=lambda_std)

    def __call__(self, z):
        return dint_attention(z, self)


def lambda_value(params: DintAttention, layer=None) -> Tensor:
    """Per-head mixing scalar ``exp(q1.k1) - exp(q2.k2) + lambda_init``."""
    layer = params.layer if layer is None else layer
    dot1 = clip(tsum(params.lambda_q1 * params.lambda_k1, axis=-1), -LAMBDA_CLAMP, LAMBDA_CLAMP)
    dot2 = clip(tsum(params.lambda_q2 * params.lambda_k2, axis=-1), -LAMBDA_CLAMP, LAMBDA_CLAMP)
    return exp(dot1) - exp(dot2) + lambda_init(layer)


def dint_weights(z, params: DintAttention, lam=None):
    """Return ``(combined, v)`` with ``combined`` of shape ``(B, h, C, C)``."""
    b, c, d_model = z.shape
    h = params.n_heads
    width = d_model // h
    half = width // 2

    def heads(x):
        return x.reshape(b, c, h, width).transpose(0, 2, 1, 3)

    q, k, v = heads(z @ params.wq), heads(z @ params.wk), heads(z @ params.wv)
    pos = np.arange(c)
    q1, q2 = rope_rotate(q[..., :half], pos), rope_rotate(q[..., half:], pos)
    k1, k2 = rope_rotate(k[..., :half], pos), rope_rotate(k[..., half:], pos)
    scale = 1.0 / math.sqrt(half)
    a1 = softmax_rows((q1 @ k1.transpose(0, 1, 3, 2)) * scale)
    a2 = softmax_rows((q2 @ k2.transpose(0, 1, 3, 2)) * scale)
    lam = lambda_value(params) if lam is None else as_tensor(lam)
    lam = lam.reshape(1, h, 1, 1)
    g = tmean(a1, axis=2, keepdims=True)  # (B, h, 1, C), broadcast over queries
    return a1 - lam * a2 + lam * g, v


def dint_attention(z, params: DintAttention, lam=None) -> Tensor:
    z = as_tensor(z)
    squeeze = z.ndim == 2
    if squeeze:
        z = z.reshape(1, *z.shape)
    b, c, d_model = z.shape
    weights, v = dint_weights(z, params, lam)
    out = (weights @ v).transpose(0, 2, 1, 3).reshape(b, c, d_model) @ params.wo
    return out.reshape(c, d_model) if squeeze else out


class DintSubBlock(Module):
    """Pre-norm residual wrapper: ``Z + scale * DINT(rms_norm(Z))``."""

    def __init__(self, d_model, n_heads, layer, layer_scale=1e-4, rng=None):
        rng = rng or np.random.default_rng(0)
        self.norm = parameter(np.ones(d_model))
        self.attn = DintAttention(d_model, n_heads, layer, rng)
        self.layer_scale = parameter(np.full(d_model, layer_scale))

    def __call__(self, z):
        return z + dint_attention(rms_norm(z, self.norm), self.attn) * self.layer_scale
