"""Any-resolution neural signal sampler.

Perceiver-style cross-attention that pulls a variable-length token sequence
into a fixed set of ``C`` latent tokens. Queries come from the latents,
keys/values from the concatenation ``[X; Z]``; padded rows of ``X`` are
masked out while latent keys are always visible.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, InputError
from .numerics import (
    Module,
    Tensor,
    as_tensor,
    concat,
    gelu,
    normal_init,
    parameter,
    rms_norm,
    rope_rotate,
    softmax_rows,
)


def _split_heads(x, n_heads):
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def multihead_attention(
    q_in, kv_in, wq, wk, wv, wo, n_heads, key_mask=None, q_pos=None, k_pos=None
):
    """Scaled dot-product attention for batched ``(B, n, D)`` inputs.

    ``key_mask`` is ``(B, M)`` boolean; ``q_pos``/``k_pos`` switch on rotary
    position encoding of queries and keys.
    """
    q = _split_heads(q_in @ wq, n_heads)
    k = _split_heads(kv_in @ wk, n_heads)
    v = _split_heads(kv_in @ wv, n_heads)
    if q_pos is not None:
        q = rope_rotate(q, q_pos)
        k = rope_rotate(k, k_pos)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(q.shape[-1]))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, None, :]
    weights = softmax_rows(scores, mask)
    return _merge_heads(weights @ v) @ wo


class FeedForward(Module):
    def __init__(self, d_model, hidden, rng):
        self.w1 = normal_init(rng, (d_model, hidden))
        self.w2 = normal_init(rng, (hidden, d_model))

    def __call__(self, x):
        return gelu(x @ self.w1) @ self.w2


class ArnessLayer(Module):
    def __init__(self, d_model, n_heads, hidden, rng):
        if d_model % n_heads or (d_model // n_heads) % 2:
            raise InputError("d_model / n_heads must be an even integer")
        self.n_heads = n_heads
        self.norm_q = parameter(np.ones(d_model))
        self.norm_kv = parameter(np.ones(d_model))
        self.wq = normal_init(rng, (d_model, d_model))
        self.wk = normal_init(rng, (d_model, d_model))
        self.wv = normal_init(rng, (d_model, d_model))
        self.wo = normal_init(rng, (d_model, d_model))
        self.norm_ff = parameter(np.ones(d_model))
        self.ff = FeedForward(d_model, hidden, rng)

    def __call__(self, x, key_mask, z):
        b, length, _ = x.shape
        c = z.shape[1]
        zn = rms_norm(z, self.norm_q)
        kv = concat([rms_norm(x, self.norm_kv), zn], axis=1)
        mask = np.concatenate([key_mask, np.ones((b, c), dtype=bool)], axis=1)
        positions = np.arange(length + c)
        attn = multihead_attention(
            zn, kv, self.wq, self.wk, self.wv, self.wo, self.n_heads,
            key_mask=mask, q_pos=positions[length:], k_pos=positions,
        )
        z = z + attn
        return z + self.ff(rms_norm(z, self.norm_ff))


class Arness(Module):
    """Learned initial latents plus a stack of cross-attention layers."""

    def __init__(self, d_model, n_latents, n_heads, n_layers=1, hidden=None, rng=None):
        rng = rng or np.random.default_rng(0)
        self.latents = parameter(rng.normal(0.0, 1.0, size=(n_latents, d_model)))
        self.layers = [
            ArnessLayer(d_model, n_heads, hidden or 2 * d_model, rng)
            for _ in range(n_layers)
        ]

    def initial(self, batch):
        return self.latents + Tensor(np.zeros((batch, 1, 1)))


def _batched(x, key_mask):
    x = as_tensor(x)
    key_mask = np.asarray(key_mask, dtype=bool)
    if x.ndim == 2:
        return x.reshape(1, *x.shape), key_mask[None], True
    return x, key_mask, False


def resample(x, key_mask, z_in, params: Arness) -> Tensor:
    """One ARNESS pass: latents ``z_in`` read from ``x`` (``(L, D)`` or ``(B, L, D)``)."""
    x, key_mask, squeeze = _batched(x, key_mask)
    z = as_tensor(z_in)
    if z.ndim == 2:
        z = z.reshape(1, *z.shape)
    if key_mask.shape != x.shape[:2]:
        raise DimensionError(f"key mask {key_mask.shape} vs tokens {x.shape[:2]}")
    if z.shape[0] != x.shape[0]:
        z = z + Tensor(np.zeros((x.shape[0], 1, 1)))
    for layer in params.layers:
        z = layer(x, key_mask, z)
    return z.reshape(*z.shape[1:]) if squeeze else z


def fuse(sequences, params: Arness) -> Tensor:
    """Serially resample each ``(X, key_mask)`` into one latent set, starting from the learned latents."""
    if not sequences:
        raise InputError("fuse needs at least one sequence")
    first, _ = sequences[0]
    unbatched = as_tensor(first).ndim == 2
    batch = 1 if unbatched else first.shape[0]
    z = params.initial(batch)
    for x, mask in sequences:
        x, mask, _ = _batched(x, mask)
        z = resample(x, mask, z, params)
    return z.reshape(*z.shape[1:]) if unbatched else z


class ArnessDecoder(Module):
    """One cross-attention layer from learned slot queries onto the latents,
    then a per-slot linear head to ``patch_len`` samples.
    """

    def __init__(self, d_model, patch_len, max_seq_len, n_heads, rng=None):
        rng = rng or np.random.default_rng(0)
        self.n_heads = n_heads
        self.query_slots = parameter(rng.normal(0.0, 1.0, size=(max_seq_len, d_model)))
        self.norm_q = parameter(np.ones(d_model))
        self.norm_kv = parameter(np.ones(d_model))
        self.wq = normal_init(rng, (d_model, d_model))
        self.wk = normal_init(rng, (d_model, d_model))
        self.wv = normal_init(rng, (d_model, d_model))
        self.wo = normal_init(rng, (d_model, d_model))
        self.norm_out = parameter(np.ones(d_model))
        self.head = normal_init(rng, (d_model, patch_len))


def decode(z, valid, params: ArnessDecoder, query_slots=None) -> Tensor:
    """Inverse-sample latents into ``(..., L, patch_len)``; padding slots are zero."""
    z = as_tensor(z)
    valid = np.asarray(valid, dtype=bool)
    squeeze = z.ndim == 2
    if squeeze:
        z, valid = z.reshape(1, *z.shape), valid[None]
    b = z.shape[0]
    length = valid.shape[-1]
    slots = params.query_slots[:length] if query_slots is None else as_tensor(query_slots)
    if slots.shape[0] != length:
        raise DimensionError(f"{slots.shape[0]} query slots for {length} positions")
    q = rope_rotate(slots, np.arange(length)) + Tensor(np.zeros((b, 1, 1)))
    h = multihead_attention(
        rms_norm(q, params.norm_q), rms_norm(z, params.norm_kv),
        params.wq, params.wk, params.wv, params.wo, params.n_heads,
    )
    out = (rms_norm(h, params.norm_out) @ params.head) * valid[..., None].astype(float)
    return out.reshape(*out.shape[1:]) if squeeze else out
