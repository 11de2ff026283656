"""Brain signal encoder: per-patch 1-D conv stack into D-dimensional tokens."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .numerics import Module, Tensor, as_tensor, conv1d, gelu, normal_init, parameter, rms_norm

KERNEL = 3


class BrainSignalEncoder(Module):
    """Conv layers (kernel 3, stride 1, padding 1, no bias), each followed by
    RMSNorm over channels and GELU, then a flatten + linear map to ``d_model``.
    """

    def __init__(self, patch_len, d_model, channels=(4, 4, 4), rng=None):
        rng = rng or np.random.default_rng(0)
        self.patch_len = patch_len
        self.d_model = d_model
        c_in = 1
        for i, c_out in enumerate(channels):
            setattr(self, f"conv{i}", normal_init(rng, (c_out, c_in, KERNEL), fan_in=c_in * KERNEL))
            setattr(self, f"norm{i}", parameter(np.ones(c_out)))
            c_in = c_out
        self.n_layers = len(channels)
        self.proj = normal_init(rng, (c_in * patch_len, d_model))

    def __call__(self, patches, valid):
        return encode(patches, valid, self)


def encode(patches, valid, params: BrainSignalEncoder) -> Tensor:
    """Embed ``(..., L, patch_len)`` patches into ``(..., L, D)``; padding rows are zero."""
    patches = as_tensor(patches)
    valid = np.asarray(valid, dtype=bool)
    if patches.shape[-1] != params.patch_len:
        raise DimensionError(
            f"patch length {patches.shape[-1]} does not match encoder ({params.patch_len})"
        )
    if valid.shape != patches.shape[:-1]:
        raise DimensionError(f"valid mask {valid.shape} vs patches {patches.shape[:-1]}")
    lead = patches.shape[:-1]
    h = patches.reshape(*lead, 1, params.patch_len)
    for i in range(params.n_layers):
        h = conv1d(h, getattr(params, f"conv{i}"))
        # normalize across channels at every time step
        h = rms_norm(h.transpose(*range(len(lead)), len(lead) + 1, len(lead)), getattr(params, f"norm{i}"))
        h = gelu(h).transpose(*range(len(lead)), len(lead) + 1, len(lead))
    flat = h.reshape(*lead, -1)
    out = flat @ params.proj
    return out * valid[..., None].astype(float)
