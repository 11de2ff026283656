"""Full network: encoder -> ARNESS fusion -> DINT/SMoE backbone -> decoder or head."""

from __future__ import annotations

import numpy as np

from .arness import Arness, ArnessDecoder, decode, fuse
from .config import ModelConfig
from .dint import DintSubBlock, dint_attention
from .encoder import BrainSignalEncoder
from .errors import InputError
from .numerics import Module, Tensor, as_tensor, normal_init, parameter, rms_norm, tmean
from .signal import TokenSequence, patchify
from .smoe import SMoE, smoe_forward, update_bias


def _drop(branch, rate, rng):
    """Per-sample stochastic depth on a ``(B, C, D)`` residual branch."""
    if not rate or rng is None:
        return branch
    keep = (rng.random((branch.shape[0], 1, 1)) >= rate) / (1.0 - rate)
    return branch * keep


class BackboneBlock(Module):
    def __init__(self, cfg: ModelConfig, layer, gamma, rng):
        self.dint = DintSubBlock(cfg.d_model, cfg.n_heads, layer, cfg.layer_scale_init, rng)
        self.smoe = SMoE(
            cfg.d_model, cfg.n_experts, cfg.top_k, cfg.n_shared, cfg.hidden, gamma, cfg.layer_scale_init, rng
        )

    def __call__(self, z, track_load=True, drop_path=0.0, rng=None):
        d = self.dint
        z = z + _drop(dint_attention(rms_norm(z, d.norm), d.attn) * d.layer_scale, drop_path, rng)
        if not drop_path or rng is None:
            return smoe_forward(z, self.smoe, track_load)
        return z + _drop(smoe_forward(z, self.smoe, track_load) - z, drop_path, rng)


def backbone_block(z, block: BackboneBlock, track_load=True):
    return block(as_tensor(z), track_load)


class BrainOF(Module):
    def __init__(self, cfg: ModelConfig, gamma=1e-3, seed=0):
        cfg.validate()
        self.config = cfg
        rng = np.random.default_rng(seed)
        self.encoder = BrainSignalEncoder(cfg.patch_len, cfg.d_model, tuple(cfg.conv_channels), rng)
        self.arness = Arness(
            cfg.d_model, cfg.n_latents, cfg.n_heads, cfg.arness_layers, cfg.hidden, rng
        )
        self.blocks = [BackboneBlock(cfg, layer + 1, gamma, rng) for layer in range(cfg.n_layers)]
        self.decoder = ArnessDecoder(cfg.d_model, cfg.patch_len, cfg.max_seq_len, cfg.n_heads, rng)

    @property
    def routers(self):
        return [b.smoe for b in self.blocks]

    def tokenize(self, signals):
        """Patchify a list of signals into stacked ``(B, L, patch_len)`` patches and ``(B, L)`` masks."""
        seqs = [patchify(s, self.config.patch_len, self.config.max_seq_len) for s in signals]
        return seqs, np.stack([t.patches for t in seqs]), np.stack([t.valid for t in seqs])

    def latents(self, streams, track_load=True, drop_path=0.0, rng=None) -> Tensor:
        """Latent tokens ``(B, C, D)`` from one or more ``(patches, valid)`` modality streams,
        fused in the given order.
        """
        if not streams:
            raise InputError("at least one input stream is required")
        encoded = [(self.encoder(p, v), v) for p, v in streams]
        z = fuse(encoded, self.arness)
        for block in self.blocks:
            z = block(z, track_load, drop_path, rng)
        return z

    def reconstruct(self, z, valid) -> Tensor:
        return decode(z, valid, self.decoder)

    def pooled(self, streams, **kw) -> Tensor:
        return tmean(self.latents(streams, **kw), axis=1)

    def update_router_biases(self):
        for router in self.routers:
            update_bias(router.state)

    def reset_router_loads(self):
        for router in self.routers:
            router.state.load_counts = np.zeros(router.state.n_experts)
            router.state.fallback_tokens = 0

    def set_buffer(self, path, value):
        parts = path.split(".")
        if parts[0] != "blocks" or parts[-1] != "router_bias":
            raise KeyError(path)
        self.blocks[int(parts[1])].smoe.state.bias = np.array(value, dtype=float)


class LinearHead(Module):
    """Linear map applied to the mean-pooled latent tokens."""

    def __init__(self, d_model, n_out, seed=0):
        rng = np.random.default_rng(seed)
        self.weight = normal_init(rng, (d_model, n_out))
        self.bias = parameter(np.zeros(n_out))

    def __call__(self, pooled):
        return pooled @ self.weight + self.bias
