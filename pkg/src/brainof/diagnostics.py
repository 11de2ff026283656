"""Finite-difference gradient checks, per module and through the full pretraining pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arness import Arness, ArnessDecoder, decode, fuse
from .config import ModelConfig
from .dint import DintSubBlock, dint_attention
from .encoder import BrainSignalEncoder, encode
from .model import BrainOF
from .mtfm import mask_plan, mtfm_forward
from .numerics import (
    conv1d,
    gelu,
    grad_check,
    rms_norm,
    rope_rotate,
    smooth_l1,
    softmax_rows,
    spectral_magnitude,
)
from .signal import Signal
from .smoe import SMoE, smoe_forward

TOLERANCE = 1e-4


def _get_path(root, path):
    obj = root
    for part in path.split("."):
        obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
    return obj


def _set_path(root, path, value):
    *parents, last = path.split(".")
    obj = _get_path(root, ".".join(parents)) if parents else root
    if isinstance(obj, list):
        obj[int(last)] = value
    else:
        setattr(obj, last, value)


def _perturb_scales(module, rng):
    """Replace tiny layer-scale vectors with O(1) values so every branch carries gradient."""
    for name, p in module.named_parameters():
        if name.rsplit(".", 1)[-1] in ("layer_scale",):
            p.data = rng.uniform(0.3, 1.0, size=p.data.shape)


def check_module(module, forward, seed=0, max_entries=None, extra=None):
    """Grad-check ``forward()`` with respect to every parameter of ``module`` (plus ``extra`` arrays)."""
    names = [n for n, _ in module.named_parameters()]
    inputs = {n: _get_path(module, n).data.copy() for n in names}
    extra = extra or {}
    inputs.update({f"input:{k}": v for k, v in extra.items()})
    originals = {n: _get_path(module, n) for n in names}

    def op(**tensors):
        for n in names:
            _set_path(module, n, tensors[n])
        return forward(**{k[len("input:"):]: v for k, v in tensors.items() if k.startswith("input:")})

    try:
        return grad_check(op, inputs, seed=seed, max_entries=max_entries)
    finally:
        for n, t in originals.items():
            _set_path(module, n, t)


@dataclass
class CheckResult:
    name: str
    worst: float

    @property
    def passed(self):
        return self.worst < TOLERANCE


def _tiny_config():
    return ModelConfig(
        d_model=8, n_latents=4, n_layers=2, n_heads=2, patch_len=8, max_seq_len=16,
        n_experts=4, top_k=2, n_shared=1, conv_channels=(2, 2, 2),
    )


_MASK = np.array([[True, False, True, True], [True, True, True, True], [False, True, True, False]])
_TARGET = np.zeros((3, 4))


def _ops_cases(rng):
    x = rng.normal(size=(3, 4))
    return {
        "matmul": (lambda a, b: a @ b, {"a": x, "b": rng.normal(size=(4, 2))}),
        "softmax_rows": (lambda a: softmax_rows(a, _MASK), {"a": x}),
        "rms_norm": (lambda a, g: rms_norm(a, g), {"a": x, "g": rng.normal(size=4)}),
        "gelu": (lambda a: gelu(a), {"a": x}),
        "smooth_l1": (lambda a: smooth_l1(a, _TARGET, 1.0), {"a": x + rng.normal(scale=1.5, size=x.shape)}),
        "conv1d": (lambda a, w: conv1d(a, w), {"a": rng.normal(size=(2, 7)), "w": rng.normal(size=(3, 2, 3))}),
        "rope": (lambda a: rope_rotate(a, [0, 3, 7]), {"a": x}),
        "spectral_magnitude": (lambda a: spectral_magnitude(a, axis=1), {"a": rng.normal(size=(2, 9))}),
    }


def run_suite(seed=0, max_entries=6):
    """Worst relative error per module; the pipeline case runs encode -> resample -> DINT -> SMoE -> decode -> loss."""
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for op, inputs in _ops_cases(rng).values():
        worst = max(worst, grad_check(op, inputs, seed=seed).worst)
    results.append(CheckResult("numerics", worst))

    enc = BrainSignalEncoder(8, 6, (2, 3, 2), rng)
    patches = rng.normal(size=(2, 5, 8))
    valid = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
    rep = check_module(enc, lambda p: encode(p, valid, enc), seed, max_entries, {"p": patches})
    results.append(CheckResult("encoder", rep.worst))

    res = Arness(8, 4, 2, n_layers=1, rng=rng)
    _perturb_scales(res, rng)
    x = rng.normal(size=(2, 5, 8))
    dec = ArnessDecoder(8, 4, 6, 2, rng)
    dec_valid = np.array([[1, 1, 1, 1, 0, 0], [1, 1, 1, 1, 1, 1]], dtype=bool)
    rep = check_module(res, lambda x: fuse([(x, valid)], res), seed, max_entries, {"x": x})
    rep2 = check_module(dec, lambda z: decode(z, dec_valid, dec), seed, max_entries, {"z": rng.normal(size=(2, 4, 8))})
    results.append(CheckResult("arness", max(rep.worst, rep2.worst)))

    blk = DintSubBlock(8, 2, 1, 1e-4, rng)
    _perturb_scales(blk, rng)
    rep = check_module(
        blk, lambda z: z + dint_attention(rms_norm(z, blk.norm), blk.attn) * blk.layer_scale,
        seed, max_entries, {"z": rng.normal(size=(2, 4, 8))},
    )
    results.append(CheckResult("dint", rep.worst))

    moe = SMoE(8, 4, 2, 1, 16, 1e-3, 1e-4, rng)
    _perturb_scales(moe, rng)
    rep = check_module(
        moe, lambda o: smoe_forward(o, moe, track_load=False), seed, max_entries, {"o": rng.normal(size=(2, 4, 8))}
    )
    results.append(CheckResult("smoe", rep.worst))

    results.append(CheckResult("pipeline", check_pipeline(seed, max_entries).worst))
    return results


def check_pipeline(seed=0, max_entries=4):
    """Gradient of the masked reconstruction loss with respect to every model parameter."""
    rng = np.random.default_rng(seed)
    model = BrainOF(_tiny_config(), seed=seed)
    _perturb_scales(model, rng)
    signals = [Signal("EEG", rng.normal(size=(2, 20)), f"g{i}") for i in range(2)]
    plans = [mask_plan(s, 8, rng, freq_ratio=0.3) for s in signals]
    return check_module(
        model, lambda: mtfm_forward(model, signals, plans, track_load=False).loss, seed, max_entries
    )
