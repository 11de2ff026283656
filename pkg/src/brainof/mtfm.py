"""Masked temporal-frequency modeling.

Each sample is perturbed twice before encoding: a random subset of
half-spectrum bins is zeroed (FFT over ROIs for fMRI, over time for
EEG/MEG) and a random subset of temporal patches is zeroed. The network
reconstructs the original signal; the loss mixes smooth-L1 in the time
domain with smooth-L1 between spectral magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InputError
from .numerics import Spectrum, Tensor, as_tensor, irfft, reshape, rfft, smooth_l1, spectral_magnitude, take
from .signal import Layout, Modality, Signal, patchify, valid_time_mask

DEFAULT_ALPHA = 0.8


def freq_axis(modality) -> int:
    """Axis of an ``(N, T)`` signal that the spectral transform runs along."""
    return 0 if Modality.parse(modality) is Modality.FMRI else 1


def freq_transform(s: Signal) -> Spectrum:
    axis = freq_axis(s.modality)
    if s.values.shape[axis] < 2:
        raise InputError(f"{s.modality.value}: transform axis has length {s.values.shape[axis]} < 2")
    return rfft(s.values, axis=axis)


def inverse_freq_transform(spec: Spectrum) -> np.ndarray:
    return irfft(spec)


@dataclass
class MaskPlan:
    freq_ratio: float
    temporal_ratio: float
    freq_mask: np.ndarray  # (rows, bins) bool, rows = the untransformed axis
    patch_slots: np.ndarray  # sorted token indices to occlude
    patch_len: int

    def __eq__(self, other):
        return (
            isinstance(other, MaskPlan)
            and self.freq_ratio == other.freq_ratio
            and self.temporal_ratio == other.temporal_ratio
            and self.patch_len == other.patch_len
            and np.array_equal(self.freq_mask, other.freq_mask)
            and np.array_equal(self.patch_slots, other.patch_slots)
        )


def sample_ratio(rng, mean=0.7, std=0.05):
    return float(np.clip(rng.normal(mean, std), 0.0, 1.0))


def mask_plan(s: Signal, patch_len, rng, freq_ratio=None, temporal_ratio=None, mean=0.7, std=0.05):
    """Draw masks for one signal.

    Unless given, one ratio is drawn from ``N(mean, std^2)`` (clipped to
    [0, 1]) and used for both domains. Bin and patch subsets are drawn
    without replacement.
    """
    if freq_ratio is None and temporal_ratio is None:
        freq_ratio = temporal_ratio = sample_ratio(rng, mean, std)
    elif freq_ratio is None:
        freq_ratio = temporal_ratio
    elif temporal_ratio is None:
        temporal_ratio = freq_ratio
    for r in (freq_ratio, temporal_ratio):
        if not 0.0 <= r <= 1.0:
            raise InputError(f"mask ratio {r} outside [0, 1]")
    axis = freq_axis(s.modality)
    n_rows = s.values.shape[1 - axis]
    n_bins = s.values.shape[axis] // 2 + 1
    n_masked = int(round(freq_ratio * n_bins))
    freq_mask = np.zeros((n_rows, n_bins), dtype=bool)
    for r in range(n_rows):
        freq_mask[r, rng.permutation(n_bins)[:n_masked]] = True
    n_valid = s.n_channels * -(-s.n_times // patch_len)
    n_patches = int(round(temporal_ratio * n_valid))
    slots = np.sort(rng.permutation(n_valid)[:n_patches])
    return MaskPlan(freq_ratio, temporal_ratio, freq_mask, slots, patch_len)


def apply_freq_mask(spec: Spectrum, plan: MaskPlan) -> np.ndarray:
    """Zero the planned half-spectrum bins and return to the signal domain."""
    mask = plan.freq_mask if spec.axis == 1 else plan.freq_mask.T
    if mask.shape != spec.bins.shape:
        raise InputError(f"mask plan {mask.shape} does not fit spectrum {spec.bins.shape}")
    bins = np.where(mask, 0.0, spec.bins)
    return irfft(Spectrum(bins, spec.axis, spec.n))


def apply_temporal_mask(values, plan: MaskPlan, patch_len=None):
    """Zero the planned ``patch_len`` segments; slot ``i`` is channel ``i // P``, patch ``i % P``."""
    patch_len = plan.patch_len if patch_len is None else patch_len
    signal = values if isinstance(values, Signal) else None
    x = np.array(signal.values if signal else values, dtype=float)
    per_channel = -(-x.shape[1] // patch_len)
    for slot in plan.patch_slots:
        c, p = divmod(int(slot), per_channel)
        if c >= x.shape[0]:
            raise InputError(f"patch slot {slot} beyond the signal's {x.shape[0]} channels")
        x[c, p * patch_len:(p + 1) * patch_len] = 0.0
    if signal is not None:
        return Signal(signal.modality, x, signal.sample_id)
    return x


def perturb(s: Signal, plan: MaskPlan) -> Signal:
    spectral = apply_freq_mask(freq_transform(s), plan)
    return apply_temporal_mask(Signal(s.modality, spectral, s.sample_id), plan)


def mtfm_loss(recon: Tensor, target: np.ndarray, modality, alpha=DEFAULT_ALPHA, beta=1.0):
    """Per-sample ``(total, time, freq)`` losses for a same-shape group ``(b, N, T)``."""
    recon = as_tensor(recon)
    target = np.asarray(target, dtype=float)
    axis = freq_axis(modality) + 1
    loss_time = smooth_l1(recon, target, beta, axis=(1, 2))
    mag_target = np.abs(rfft(target, axis=axis).bins)
    loss_freq = smooth_l1(spectral_magnitude(recon, axis=axis), mag_target, beta, axis=(1, 2))
    total = loss_time * (1.0 - alpha) + loss_freq * alpha
    return total, loss_time, loss_freq


@dataclass
class MtfmOutput:
    sample_id: str
    reconstruction: np.ndarray
    loss_time: float
    loss_freq: float
    loss_total: float
    plan: MaskPlan


@dataclass
class MtfmBatch:
    loss: Tensor  # batch mean of per-sample totals (differentiable)
    loss_time: float
    loss_freq: float
    outputs: list = field(default_factory=list)


def _group_by_layout(layouts, modalities):
    groups = {}
    for i, (lay, mod) in enumerate(zip(layouts, modalities)):
        groups.setdefault((lay, mod), []).append(i)
    return groups


def unpatchify_batch(decoded: Tensor, idx, layout: Layout) -> Tensor:
    """Differentiable inverse flattening for the samples ``idx`` sharing ``layout``."""
    rows = take(decoded, (np.asarray(idx)[:, None], np.arange(layout.n_valid)))
    full = reshape(rows, (len(idx), layout.n_channels, layout.patches_per_channel * layout.patch_len))
    return take(full, (slice(None), slice(None), slice(0, layout.n_times)))


def mtfm_forward(model, signals, plans, alpha=DEFAULT_ALPHA, beta=1.0, track_load=True) -> MtfmBatch:
    """Perturb, encode, resample, run the backbone, decode and score a batch against the originals."""
    if not signals:
        raise InputError("empty batch")
    cfg = model.config
    perturbed = [perturb(s, p) for s, p in zip(signals, plans)]
    seqs = [patchify(s, cfg.patch_len, cfg.max_seq_len) for s in perturbed]
    patches = np.stack([t.patches for t in seqs])
    valid = np.stack([t.valid for t in seqs])
    z = model.latents([(patches, valid)], track_load=track_load)
    decoded = model.reconstruct(z, valid)
    outputs = [None] * len(signals)
    totals = []
    sum_time = sum_freq = 0.0
    groups = _group_by_layout([t.layout for t in seqs], [s.modality for s in signals])
    for (layout, modality), idx in groups.items():
        recon = unpatchify_batch(decoded, idx, layout)
        target = np.stack([signals[i].values for i in idx])
        total, lt, lf = mtfm_loss(recon, target, modality, alpha, beta)
        totals.append(total.sum())
        sum_time += float(lt.data.sum())
        sum_freq += float(lf.data.sum())
        for j, i in enumerate(idx):
            outputs[i] = MtfmOutput(
                signals[i].sample_id, recon.data[j], float(lt.data[j]), float(lf.data[j]),
                float(total.data[j]), plans[i],
            )
    loss = totals[0]
    for t in totals[1:]:
        loss = loss + t
    b = len(signals)
    return MtfmBatch(loss * (1.0 / b), sum_time / b, sum_freq / b, outputs)


@dataclass
class StepMetrics:
    step: int
    loss_total: float
    loss_time: float
    loss_freq: float
    grad_norm: float
    lr: float
    max_expert_load: float
    min_expert_load: float
    outputs: list = field(default_factory=list, repr=False)

    def row(self):
        return [
            self.step, repr(self.loss_total), repr(self.loss_time), repr(self.loss_freq),
            repr(self.grad_norm), repr(self.lr), self.max_expert_load, self.min_expert_load,
        ]


METRIC_COLUMNS = [
    "step", "loss_total", "loss_time", "loss_freq", "grad_norm", "lr", "max_expert_load", "min_expert_load",
]


def pretrain_step(
    signals, model, optimizer, rng, lr, step, alpha=DEFAULT_ALPHA, beta=1.0,
    mask_mean=0.7, mask_std=0.05, clip_norm=5.0, plans=None,
) -> StepMetrics:
    """One optimizer step of masked reconstruction on already z-scored ``signals``.

    Order: sample masks, forward, backward, clip, AdamW, router-bias update.
    """
    if plans is None:
        plans = [mask_plan(s, model.config.patch_len, rng, mean=mask_mean, std=mask_std) for s in signals]
    model.reset_router_loads()
    optimizer.zero_grad()
    batch = mtfm_forward(model, signals, plans, alpha, beta)
    total = float(batch.loss.data)
    if not np.isfinite(total):
        raise DivergenceError(step)
    batch.loss.backward()
    norm = optimizer.clip(clip_norm)
    optimizer.step(lr)
    loads = np.concatenate([r.state.load_counts for r in model.routers]) if model.routers else np.zeros(1)
    model.update_router_biases()
    return StepMetrics(
        step, total, batch.loss_time, batch.loss_freq, norm, lr,
        float(loads.max()), float(loads.min()), batch.outputs,
    )
