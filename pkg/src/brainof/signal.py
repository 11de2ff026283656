"""Signals, z-scoring, patch tokenization and the synthetic corpus."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CapacityError, DimensionError, InputError
from .numerics import DTYPE, load_npy, rfft, save_npy


class Modality(str, enum.Enum):
    FMRI = "fMRI"
    EEG = "EEG"
    MEG = "MEG"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for m in cls:
            if m.value.lower() == str(value).lower():
                return m
        raise InputError(f"unknown modality {value!r}; expected one of fMRI, EEG, MEG")


@dataclass(frozen=True)
class Signal:
    modality: Modality
    values: np.ndarray  # (N channels/ROIs, T timepoints)
    sample_id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=DTYPE)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError(f"signal values must be N x T with N, T >= 1, got {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "modality", Modality.parse(self.modality))

    @property
    def n_channels(self):
        return self.values.shape[0]

    @property
    def n_times(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class Layout:
    """Bookkeeping needed to invert the flattening of one signal."""

    n_channels: int
    patches_per_channel: int
    patch_len: int
    n_times: int

    @property
    def n_valid(self):
        return self.n_channels * self.patches_per_channel


@dataclass
class TokenSequence:
    patches: np.ndarray  # (max_seq_len, patch_len)
    valid: np.ndarray  # (max_seq_len,) bool
    layout: Layout
    modality: Modality = Modality.EEG

    @property
    def length(self):
        return len(self.valid)


def normalize(raw: Signal) -> Signal:
    """Per-channel z-score with population variance; flat channels become zeros."""
    if raw.n_times < 2:
        raise InputError("normalize needs at least two timepoints")
    x = raw.values
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    out = np.where(flat, 0.0, (x - mu) / np.where(flat, 1.0, sd))
    return replace(raw, values=out)


def n_tokens(n_channels, n_times, patch_len):
    return n_channels * math.ceil(n_times / patch_len)


def patchify(s: Signal, patch_len: int, max_seq_len: int) -> TokenSequence:
    """Cut each channel into ``patch_len`` windows and flatten channel-major.

    The last partial window of every channel is zero-filled on the right;
    unused slots up to ``max_seq_len`` are zero with ``valid`` False.
    """
    if patch_len < 1:
        raise InputError("patch_len must be positive")
    n, t = s.values.shape
    per_channel = math.ceil(t / patch_len)
    required = n * per_channel
    if required > max_seq_len:
        raise CapacityError(required, max_seq_len)
    padded = np.zeros((n, per_channel * patch_len))
    padded[:, :t] = s.values
    patches = np.zeros((max_seq_len, patch_len))
    patches[:required] = padded.reshape(required, patch_len)
    valid = np.zeros(max_seq_len, dtype=bool)
    valid[:required] = True
    return TokenSequence(patches, valid, Layout(n, per_channel, patch_len, t), s.modality)


def unpatchify(patches, layout: Layout) -> np.ndarray:
    """Inverse of :func:`patchify`; drops padding slots and the zero-filled tail."""
    patches = np.asarray(patches)
    rows = patches[: layout.n_valid]
    full = rows.reshape(layout.n_channels, layout.patches_per_channel * layout.patch_len)
    return full[:, : layout.n_times]


def attention_mask(ts: TokenSequence) -> np.ndarray:
    return ts.valid.copy()


def valid_time_mask(layout: Layout, max_seq_len: int) -> np.ndarray:
    """(max_seq_len, patch_len) 0/1 mask of real signal samples (no padding, no tail)."""
    per_row = np.zeros((layout.n_channels, layout.patches_per_channel * layout.patch_len))
    per_row[:, : layout.n_times] = 1.0
    mask = np.zeros((max_seq_len, layout.patch_len))
    mask[: layout.n_valid] = per_row.reshape(layout.n_valid, layout.patch_len)
    return mask


# -- synthetic corpus ---------------------------------------------------------------

@dataclass(frozen=True)
class ModalityProfile:
    n_channels: int
    n_times: int
    period_range: tuple  # in samples
    marker_cycles: int  # marker frequency, in cycles per window


PROFILES = {
    Modality.FMRI: ModalityProfile(16, 64, (16, 64), 3),
    Modality.EEG: ModalityProfile(8, 256, (4, 32), 24),
    Modality.MEG: ModalityProfile(12, 128, (4, 32), 12),
}

NOISE_STD = 0.3
AMPLITUDE_RANGE = (0.5, 1.5)


def _distractor_cycles(profile: ModalityProfile):
    lo_period, hi_period = profile.period_range
    lo = max(1, math.ceil(profile.n_times / hi_period))
    hi = profile.n_times // lo_period
    guard = 0 if hi - lo < 8 else 2
    return np.array(
        [k for k in range(lo, hi + 1) if abs(k - profile.marker_cycles) > guard]
    )


def generate_synthetic(
    modality,
    n_samples: int,
    seed: int,
    class_balance: float = 0.5,
    marker_channels=None,
):
    """Deterministic labelled corpus of noisy sinusoid mixtures.

    Every channel sums 1-3 tones at whole-cycle frequencies inside the
    modality's period range plus N(0, 0.3^2) noise. Positive samples also
    carry the marker tone: in a random half (or more) of the channels, or
    exactly in ``marker_channels`` when given. Negatives never contain it.
    """
    modality = Modality.parse(modality)
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    if not 0.0 <= class_balance <= 1.0:
        raise InputError("class_balance must lie in [0, 1]")
    profile = PROFILES[modality]
    n, t = profile.n_channels, profile.n_times
    rng = np.random.default_rng(seed)
    n_pos = int(round(class_balance * n_samples))
    labels = np.zeros(n_samples, dtype=int)
    labels[:n_pos] = 1
    rng.shuffle(labels)
    cycles = _distractor_cycles(profile)
    time = np.arange(t)
    out = []
    for i, label in enumerate(labels):
        values = np.zeros((n, t))
        for c in range(n):
            n_tones = rng.integers(1, 4)
            ks = rng.choice(cycles, size=min(n_tones, len(cycles)), replace=False)
            for k in ks:
                amp = rng.uniform(*AMPLITUDE_RANGE)
                phase = rng.uniform(0, 2 * np.pi)
                values[c] += amp * np.cos(2 * np.pi * k * time / t + phase)
        if label:
            if marker_channels is None:
                count = rng.integers(math.ceil(n / 2), n + 1)
                chans = rng.choice(n, size=count, replace=False)
            else:
                chans = np.asarray(marker_channels)
            for c in chans:
                amp = rng.uniform(*AMPLITUDE_RANGE)
                phase = rng.uniform(0, 2 * np.pi)
                values[c] += amp * np.cos(2 * np.pi * profile.marker_cycles * time / t + phase)
        values += rng.normal(0.0, NOISE_STD, size=(n, t))
        out.append((Signal(modality, values, f"{modality.value}-{seed}-{i:05d}"), int(label)))
    return out


def marker_amplitude(s: Signal) -> np.ndarray:
    """Per-channel amplitude of the modality's marker tone, read off the DFT."""
    profile = PROFILES[s.modality]
    spec = rfft(s.values, axis=1).bins
    return 2.0 * np.abs(spec[:, profile.marker_cycles]) / s.n_times


def marker_oracle(s: Signal, threshold=0.25, min_fraction=0.5) -> int:
    present = marker_amplitude(s) > threshold
    return int(present.sum() >= math.ceil(min_fraction * s.n_channels))


# -- dataset directories ---------------------------------------------------------------

def save_dataset(directory, samples, extra=None):
    """Persist ``[(Signal, label), ...]`` as ``manifest.json`` plus one NPY per signal."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s, label in samples:
        fname = f"{s.sample_id}.npy"
        save_npy(directory / fname, s.values)
        entries.append(
            {
                "id": s.sample_id,
                "modality": s.modality.value,
                "label": label,
                "shape": list(s.values.shape),
                "file": fname,
            }
        )
    manifest = {"samples": entries, **(extra or {})}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(directory):
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    samples = []
    for entry in manifest["samples"]:
        values = load_npy(directory / entry["file"])
        if list(values.shape) != entry["shape"]:
            raise InputError(f"{entry['file']}: shape {values.shape} != manifest {entry['shape']}")
        samples.append((Signal(entry["modality"], values, entry["id"]), entry["label"]))
    return samples
