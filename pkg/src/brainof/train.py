"""Training loops and evaluation utilities built on the model and optimizer."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.metrics import accuracy_score, balanced_accuracy_score, mean_absolute_error

from .config import FinetuneConfig, TrainConfig
from .errors import DivergenceError, InputError
from .model import BrainOF, LinearHead
from .mtfm import METRIC_COLUMNS, pretrain_step
from .numerics import Tensor, cross_entropy, square, tmean
from .optim import AdamW, lr_schedule
from .signal import Signal, patchify


def stream(seed, name):
    """Independent generator for the named sub-stream of a root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# -- batching ---------------------------------------------------------------------

def make_streams(model: BrainOF, samples):
    """Stack a batch into per-modality ``(patches, valid)`` streams.

    A sample is a :class:`Signal` or a tuple of signals to be fused in order.
    """
    cfg = model.config
    first = samples[0]
    width = 1 if isinstance(first, Signal) else len(first)
    streams = []
    for j in range(width):
        seqs = []
        for s in samples:
            item = s if isinstance(s, Signal) else s[j]
            seqs.append(patchify(item, cfg.patch_len, cfg.max_seq_len))
        streams.append((np.stack([t.patches for t in seqs]), np.stack([t.valid for t in seqs])))
    return streams


def _batches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# -- pretraining --------------------------------------------------------------------

def write_metrics_header(path, columns=METRIC_COLUMNS):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerow(columns)


def append_metrics(path, rows):
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow(row)


def pretrain(model: BrainOF, signals, cfg: TrainConfig, optimizer=None, metrics_path=None, start_step=0):
    """Run ``cfg.steps`` MTFM steps over z-scored ``signals``; returns per-step metrics."""
    if not signals:
        raise InputError("pretraining needs at least one signal")
    if optimizer is None:
        optimizer = AdamW(model.named_parameters(), cfg.betas, cfg.eps, cfg.weight_decay)
    order_rng = stream(cfg.seed, "batches")
    mask_rng = stream(cfg.seed, "masks")
    warmup = cfg.resolved_warmup()
    if metrics_path is not None:
        write_metrics_header(metrics_path)
    history = []
    batches = iter(())
    for step in range(start_step + 1, cfg.steps + 1):
        idx = next(batches, None)
        if idx is None:
            batches = _batches(len(signals), cfg.batch_size, order_rng)
            idx = next(batches)
        lr = lr_schedule(step - 1, warmup, cfg.steps, cfg.lr, cfg.warmup_lr)
        metrics = pretrain_step(
            [signals[i] for i in idx], model, optimizer, mask_rng, lr, step,
            cfg.alpha, cfg.smooth_l1_beta, cfg.mask_mean, cfg.mask_std, cfg.clip,
        )
        metrics.outputs = []
        history.append(metrics)
        if metrics_path is not None:
            append_metrics(metrics_path, [metrics.row()])
    return history, optimizer


# -- finetuning -----------------------------------------------------------------------

@dataclass
class EpochMetrics:
    epoch: int
    split: str
    loss: float
    accuracy: float = float("nan")
    balanced_accuracy: float = float("nan")
    mae: float = float("nan")

    def row(self):
        return [self.epoch, self.split, repr(self.loss), repr(self.accuracy), repr(self.balanced_accuracy), repr(self.mae)]


FINETUNE_COLUMNS = ["epoch", "split", "loss", "accuracy", "balanced_accuracy", "mae"]


def _task_loss(out, targets, task):
    if task == "classification":
        return cross_entropy(out, targets)
    diff = out.reshape(-1) - Tensor(np.asarray(targets, dtype=float))
    return tmean(square(diff))


def predict_raw(model: BrainOF, head: LinearHead, samples, batch_size=32):
    """Head outputs for ``samples`` without touching router load counters."""
    outs = []
    for idx in _batches(len(samples), batch_size):
        pooled = model.pooled(make_streams(model, [samples[i] for i in idx]), track_load=False)
        outs.append(head(Tensor(pooled.data)).data)
    return np.concatenate(outs)


def evaluate(model, head, samples, targets, task="classification", batch_size=32, epoch=0, split="test"):
    out = predict_raw(model, head, samples, batch_size)
    targets = np.asarray(targets)
    if task == "classification":
        shifted = out - out.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = float(-logp[np.arange(len(targets)), targets].mean())
        pred = out.argmax(axis=1)
        return EpochMetrics(
            epoch, split, loss, accuracy_score(targets, pred), balanced_accuracy_score(targets, pred)
        )
    pred = out[:, 0]
    return EpochMetrics(epoch, split, float(np.mean((pred - targets) ** 2)), mae=mean_absolute_error(targets, pred))


def _check_targets(targets, cfg: FinetuneConfig):
    targets = np.asarray(targets)
    if cfg.task == "classification":
        if targets.dtype.kind not in "iub" or targets.min() < 0 or targets.max() >= cfg.n_classes:
            raise InputError(f"classification labels must be integers in [0, {cfg.n_classes})")
        return targets.astype(int)
    if targets.dtype.kind not in "iuf":
        raise InputError("regression targets must be numeric")
    return targets.astype(float)


def finetune(
    model: BrainOF, head: LinearHead, train_samples, train_targets, cfg: FinetuneConfig,
    test_samples=None, test_targets=None, clip_norm=5.0, metrics_path=None,
):
    """Train ``head`` (probe) or ``model`` and ``head`` (full) on labelled samples.

    Returns a list of :class:`EpochMetrics`, one per split per epoch
    (epoch 0 is the untrained starting point).
    """
    if len(train_samples) != len(train_targets):
        raise InputError("train samples and targets differ in length")
    train_targets = _check_targets(train_targets, cfg)
    if test_samples is not None:
        test_targets = _check_targets(test_targets, cfg)
    named = list(head.named_parameters("head."))
    if cfg.mode == "full":
        named = list(model.named_parameters()) + named
    opt = AdamW(named, cfg.betas, 1e-8, cfg.weight_decay)
    rng = stream(cfg.seed, "finetune")
    per_epoch = math.ceil(len(train_samples) / cfg.batch_size)
    total = cfg.epochs * per_epoch
    warmup = int(round(cfg.warmup_fraction * total))
    history = []

    def record(epoch):
        history.append(evaluate(model, head, train_samples, train_targets, cfg.task, epoch=epoch, split="train"))
        if test_samples is not None:
            history.append(evaluate(model, head, test_samples, test_targets, cfg.task, epoch=epoch, split="test"))

    record(0)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for idx in _batches(len(train_samples), cfg.batch_size, rng):
            model.reset_router_loads()
            opt.zero_grad()
            streams = make_streams(model, [train_samples[i] for i in idx])
            if cfg.mode == "full":
                pooled = model.pooled(streams, drop_path=cfg.drop_path, rng=rng)
            else:
                pooled = Tensor(model.pooled(streams, track_load=False).data)
            if cfg.dropout:
                keep = (rng.random(pooled.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
                pooled = pooled * keep
            loss = _task_loss(head(pooled), train_targets[idx], cfg.task)
            if not np.isfinite(loss.data):
                raise DivergenceError(step + 1)
            loss.backward()
            opt.clip(clip_norm)
            opt.step(lr_schedule(step, warmup, total, cfg.lr, cfg.warmup_lr))
            if cfg.mode == "full":
                model.update_router_biases()
            step += 1
        record(epoch)
    if metrics_path is not None:
        write_metrics_header(metrics_path, FINETUNE_COLUMNS)
        append_metrics(metrics_path, [m.row() for m in history])
    return history


# -- interpretability ----------------------------------------------------------------------

def occlusion_importance(model, head, samples, targets, metric="balanced_accuracy", task="classification"):
    """Per-channel score ``metric(all channels) - metric(channel c zeroed)``."""
    targets = np.asarray(targets)
    n_channels = samples[0].n_channels
    if any(s.n_channels != n_channels for s in samples):
        raise InputError("occlusion needs samples with a common channel count")

    def score(batch):
        m = evaluate(model, head, batch, targets, task)
        return -m.mae if task == "regression" else getattr(m, metric)

    full = score(samples)
    scores = np.zeros(n_channels)
    for c in range(n_channels):
        occluded = []
        for s in samples:
            values = s.values.copy()
            values[c] = 0.0
            occluded.append(Signal(s.modality, values, s.sample_id))
        scores[c] = full - score(occluded)
    return scores


def modality_importance(perf_all, perf_ablated, lower_is_better=False):
    """Relative performance drop in percent, sign-flipped for lower-is-better metrics."""
    if perf_all == 0:
        raise InputError("modality importance is undefined when perf_all is 0")
    score = (perf_all - perf_ablated) / perf_all * 100.0
    return -score if lower_is_better else score
