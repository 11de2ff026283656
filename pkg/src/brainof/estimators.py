"""scikit-learn style wrappers around pretraining and finetuning.

Inputs are lists of :class:`Signal` (or tuples of signals for fused
multimodal samples). Raw arrays of shape ``(n, N, T)`` are accepted
together with a ``modality`` argument.
"""

from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .config import FinetuneConfig, ModelConfig, RunConfig, TrainConfig
from .errors import InputError
from .model import BrainOF, LinearHead
from .signal import Signal, normalize
from .train import finetune, make_streams, predict_raw, pretrain


def check_signals(X, modality=None, z_score=True):
    """Validate and normalise estimator input into a list of samples.

    Accepts a list of :class:`Signal`, a list of tuples of signals, or an
    array ``(n, N, T)`` paired with ``modality``.
    """
    if isinstance(X, Signal):
        raise InputError("expected a collection of signals, got a single Signal")
    if isinstance(X, np.ndarray):
        if modality is None:
            raise InputError("array input needs a modality")
        if X.ndim != 3:
            raise InputError(f"array input must be (n, N, T), got shape {X.shape}")
        X = [Signal(modality, x, f"x{i}") for i, x in enumerate(X)]
    samples = list(X)
    if not samples:
        raise InputError("no samples given")
    out = []
    for s in samples:
        if isinstance(s, Signal):
            out.append(normalize(s) if z_score else s)
        elif isinstance(s, (tuple, list)) and s and all(isinstance(p, Signal) for p in s):
            out.append(tuple(normalize(p) if z_score else p for p in s))
        else:
            raise InputError(f"unsupported sample type {type(s).__name__}")
    width = {1 if isinstance(s, Signal) else len(s) for s in out}
    if len(width) != 1:
        raise InputError("all samples must carry the same number of modality streams")
    return out


def _single_modality(samples):
    flat = []
    for s in samples:
        if not isinstance(s, Signal):
            raise InputError("pretraining takes single-modality samples")
        flat.append(s)
    return flat


def _run_config(model_params, train_params=None, finetune_params=None):
    cfg = RunConfig()
    cfg.model = ModelConfig(**(model_params or {}))
    if train_params:
        cfg.train = TrainConfig(**train_params)
    if finetune_params:
        cfg.finetune = FinetuneConfig(**finetune_params)
    return cfg.validate()


class MTFMPretrainer(TransformerMixin, BaseEstimator):
    """Masked temporal-frequency pretraining; ``transform`` yields pooled latents."""

    def __init__(self, model_params=None, train_params=None, modality=None, seed=0):
        self.model_params = model_params
        self.train_params = train_params
        self.modality = modality
        self.seed = seed

    def fit(self, X, y=None):
        samples = _single_modality(check_signals(X, self.modality))
        train = dict(self.train_params or {})
        train.setdefault("seed", self.seed)
        self.config_ = _run_config(self.model_params, train)
        self.model_ = BrainOF(self.config_.model, gamma=self.config_.train.gamma, seed=self.seed)
        self.history_, self.optimizer_ = pretrain(self.model_, samples, self.config_.train)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        samples = check_signals(X, self.modality)
        return _pooled(self.model_, samples)

    def save(self, directory):
        check_is_fitted(self, "model_")
        return save_checkpoint(
            directory, self.model_, self.config_, self.optimizer_, step=len(self.history_)
        )


def _pooled(model, samples, batch_size=32):
    out = []
    for start in range(0, len(samples), batch_size):
        streams = make_streams(model, samples[start:start + batch_size])
        out.append(model.pooled(streams, track_load=False).data)
    return np.concatenate(out)


class _FinetuneBase(BaseEstimator):
    _task = "classification"

    def __init__(
        self, model_params=None, finetune_params=None, checkpoint=None, mode="full", modality=None, seed=0,
    ):
        self.model_params = model_params
        self.finetune_params = finetune_params
        self.checkpoint = checkpoint
        self.mode = mode
        self.modality = modality
        self.seed = seed

    def _backbone(self):
        if self.checkpoint is None:
            cfg = _run_config(self.model_params)
            return BrainOF(cfg.model, gamma=cfg.train.gamma, seed=self.seed), cfg
        ckpt = load_checkpoint(self.checkpoint)
        return ckpt.model, ckpt.config

    def _fit(self, X, y, n_out):
        samples = check_signals(X, self.modality)
        y = np.asarray(y)
        if len(y) != len(samples):
            raise InputError(f"{len(samples)} samples but {len(y)} targets")
        model, cfg = self._backbone()
        params = dict(self.finetune_params or {})
        params.update(task=self._task, mode=self.mode, seed=self.seed)
        if self._task == "classification":
            params["n_classes"] = n_out
        cfg = copy.deepcopy(cfg)
        cfg.finetune = FinetuneConfig(**params)
        cfg.validate()
        head = LinearHead(cfg.model.d_model, n_out, seed=self.seed)
        self.history_ = finetune(model, head, samples, y, cfg.finetune)
        self.model_, self.head_, self.config_ = model, head, cfg
        return self

    def _raw(self, X):
        check_is_fitted(self, "head_")
        return predict_raw(self.model_, self.head_, check_signals(X, self.modality))

    def save(self, directory):
        check_is_fitted(self, "head_")
        return save_checkpoint(directory, self.model_, self.config_, head=self.head_)


class BrainOFClassifier(ClassifierMixin, _FinetuneBase):
    """Linear head on mean-pooled latents, trained with cross-entropy."""

    _task = "classification"

    def fit(self, X, y):
        y = np.asarray(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise InputError("classification needs at least two classes")
        return self._fit(X, encoded, len(self.classes_))

    def decision_function(self, X):
        return self._raw(X)

    def predict_proba(self, X):
        logits = self._raw(X)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self._raw(X)
        return self.classes_[scores.argmax(axis=1)]


class BrainOFRegressor(RegressorMixin, _FinetuneBase):
    """Scalar head on mean-pooled latents, trained with squared error."""

    _task = "regression"

    def fit(self, X, y):
        y = np.asarray(y, dtype=float)
        if y.ndim != 1:
            raise InputError("regression targets must be one-dimensional")
        return self._fit(X, y, 1)

    def predict(self, X):
        return self._raw(X)[:, 0]
