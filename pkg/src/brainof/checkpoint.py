"""Checkpoint directories.

Layout::

    config.json                      full run configuration
    weights/<param.path>.npy         parameters and buffers (router biases)
    opt/<param.path>.{m,v}.npy       AdamW moments, when an optimizer is saved
    meta.json                        step, RNG state, optimizer step count, head info
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import InputError
from .model import BrainOF, LinearHead
from .numerics import load_npy, save_npy
from .optim import AdamW


@dataclass
class Checkpoint:
    config: RunConfig
    model: BrainOF
    meta: dict
    head: LinearHead | None = None
    moments: dict | None = None  # name -> (m, v)

    @property
    def step(self):
        return self.meta.get("step", 0)

    def optimizer(self, named_params, betas, eps, weight_decay):
        """AdamW over ``named_params`` restored from the saved moments where names match."""
        opt = AdamW(named_params, betas, eps, weight_decay)
        if self.moments:
            for name in opt.params:
                if name in self.moments:
                    opt.m[name][...] = self.moments[name][0]
                    opt.v[name][...] = self.moments[name][1]
            opt.step_count = self.meta.get("optimizer_steps", 0)
        return opt


def _dump_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def save_checkpoint(directory, model: BrainOF, config: RunConfig, optimizer=None, step=0, rng_state=None, head=None):
    directory = Path(directory)
    for sub in ("weights", "opt"):
        if (directory / sub).exists():
            shutil.rmtree(directory / sub)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(config.to_json())
    for name, p in model.named_parameters():
        save_npy(directory / "weights" / f"{name}.npy", p.data)
    for name, value in model.named_buffers():
        save_npy(directory / "weights" / f"{name}.npy", value)
    head_meta = None
    if head is not None:
        for name, p in head.named_parameters("head."):
            save_npy(directory / "weights" / f"{name}.npy", p.data)
        head_meta = {"n_out": int(head.bias.shape[0])}
    if optimizer is not None:
        for name in optimizer.params:
            save_npy(directory / "opt" / f"{name}.m.npy", optimizer.m[name])
            save_npy(directory / "opt" / f"{name}.v.npy", optimizer.v[name])
    meta = {
        "step": int(step),
        "optimizer_steps": int(optimizer.step_count) if optimizer is not None else 0,
        "rng_state": rng_state,
        "head": head_meta,
    }
    _dump_json(directory / "meta.json", meta)
    return directory


def _load_into(module, weights_dir, prefix=""):
    for name, p in module.named_parameters(prefix):
        path = weights_dir / f"{name}.npy"
        if not path.exists():
            raise InputError(f"checkpoint is missing tensor {name}")
        value = load_npy(path)
        if value.shape != p.data.shape:
            raise InputError(f"{name}: checkpoint shape {value.shape} does not match config {p.data.shape}")
        p.data = np.array(value, dtype=float)


def load_checkpoint(directory) -> Checkpoint:
    directory = Path(directory)
    if not (directory / "config.json").exists():
        raise FileNotFoundError(f"{directory} has no config.json")
    config = RunConfig.from_dict(json.loads((directory / "config.json").read_text()))
    meta = json.loads((directory / "meta.json").read_text())
    model = BrainOF(config.model, gamma=config.train.gamma, seed=config.train.seed)
    weights = directory / "weights"
    _load_into(model, weights)
    for name, value in list(model.named_buffers()):
        path = weights / f"{name}.npy"
        if not path.exists():
            raise InputError(f"checkpoint is missing buffer {name}")
        stored = load_npy(path)
        if stored.shape != value.shape:
            raise InputError(f"{name}: checkpoint shape {stored.shape} does not match config {value.shape}")
        model.set_buffer(name, stored)
    head = None
    if meta.get("head"):
        head = LinearHead(config.model.d_model, meta["head"]["n_out"])
        _load_into(head, weights, "head.")
    moments = None
    opt_dir = directory / "opt"
    if opt_dir.exists():
        moments = {}
        for path in sorted(opt_dir.glob("*.m.npy")):
            name = path.name[: -len(".m.npy")]
            moments[name] = (load_npy(path), load_npy(opt_dir / f"{name}.v.npy"))
    return Checkpoint(config, model, meta, head, moments)
