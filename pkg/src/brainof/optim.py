"""AdamW with decoupled weight decay, warmup + cosine schedule, global-norm clipping."""

from __future__ import annotations

import math

import numpy as np

from .errors import DivergenceError, InputError


def lr_schedule(step, warmup_steps, total_steps, lr_peak, lr_warmup_start=0.0):
    """Linear ramp to ``lr_peak`` over ``warmup_steps``, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise InputError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps >= total_steps and total_steps > 0:
        raise InputError("warmup_steps must be smaller than total_steps")
    if step < warmup_steps:
        return lr_warmup_start + (lr_peak - lr_warmup_start) * step / warmup_steps
    progress = (step - warmup_steps) / max(total_steps - warmup_steps, 1)
    return lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))


def clip_gradients(grads, max_norm=5.0):
    """Rescale all gradients together when their global L2 norm exceeds ``max_norm``.

    Returns ``(clipped, norm_before)``.
    """
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [None if g is None else g * scale for g in grads], norm
    return list(grads), norm


class AdamW:
    """Bias-corrected Adam with decoupled decay ``p -= lr * wd * p``.

    Decay applies to matrices only (``ndim >= 2``); gains, biases and
    layer scales are left undecayed.
    """

    def __init__(self, named_params, betas=(0.9, 0.95), eps=1e-8, weight_decay=0.05):
        self.params = dict(named_params)
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self):
        return [p.grad for p in self.params.values()]

    def clip(self, max_norm):
        names = list(self.params)
        clipped, norm = clip_gradients([self.params[k].grad for k in names], max_norm)
        for k, g in zip(names, clipped):
            self.params[k].grad = g
        return norm

    def step(self, lr):
        b1, b2 = self.betas
        for g in self.grads():
            if g is not None and not np.all(np.isfinite(g)):
                raise DivergenceError(self.step_count + 1, "non-finite gradient")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay and p.data.ndim >= 2:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        return self.m, self.v
