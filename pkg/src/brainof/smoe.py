"""Sparse mixture of experts with auxiliary-loss-free load balancing.

Selection ranks experts by ``sigmoid score + bias``; the mixing weights use
the raw sigmoid scores only, renormalized over the selected experts. The
bias is adjusted between optimizer steps from the observed expert loads and
never enters the loss.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .numerics import Module, Tensor, as_tensor, gelu, normal_init, parameter, rms_norm, sigmoid, tsum


@dataclass
class RouterState:
    n_experts: int
    k: int
    gamma: float = 1e-3
    bias: np.ndarray = None
    load_counts: np.ndarray = None
    fallback_tokens: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= self.n_experts:
            raise InputError(f"top-k must satisfy 1 <= k <= E, got k={self.k}, E={self.n_experts}")
        if self.bias is None:
            self.bias = np.zeros(self.n_experts)
        if self.load_counts is None:
            self.load_counts = np.zeros(self.n_experts)


def select_top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores per row; ties go to the lower index."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :k]


def route(token, gate, state: RouterState):
    """Route one or more tokens. Returns ``(indices, weights)`` as arrays of width ``k``."""
    token = np.asarray(token, dtype=float)
    p = 0.5 * (1.0 + np.tanh(0.5 * (token @ np.asarray(gate))))
    return route_probs(p, state)


def route_probs(p, state: RouterState):
    p = np.asarray(p, dtype=float)
    idx = select_top_k(p + state.bias, state.k)
    chosen = np.take_along_axis(p, idx, axis=-1)
    denom = chosen.sum(axis=-1, keepdims=True)
    zero = denom == 0
    g = np.where(zero, 1.0 / state.k, chosen / np.where(zero, 1.0, denom))
    return idx, g


def update_bias(state: RouterState, load_counts=None) -> RouterState:
    """Lower the bias of overloaded experts and raise it for underloaded ones, then reset loads."""
    load = state.load_counts if load_counts is None else np.asarray(load_counts, dtype=float)
    mean_load = load.sum() / state.n_experts
    state.bias = state.bias - state.gamma * np.sign(load - mean_load)
    state.load_counts = np.zeros(state.n_experts)
    state.fallback_tokens = 0
    return state


class ExpertBank(Module):
    """``n`` GELU feed-forward experts stored as stacked ``(n, D, H)`` / ``(n, H, D)`` weights."""

    def __init__(self, n, d_model, hidden, rng):
        self.w1 = normal_init(rng, (n, d_model, hidden), fan_in=d_model)
        self.w2 = normal_init(rng, (n, hidden, d_model), fan_in=hidden)

    def __call__(self, x):
        # x: (B, C, D) -> (B, n, C, D)
        b, c, d = x.shape
        return gelu(x.reshape(b, 1, c, d) @ self.w1) @ self.w2


class SMoE(Module):
    def __init__(
        self, d_model, n_experts=4, k=2, n_shared=1, hidden=None, gamma=1e-3, layer_scale=1e-4, rng=None
    ):
        rng = rng or np.random.default_rng(0)
        hidden = hidden or 2 * d_model
        self.norm = parameter(np.ones(d_model))
        self.gate = normal_init(rng, (d_model, n_experts))
        self.shared = ExpertBank(n_shared, d_model, hidden, rng) if n_shared else None
        self.routed = ExpertBank(n_experts, d_model, hidden, rng)
        self.layer_scale = parameter(np.full(d_model, layer_scale))
        self.state = RouterState(n_experts, k, gamma)

    @property
    def buffers(self):
        return {"router_bias": self.state.bias}

    def __call__(self, o, track_load=True):
        return smoe_forward(o, self, track_load=track_load)


def routing_weights(p: Tensor, state: RouterState):
    """Dense ``(..., E)`` gate tensor that is zero off the selected experts, plus the selection mask."""
    idx = select_top_k(p.data + state.bias, state.k)
    selected = np.zeros(p.shape, dtype=bool)
    np.put_along_axis(selected, idx, True, axis=-1)
    masked = p * selected.astype(float)
    denom = tsum(masked, axis=-1, keepdims=True)
    zero = denom.data == 0
    if np.any(zero):
        fallback = np.where(zero, selected / state.k, 0.0)
        g = masked / Tensor(np.where(zero, 1.0, denom.data)) + Tensor(fallback)
        state.fallback_tokens += int(zero.sum())
    else:
        g = masked / denom
    return g, selected


def smoe_forward(o, layer: SMoE, track_load=True) -> Tensor:
    """``O + scale * (shared(h) + sum_selected g * routed(h))`` with ``h = rms_norm(O)``."""
    o = as_tensor(o)
    squeeze = o.ndim == 2
    if squeeze:
        o = o.reshape(1, *o.shape)
    b, c, d = o.shape
    h = rms_norm(o, layer.norm)
    p = sigmoid(h @ layer.gate)
    g, selected = routing_weights(p, layer.state)
    if track_load:
        layer.state.load_counts = layer.state.load_counts + selected.reshape(-1, selected.shape[-1]).sum(0)
    experts = layer.routed(h)  # (B, E, C, D)
    mix = tsum(experts * g.transpose(0, 2, 1).reshape(b, -1, c, 1), axis=1)
    if layer.shared is not None:
        mix = mix + tsum(layer.shared(h), axis=1)
    out = o + mix * layer.layer_scale
    return out.reshape(c, d) if squeeze else out


def expert_load_cv(load_counts) -> float:
    load = np.asarray(load_counts, dtype=float)
    mean = load.mean()
    return float(load.std() / mean) if mean > 0 else 0.0


def write_route_stats(path, rows, append=False):
    """Write ``(step, expert_id, load, bias)`` rows as CSV."""
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["step", "expert_id", "load", "bias"])
        for row in rows:
            writer.writerow(row)


def route_stat_rows(step, layers):
    """CSV rows for every expert of every layer; ``expert_id = layer * E + e``."""
    rows = []
    for li, layer in enumerate(layers):
        st = layer.state
        for e in range(st.n_experts):
            rows.append([step, li * st.n_experts + e, int(st.load_counts[e]), repr(float(st.bias[e]))])
    return rows
