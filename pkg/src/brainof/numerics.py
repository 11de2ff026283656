"""Dense tensor math with a small reverse-mode autodiff tape.

Every differentiable operation is a forward function paired with a closure
that maps the output cotangent to input cotangents. ``Tensor.backward``
walks the recorded graph in reverse topological order. Arrays are numpy
float64 throughout.

The module also carries a direct real DFT (half spectrum), a central
finite-difference gradient oracle and NPY tensor persistence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DegenerateMaskError, DimensionError, InputError, NumericError

DTYPE = np.float64
RMS_EPS = 1e-6
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


class Tensor:
    """A value on the autodiff tape.

    ``grad`` accumulates additively across ``backward`` calls until
    ``zero_grad`` is called.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, _op=""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- autodiff ------------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        cotangents = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in order:
            g = cotangents.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in cotangents:
                    cotangents[key] = cotangents[key] + pg
                else:
                    cotangents[key] = pg

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def parameter(data):
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward, op):
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=backward, _op=op)
    return Tensor(data, _op=op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def exp(x):
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x):
    out = np.sqrt(x.data)
    return _result(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def square(x):
    return _result(x.data ** 2, (x,), lambda g: (2.0 * g * x.data,), "square")


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(x, lo, hi):
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def gelu(x):
    """Tanh-approximation GELU; the derivative uses the same approximation."""
    x = as_tensor(x)
    v = x.data
    u = _SQRT_2_OVER_PI * (v + _GELU_C * v ** 3)
    t = np.tanh(u)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * du),)

    return _result(out, (x,), backward, "gelu")


# -- reductions and shape ops ---------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward, "sum")


def tmean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / count)


def reshape(x, shape):
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)
    return _result(
        np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def swapaxes(x, a, b):
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def take(x, index):
    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(x.data[index]), (x,), backward, "take")


def concat(tensors: Sequence[Tensor], axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _result(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor], axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    return _result(
        out,
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
        "stack",
    )


# -- linear algebra ------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must have at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents {a.shape[-1]} and {b.shape[-2]} differ")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def backward(g):
        da = np.matmul(g, np.swapaxes(b.data, -1, -2))
        db = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _result(out, (a, b), backward, "matmul")


def apply_matrix(x: Tensor, m: np.ndarray, axis: int) -> Tensor:
    """Contract ``x`` along ``axis`` with the constant matrix ``m`` (out x in)."""
    x = as_tensor(x)
    axis = axis % x.ndim
    moved = np.moveaxis(x.data, axis, -1)
    out = np.moveaxis(moved @ m.T, -1, axis)

    def backward(g):
        gm = np.moveaxis(g, axis, -1) @ m
        return (np.moveaxis(gm, -1, axis),)

    return _result(out, (x,), backward, "apply_matrix")


# -- fused neural-network primitives --------------------------------------------

def softmax_rows(x, mask=None, axis=-1):
    """Softmax along ``axis``; masked (False) entries come out exactly zero."""
    x = as_tensor(x)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        logits = np.where(mask, x.data, -np.inf)
    else:
        logits = x.data
    top = logits.max(axis=axis, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise DegenerateMaskError("softmax row has no unmasked entry")
    e = np.exp(logits - top)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


def rms_norm(x, gain, eps=RMS_EPS):
    """Scale each vector on the last axis to unit RMS, then by ``gain``."""
    x, gain = as_tensor(x), as_tensor(gain)
    if gain.shape != x.shape[-1:]:
        raise DimensionError(f"rms_norm: gain {gain.shape} vs features {x.shape[-1:]}")
    r = 1.0 / np.sqrt(np.mean(x.data ** 2, axis=-1, keepdims=True) + eps)
    normed = x.data * r
    out = normed * gain.data

    def backward(g):
        gg = g * gain.data
        dx = r * gg - x.data * r ** 3 * np.mean(gg * x.data, axis=-1, keepdims=True)
        dgain = (g * normed).reshape(-1, gain.shape[0]).sum(axis=0)
        return dx, dgain

    return _result(out, (x, gain), backward, "rms_norm")


def smooth_l1_elementwise(d, beta=1.0):
    if beta <= 0:
        raise InputError("smooth_l1 requires beta > 0")
    d = as_tensor(d)
    a = np.abs(d.data)
    quad = a < beta
    out = np.where(quad, 0.5 * d.data ** 2 / beta, a - 0.5 * beta)
    return _result(
        out, (d,), lambda g: (g * np.where(quad, d.data / beta, np.sign(d.data)),), "smooth_l1"
    )


def smooth_l1(pred, target, beta=1.0, weight=None, axis=None):
    """Mean smooth-L1 between ``pred`` and ``target``.

    ``weight`` (0/1, broadcastable) restricts the mean to selected elements;
    ``axis`` keeps the remaining axes, e.g. per-sample losses.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"smooth_l1: shapes {pred.shape} and {target.shape} differ")
    elem = smooth_l1_elementwise(pred - target, beta)
    if weight is None:
        return tmean(elem, axis)
    w = np.broadcast_to(np.asarray(weight, dtype=DTYPE), pred.shape)
    count = w.sum(axis=axis)
    if np.any(count == 0):
        raise InputError("smooth_l1 weight selects no elements")
    return tsum(elem * w, axis) / count


def cross_entropy(logits, labels):
    labels = np.asarray(labels, dtype=int)
    lp = log_softmax(logits, axis=-1)
    picked = take(lp, (np.arange(len(labels)), labels))
    return -tmean(picked)


def conv1d(x, weight, padding=1):
    """Stride-1 cross-correlation over the last axis.

    ``x`` is ``(..., ch_in, T)``, ``weight`` is ``(ch_out, ch_in, K)``; with
    ``K = 2*padding + 1`` the output length equals ``T``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    c_out, c_in, k = weight.shape
    if x.shape[-2] != c_in:
        raise DimensionError(f"conv1d: input has {x.shape[-2]} channels, weight expects {c_in}")
    t = x.shape[-1]
    pad_width = [(0, 0)] * (x.ndim - 1) + [(padding, padding)]
    xp = np.pad(x.data, pad_width)
    t_out = xp.shape[-1] - k + 1
    lead = xp.shape[:-2]
    # im2col: (..., c_in * K, T_out) so the convolution is one matmul
    cols = np.stack([xp[..., j:j + t_out] for j in range(k)], axis=-2).reshape(*lead, c_in * k, t_out)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = np.matmul(w2, cols)

    def backward(g):
        gf = g.reshape(-1, c_out, t_out)
        dw = np.tensordot(gf, cols.reshape(-1, c_in * k, t_out), axes=([0, 2], [0, 2]))
        dcols = np.matmul(w2.T, g).reshape(*lead, c_in, k, t_out)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[..., j:j + t_out] += dcols[..., j, :]
        dx = dxp[..., padding:padding + t]
        return dx, dw.reshape(weight.shape)

    return _result(out, (x, weight), backward, "conv1d")


@lru_cache(maxsize=64)
def rope_tables(positions: tuple, dim: int, base: float = 10000.0):
    if dim % 2:
        raise InputError(f"rotary embedding needs an even dimension, got {dim}")
    inv_freq = base ** (-np.arange(0, dim, 2, dtype=DTYPE) / dim)
    angles = np.outer(np.asarray(positions, dtype=DTYPE), inv_freq)
    return np.cos(angles), np.sin(angles)


def _rotate_pairs(v, cos, sin):
    even, odd = v[..., 0::2], v[..., 1::2]
    out = np.empty_like(v)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope_rotate(x, positions, base=10000.0):
    """Rotate consecutive pairs of the last axis by ``pos * base**(-2i/d)``.

    ``x`` is ``(..., C, d)`` and ``positions`` has length ``C``.
    """
    x = as_tensor(x)
    positions = tuple(int(p) for p in np.asarray(positions).ravel())
    if len(positions) != x.shape[-2]:
        raise DimensionError(f"rope: {len(positions)} positions for {x.shape[-2]} tokens")
    cos, sin = rope_tables(positions, x.shape[-1], float(base))
    out = _rotate_pairs(x.data, cos, sin)
    return _result(out, (x,), lambda g: (_rotate_pairs(g, cos, -sin),), "rope")


# -- real DFT --------------------------------------------------------------------

@dataclass(frozen=True)
class Spectrum:
    """Half spectrum of a real array transformed along ``axis``."""

    bins: np.ndarray
    axis: int
    n: int

    @property
    def n_bins(self):
        return self.bins.shape[self.axis]


@lru_cache(maxsize=32)
def dft_matrices(n: int):
    """Real/imaginary forward DFT rows and the inverse synthesis matrices.

    Returns ``(fwd_re, fwd_im, inv_re, inv_im)`` where ``fwd_* @ x`` gives the
    half-spectrum parts and ``inv_re @ re + inv_im @ im`` rebuilds ``x``.
    """
    if n < 2:
        raise InputError(f"DFT length must be at least 2, got {n}")
    k = np.arange(n // 2 + 1)
    t = np.arange(n)
    # reduce kt mod n before scaling keeps the angles small and exact
    theta = 2.0 * np.pi * (np.outer(k, t) % n) / n
    fwd_re = np.cos(theta)
    fwd_im = -np.sin(theta)
    w = np.full(len(k), 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    inv_re = (fwd_re * w[:, None]).T / n
    inv_im = (fwd_im * w[:, None]).T / n
    for m in (fwd_re, fwd_im, inv_re, inv_im):
        m.setflags(write=False)
    return fwd_re, fwd_im, inv_re, inv_im


def rfft(x, axis=-1) -> Spectrum:
    x = np.asarray(x, dtype=DTYPE)
    axis = axis % x.ndim
    n = x.shape[axis]
    fwd_re, fwd_im, _, _ = dft_matrices(n)
    moved = np.moveaxis(x, axis, -1)
    bins = moved @ fwd_re.T + 1j * (moved @ fwd_im.T)
    return Spectrum(np.moveaxis(bins, -1, axis), axis, n)


def irfft(spec: Spectrum, n=None):
    n = spec.n if n is None else n
    _, _, inv_re, inv_im = dft_matrices(n)
    moved = np.moveaxis(spec.bins, spec.axis, -1)
    out = moved.real @ inv_re.T + moved.imag @ inv_im.T
    return np.moveaxis(out, -1, spec.axis)


def rfft_parts(x: Tensor, axis=-1):
    """Differentiable half-spectrum as a ``(real, imag)`` pair of tensors."""
    x = as_tensor(x)
    n = x.shape[axis]
    fwd_re, fwd_im, _, _ = dft_matrices(n)
    return apply_matrix(x, fwd_re, axis), apply_matrix(x, fwd_im, axis)


def spectral_magnitude(x: Tensor, axis=-1, eps=1e-12):
    re, im = rfft_parts(x, axis)
    return sqrt(square(re) + square(im) + eps)


# -- gradient oracle ---------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict
    analytic: dict
    numeric: dict

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tol=1e-4):
        return self.worst < tol


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)


def grad_check(
    op: Callable[..., Tensor],
    inputs: Mapping[str, np.ndarray],
    step: float = 1e-5,
    seed: int = 0,
    max_entries: int | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``op`` against central differences.

    ``op`` receives one Tensor per entry of ``inputs`` (as keyword arguments)
    and returns a Tensor. Non-scalar outputs are contracted with a fixed
    random cotangent. With ``max_entries`` only that many randomly chosen
    scalars per input are perturbed.
    """
    rng = np.random.default_rng(seed)
    base = {k: np.array(v, dtype=DTYPE) for k, v in inputs.items()}
    probe = op(**{k: Tensor(v) for k, v in base.items()})
    weights = None if probe.size == 1 else rng.standard_normal(probe.shape)

    def scalar(values):
        out = op(**{k: Tensor(v) for k, v in values.items()}).data
        val = float(out.sum() if weights is None else (out * weights).sum())
        if not math.isfinite(val):
            raise NumericError("grad_check: non-finite output")
        return val

    leaves = {k: parameter(v) for k, v in base.items()}
    out = op(**leaves)
    out.backward(np.ones_like(out.data) if weights is None else weights)

    errors, analytic_all, numeric_all = {}, {}, {}
    for name, value in base.items():
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(value)
        flat = value.ravel()
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = scalar(base)
            flat[i] = orig - step
            down = scalar(base)
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * step)
        a = analytic.ravel()[idx]
        errors[name] = float(relative_error(a, numeric).max()) if len(idx) else 0.0
        analytic_all[name] = a
        numeric_all[name] = numeric
    return GradCheckReport(errors, analytic_all, numeric_all)


# -- modules -------------------------------------------------------------------------

class Module:
    """Container whose Tensor attributes (and child modules) form a named tree.

    Parameters are Tensors with ``requires_grad``; non-trainable state lives
    in ``self.buffers`` (a name -> ndarray dict).
    """

    def named_parameters(self, prefix="") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def named_buffers(self, prefix="") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in getattr(self, "buffers", {}).items():
            yield f"{prefix}{name}", value
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def normal_init(rng: np.random.Generator, shape, fan_in=None, std=None):
    if std is None:
        std = 1.0 / math.sqrt(fan_in if fan_in is not None else shape[0])
    return parameter(rng.normal(0.0, std, size=shape))


# -- persistence --------------------------------------------------------------------

def save_npy(path, array):
    """Write a little-endian, C-order NPY v1.0 file."""
    array = np.ascontiguousarray(array)
    if array.dtype.kind == "f":
        array = array.astype(array.dtype.newbyteorder("<"), copy=False)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.lib.format.write_array(fh, array, version=(1, 0), allow_pickle=False)


def load_npy(path):
    return np.load(path, allow_pickle=False)
