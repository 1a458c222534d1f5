"""Reverse-mode autodiff over float64 numpy arrays.

A :class:`Tensor` wraps an ndarray. Operations executed while a
:class:`Tape` is active append `(output, inputs, backward_fn)` entries in
execution order; :func:`backward` replays the tape in exact reverse order
and accumulates gradients additively into every reachable leaf. Without an
active tape the same functions run as plain forward math, which is what
evaluation and finite-difference probes use.

Tensors are treated as immutable values: no operation writes to its
inputs, so they are safe to share. The optimizer owns the only mutating
path (parameter updates between steps).

Elementwise and row-reduction inner loops are delegated to
:mod:`gravamen.kernels`, which is where the numba/numpy backend switch
lives.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import NumericalError, ShapeError

# Basic-indexing keys accepted by getitem (no boolean/fancy indexing).
_INDEX_TYPES = (int, slice, type(None), type(Ellipsis))

_FINITE_CHECKS = os.environ.get("GRAVAMEN_FINITE_CHECKS", "1") != "0"


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf validation of every created tensor (default on)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = enabled


class Tensor:
    """Immutable float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
            raise NumericalError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed ops, replayed in reverse by backward()."""

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.entries)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def recording() -> bool:
    """True while a tape is active (gradients will be tracked)."""
    return bool(_TAPE_STACK)


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], bwd: Callable) -> Tensor:
    """Wrap an op result; append to the active tape when gradients are needed.

    ``bwd(gout)`` must return one gradient array (or None) per input.
    """
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.entries.append((out, inputs, bwd))
    return out


def backward(loss: Tensor, tape: Tape, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar loss over a completed tape.

    Accumulates into ``t.grad`` for every reachable leaf that requires a
    gradient and returns a ``{tensor: gradient}`` mapping. Leaves listed in
    ``params`` that the loss never touched get explicit zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, bwd in reversed(tape.entries):
        g = grads.pop(id(out), None)
        holders.pop(id(out), None)
        if g is None:
            continue
        input_grads = bwd(g)
        for inp, gi in zip(inputs, input_grads):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.data.shape:
                gi = gi.reshape(inp.data.shape)
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                holders[key] = inp
    result: dict[Tensor, np.ndarray] = {}
    for key, g in grads.items():
        t = holders[key]
        if not t.requires_grad:
            continue
        t.grad = g if t.grad is None else t.grad + g
        result[t] = g
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            result.setdefault(p, p.grad)
    return result


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _flat(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a).ravel()


def _rows(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a).reshape(-1, a.shape[-1])


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _record(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def bwd(g):
        return (g * s,)

    return _record(out, (a,), bwd)


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = a.data + s

    def bwd(g):
        return (g,)

    return _record(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-d")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def minimum_scalar(a: Tensor, cap: float) -> Tensor:
    """Elementwise min(a, cap); subgradient passes through where a <= cap."""
    out = np.minimum(a.data, cap)

    def bwd(g):
        return (g * (a.data <= cap),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _record(out, (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _record(out, (a,), bwd)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def bwd(g):
        return (_unbroadcast(g, a.data.shape),)

    return _record(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    split_points = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, split_points, axis=axis))

    return _record(out, tuple(tensors), bwd)


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record(out, tuple(tensors), bwd)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic indexing only; every output element maps to one input element."""
    key = idx if isinstance(idx, tuple) else (idx,)
    if not all(isinstance(k, _INDEX_TYPES) for k in key):
        raise ShapeError("getitem supports basic indexing only")
    out = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.data.shape).copy(),)

    return _record(out, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.data.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge / n, a.data.shape).copy(),)

    return _record(out, (a,), bwd)


def l2_norm(a: Tensor, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Euclidean norm along one axis; subgradient 0 at the origin."""
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    out = norm if keepdims else norm.squeeze(axis)

    def bwd(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(norm > 0.0, norm, 1.0)
        return (ge * np.where(norm > 0.0, a.data / safe, 0.0),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities (kernel-backed)
# ---------------------------------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    y = kernels.sigmoid_fwd(_flat(a.data)).reshape(a.data.shape)

    def bwd(g):
        return (kernels.sigmoid_bwd(_flat(y), _flat(g)).reshape(a.data.shape),)

    return _record(y, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    y = kernels.tanh_fwd(_flat(a.data)).reshape(a.data.shape)

    def bwd(g):
        return (kernels.tanh_bwd(_flat(y), _flat(g)).reshape(a.data.shape),)

    return _record(y, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    y = kernels.relu_fwd(_flat(a.data)).reshape(a.data.shape)

    def bwd(g):
        return (kernels.relu_bwd(_flat(a.data), _flat(g)).reshape(a.data.shape),)

    return _record(y, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    nd = a.data.ndim
    ax = axis if axis >= 0 else axis + nd
    if not 0 <= ax < nd:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.data.shape}")
    moved = np.moveaxis(a.data, ax, -1)
    y2 = kernels.softmax_rows_fwd(_rows(moved))
    out = np.moveaxis(y2.reshape(moved.shape), -1, ax)

    def bwd(g):
        g2 = _rows(np.moveaxis(g, ax, -1))
        gx = kernels.softmax_rows_bwd(y2, g2).reshape(moved.shape)
        return (np.moveaxis(gx, -1, ax),)

    return _record(out, (a,), bwd)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine (gamma, beta)."""
    d = a.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match last axis {d}"
        )
    if eps <= 0:
        raise ShapeError("layer_norm eps must be positive")
    x2 = _rows(a.data)
    y2, xhat, inv_std = kernels.layer_norm_fwd(x2, gamma.data, beta.data, eps)
    out = y2.reshape(a.data.shape)

    def bwd(g):
        gx, dgamma, dbeta = kernels.layer_norm_bwd(_rows(g), xhat, inv_std, gamma.data)
        return gx.reshape(a.data.shape), dgamma, dbeta

    return _record(out, (a, gamma, beta), bwd)


def dropout(a: Tensor, p_drop: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales by 1/keep at train time, identity in eval."""
    if not 0.0 <= p_drop < 1.0:
        raise ShapeError(f"dropout probability must be in [0, 1), got {p_drop}")
    if not train or p_drop == 0.0:
        return a
    if rng is None:
        raise ShapeError("train-mode dropout requires an rng")
    keep = 1.0 - p_drop
    mask = (rng.random(a.data.shape) < keep).astype(np.float64) / keep
    out = a.data * mask

    def bwd(g):
        return (g * mask,)

    return _record(out, (a,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids of any integer shape -> ids.shape + (embed_dim,)."""
    ids = np.asarray(ids)
    out = table.data[ids]

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.ravel(), g.reshape(-1, table.data.shape[1]))
        return (full,)

    return _record(out, (table,), bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean categorical cross-entropy over rows, fused with softmax."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"cross entropy expects (n, k) logits and (n,) targets, got "
            f"{logits.data.shape} and {targets.shape}"
        )
    losses, probs = kernels.softmax_xent_fwd(np.ascontiguousarray(logits.data), targets)
    out = np.asarray(losses.mean())
    n = targets.shape[0]

    def bwd(g):
        gl = probs.copy()
        gl[np.arange(n), targets] -= 1.0
        gl *= float(g) / n
        return (gl,)

    return _record(out, (logits,), bwd)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable form)."""
    targets = np.asarray(targets, dtype=np.float64)
    x = logits.data
    if x.shape != targets.shape:
        raise ShapeError(f"bce shapes differ: {x.shape} vs {targets.shape}")
    losses = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(losses.mean())
    n = x.size

    def bwd(g):
        s = kernels.sigmoid_fwd(_flat(x)).reshape(x.shape)
        return ((s - targets) * (float(g) / n),)

    return _record(out, (logits,), bwd)
