"""Central-difference gradient verification.

This is the independent oracle for everything the tape-based backward pass
produces: it re-evaluates the loss function with per-coordinate
perturbations and compares against the analytic gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError
from .tensor import Tape, Tensor, backward


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> float:
    """Max over parameters of the relative analytic/numeric gradient error.

    For each parameter tensor the full numeric gradient is assembled from
    central differences, one coordinate at a time, and compared against the
    analytic gradient as ``|analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8)`` with Euclidean norms taken per parameter. The
    per-tensor norm keeps the comparison above the float64 noise floor of
    the difference quotient, which individual near-zero coordinates of deep
    models otherwise fall below.

    ``f`` must rebuild the computation from the current parameter values on
    every call and be deterministic (dropout disabled, no fresh rng draws).
    """
    if not 1e-6 <= step <= 1e-4:
        raise ShapeError(f"grad_check step must be in [1e-6, 1e-4], got {step}")

    def evaluate() -> float:
        out = f()
        if out.data.size != 1:
            raise ShapeError("grad_check requires a scalar-valued function")
        return float(out.data.reshape(-1)[0])

    if evaluate() != evaluate():
        raise NumericalError("function is not deterministic under repeated evaluation")

    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    grads = backward(loss, tape, params=params)

    worst = 0.0
    for p in params:
        analytic = grads[p].ravel()
        numeric = np.empty_like(analytic)
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = evaluate()
            flat[i] = orig - step
            f_minus = evaluate()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * step)
        a_norm = float(np.linalg.norm(analytic))
        n_norm = float(np.linalg.norm(numeric))
        rel = float(np.linalg.norm(analytic - numeric)) / max(a_norm, n_norm, 1e-8)
        if rel > worst:
            worst = rel
    return worst
