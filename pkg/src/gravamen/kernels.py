"""Hot numeric kernels with two interchangeable backends.

Everything that runs inside a training step bottoms out here: elementwise
activations, row softmax, row layer norm, the fused cross-entropy, and the
Adam parameter update. Each kernel has a pure-numpy implementation and a
numba ``@njit`` twin with identical semantics. The active backend is chosen
once at import time:

* ``GRAVAMEN_BACKEND=numba`` forces the jitted kernels (error if numba is
  not importable),
* ``GRAVAMEN_BACKEND=numpy`` forces the vectorized fallback,
* unset / ``auto`` picks numba when available, numpy otherwise.

All kernels take and return float64 arrays. Elementwise kernels operate on
1-d views, row kernels on 2-d arrays whose last axis is the reduced one;
callers are responsible for reshaping. Kernels never touch global state, so
both backends are deterministic. ``benchmarks/bench_kernels.py`` compares
the two backends on training-sized inputs.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def _np_sigmoid_fwd(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _np_sigmoid_bwd(y, g):
    return g * y * (1.0 - y)


def _np_tanh_fwd(x):
    return np.tanh(x)


def _np_tanh_bwd(y, g):
    return g * (1.0 - y * y)


def _np_relu_fwd(x):
    return np.maximum(x, 0.0)


def _np_relu_bwd(x, g):
    return g * (x > 0.0)


def _np_softmax_rows_fwd(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_rows_bwd(y, g):
    dot = (y * g).sum(axis=1, keepdims=True)
    return y * (g - dot)


def _np_layer_norm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gamma + beta, xhat, inv_std[:, 0]


def _np_layer_norm_bwd(g, xhat, inv_std, gamma):
    d = xhat.shape[1]
    gh = g * gamma
    gh_mean = gh.mean(axis=1, keepdims=True)
    ghx_mean = (gh * xhat).mean(axis=1, keepdims=True)
    gx = inv_std[:, None] * (gh - gh_mean - xhat * ghx_mean)
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    return gx, dgamma, dbeta


def _np_softmax_xent_fwd(logits, targets):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    rows = np.arange(logits.shape[0])
    losses = (np.log(z[:, 0]) + m[:, 0]) - logits[rows, targets]
    return losses, probs


def _np_adam_step(p, g, m, v, lr, b1, b2, eps, t):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    mhat = m / (1.0 - b1**t)
    vhat = v / (1.0 - b2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def _np_gru_sequence(x, mask, wz, uz, bz, wr, ur, br, wh, uh, bh, reverse):
    """Fused inference-mode GRU over (B, T, I); padded steps keep the state."""
    n_batch, n_steps, _ = x.shape
    hidden = wz.shape[1]
    states = np.zeros((n_batch, n_steps, hidden))
    h = np.zeros((n_batch, hidden))
    order = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    for t in order:
        xt = x[:, t, :]
        z = _np_sigmoid_fwd((xt @ wz + h @ uz + bz).ravel()).reshape(n_batch, hidden)
        r = _np_sigmoid_fwd((xt @ wr + h @ ur + br).ravel()).reshape(n_batch, hidden)
        cand = np.tanh(xt @ wh + (r * h) @ uh + bh)
        h_new = h + z * (cand - h)
        h = h + mask[:, t:t + 1] * (h_new - h)
        states[:, t, :] = h
    return states


_NUMPY_IMPLS = {
    "sigmoid_fwd": _np_sigmoid_fwd,
    "sigmoid_bwd": _np_sigmoid_bwd,
    "tanh_fwd": _np_tanh_fwd,
    "tanh_bwd": _np_tanh_bwd,
    "relu_fwd": _np_relu_fwd,
    "relu_bwd": _np_relu_bwd,
    "softmax_rows_fwd": _np_softmax_rows_fwd,
    "softmax_rows_bwd": _np_softmax_rows_bwd,
    "layer_norm_fwd": _np_layer_norm_fwd,
    "layer_norm_bwd": _np_layer_norm_bwd,
    "softmax_xent_fwd": _np_softmax_xent_fwd,
    "adam_step": _np_adam_step,
    "gru_sequence": _np_gru_sequence,
}


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------

if HAS_NUMBA:
    _jit = numba.njit(cache=True, fastmath=False)

    @_jit
    def _nb_sigmoid_fwd(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            xi = x[i]
            if xi >= 0.0:
                out[i] = 1.0 / (1.0 + np.exp(-xi))
            else:
                e = np.exp(xi)
                out[i] = e / (1.0 + e)
        return out

    @_jit
    def _nb_sigmoid_bwd(y, g):
        out = np.empty_like(y)
        for i in range(y.shape[0]):
            out[i] = g[i] * y[i] * (1.0 - y[i])
        return out

    @_jit
    def _nb_tanh_fwd(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            out[i] = np.tanh(x[i])
        return out

    @_jit
    def _nb_tanh_bwd(y, g):
        out = np.empty_like(y)
        for i in range(y.shape[0]):
            out[i] = g[i] * (1.0 - y[i] * y[i])
        return out

    @_jit
    def _nb_relu_fwd(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            out[i] = x[i] if x[i] > 0.0 else 0.0
        return out

    @_jit
    def _nb_relu_bwd(x, g):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            out[i] = g[i] if x[i] > 0.0 else 0.0
        return out

    @_jit
    def _nb_softmax_rows_fwd(x):
        n, d = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(d):
                out[i, j] /= s
        return out

    @_jit
    def _nb_softmax_rows_bwd(y, g):
        n, d = y.shape
        out = np.empty_like(y)
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot += y[i, j] * g[i, j]
            for j in range(d):
                out[i, j] = y[i, j] * (g[i, j] - dot)
        return out

    @_jit
    def _nb_layer_norm_fwd(x, gamma, beta, eps):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        inv_std = np.empty(n, dtype=np.float64)
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                diff = x[i, j] - mu
                var += diff * diff
            var /= d
            s = 1.0 / np.sqrt(var + eps)
            inv_std[i] = s
            for j in range(d):
                h = (x[i, j] - mu) * s
                xhat[i, j] = h
                y[i, j] = h * gamma[j] + beta[j]
        return y, xhat, inv_std

    @_jit
    def _nb_layer_norm_bwd(g, xhat, inv_std, gamma):
        n, d = xhat.shape
        gx = np.empty_like(xhat)
        dgamma = np.zeros(d, dtype=np.float64)
        dbeta = np.zeros(d, dtype=np.float64)
        for i in range(n):
            gh_mean = 0.0
            ghx_mean = 0.0
            for j in range(d):
                gh = g[i, j] * gamma[j]
                gh_mean += gh
                ghx_mean += gh * xhat[i, j]
            gh_mean /= d
            ghx_mean /= d
            for j in range(d):
                gh = g[i, j] * gamma[j]
                gx[i, j] = inv_std[i] * (gh - gh_mean - xhat[i, j] * ghx_mean)
                dgamma[j] += g[i, j] * xhat[i, j]
                dbeta[j] += g[i, j]
        return gx, dgamma, dbeta

    @_jit
    def _nb_softmax_xent_fwd(logits, targets):
        n, d = logits.shape
        losses = np.empty(n, dtype=np.float64)
        probs = np.empty_like(logits)
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, d):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(logits[i, j] - m)
                probs[i, j] = e
                s += e
            for j in range(d):
                probs[i, j] /= s
            losses[i] = (np.log(s) + m) - logits[i, targets[i]]
        return losses, probs

    @_jit
    def _nb_adam_step(p, g, m, v, lr, b1, b2, eps, t):
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for i in range(p.shape[0]):
            m[i] = b1 * m[i] + (1.0 - b1) * g[i]
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
            p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)

    @_jit
    def _nb_gru_sequence(x, mask, wz, uz, bz, wr, ur, br, wh, uh, bh, reverse):
        n_batch, n_steps, _ = x.shape
        hidden = wz.shape[1]
        states = np.zeros((n_batch, n_steps, hidden))
        h = np.zeros((n_batch, hidden))
        for step in range(n_steps):
            t = n_steps - 1 - step if reverse else step
            xt = np.ascontiguousarray(x[:, t, :])
            az = xt @ wz + h @ uz
            ar = xt @ wr + h @ ur
            z = np.empty_like(az)
            r = np.empty_like(ar)
            for i in range(n_batch):
                for j in range(hidden):
                    v1 = az[i, j] + bz[j]
                    if v1 >= 0.0:
                        z[i, j] = 1.0 / (1.0 + np.exp(-v1))
                    else:
                        e = np.exp(v1)
                        z[i, j] = e / (1.0 + e)
                    v2 = ar[i, j] + br[j]
                    if v2 >= 0.0:
                        r[i, j] = 1.0 / (1.0 + np.exp(-v2))
                    else:
                        e = np.exp(v2)
                        r[i, j] = e / (1.0 + e)
            cand = np.tanh(xt @ wh + (r * h) @ uh + bh)
            for i in range(n_batch):
                m_i = mask[i, t]
                for j in range(hidden):
                    h_new = h[i, j] + z[i, j] * (cand[i, j] - h[i, j])
                    h[i, j] = h[i, j] + m_i * (h_new - h[i, j])
                    states[i, t, j] = h[i, j]
        return states

    _NUMBA_IMPLS = {
        "sigmoid_fwd": _nb_sigmoid_fwd,
        "sigmoid_bwd": _nb_sigmoid_bwd,
        "tanh_fwd": _nb_tanh_fwd,
        "tanh_bwd": _nb_tanh_bwd,
        "relu_fwd": _nb_relu_fwd,
        "relu_bwd": _nb_relu_bwd,
        "softmax_rows_fwd": _nb_softmax_rows_fwd,
        "softmax_rows_bwd": _nb_softmax_rows_bwd,
        "layer_norm_fwd": _nb_layer_norm_fwd,
        "layer_norm_bwd": _nb_layer_norm_bwd,
        "softmax_xent_fwd": _nb_softmax_xent_fwd,
        "adam_step": _nb_adam_step,
        "gru_sequence": _nb_gru_sequence,
    }
else:
    _NUMBA_IMPLS = None


def available_backends() -> list[str]:
    return ["numpy", "numba"] if HAS_NUMBA else ["numpy"]


def get_impls(backend: str) -> dict:
    """Kernel table for an explicit backend, for tests and benchmarks."""
    if backend == "numpy":
        return _NUMPY_IMPLS
    if backend == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _NUMBA_IMPLS
    raise ValueError(f"unknown kernel backend {backend!r}")


def _select_backend() -> str:
    env = os.environ.get("GRAVAMEN_BACKEND", "auto").strip().lower()
    if env in ("", "auto"):
        return "numba" if HAS_NUMBA else "numpy"
    if env in ("numba", "numpy"):
        if env == "numba" and not HAS_NUMBA:
            raise RuntimeError(
                "GRAVAMEN_BACKEND=numba but numba is not installed; "
                "install gravamen[accel] or set GRAVAMEN_BACKEND=numpy"
            )
        return env
    raise ValueError(f"invalid GRAVAMEN_BACKEND={env!r}; expected numba, numpy or auto")


BACKEND = _select_backend()
_ACTIVE = get_impls(BACKEND)

sigmoid_fwd = _ACTIVE["sigmoid_fwd"]
sigmoid_bwd = _ACTIVE["sigmoid_bwd"]
tanh_fwd = _ACTIVE["tanh_fwd"]
tanh_bwd = _ACTIVE["tanh_bwd"]
relu_fwd = _ACTIVE["relu_fwd"]
relu_bwd = _ACTIVE["relu_bwd"]
softmax_rows_fwd = _ACTIVE["softmax_rows_fwd"]
softmax_rows_bwd = _ACTIVE["softmax_rows_bwd"]
layer_norm_fwd = _ACTIVE["layer_norm_fwd"]
layer_norm_bwd = _ACTIVE["layer_norm_bwd"]
softmax_xent_fwd = _ACTIVE["softmax_xent_fwd"]
adam_step = _ACTIVE["adam_step"]
gru_sequence = _ACTIVE["gru_sequence"]
