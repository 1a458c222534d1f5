"""Reusable model components built from tape ops.

All functions take a :class:`ParamStore` plus a name prefix and register
their parameters on first use via the ``create_*`` companions; forwards
then read parameters by name. Padding positions are handled with
multiplicative state masks (recurrent layers) and additive score masks
(attention), so padded slots end with exactly zero attention weight.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError
from .optim import ParamStore
from .tensor import (
    Tensor, add, add_scalar, broadcast_to, concat, constant, div, dropout,
    embedding, getitem, l2_norm, layer_norm, matmul, minimum_scalar, mul,
    recording, relu, reshape, scale, sigmoid, softmax, stack, sub, tanh,
    transpose,
)

LN_EPS = 1e-5
MASK_OFF = -1e30  # additive mask value; exp() underflows to exactly 0.0


def lengths_to_mask(lengths: np.ndarray, max_len: int) -> np.ndarray:
    """(B,) true lengths -> (B, T) float mask, 1 for real positions."""
    return (np.arange(max_len)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)


def linear_params(p: ParamStore, prefix: str, in_dim: int, out_dim: int,
                  rng: np.random.Generator, bias: bool = True) -> None:
    p.matrix(f"{prefix}.w", in_dim, out_dim, rng)
    if bias:
        p.bias(f"{prefix}.b", out_dim)


def linear(p: ParamStore, prefix: str, x: Tensor) -> Tensor:
    out = matmul(x, p[f"{prefix}.w"])
    if f"{prefix}.b" in p:
        out = add(out, p[f"{prefix}.b"])
    return out


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------


def gru_params(p: ParamStore, prefix: str, in_dim: int, hidden: int,
               rng: np.random.Generator) -> None:
    for gate in ("z", "r", "h"):
        p.matrix(f"{prefix}.w_{gate}", in_dim, hidden, rng)
        p.matrix(f"{prefix}.u_{gate}", hidden, hidden, rng)
        p.bias(f"{prefix}.b_{gate}", hidden)


def gru_cell(p: ParamStore, prefix: str, x: Tensor, h_prev: Tensor) -> Tensor:
    """One recurrence step.

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    cand = tanh(W_h x + U_h (r * h) + b_h)
    h'   = (1 - z) * h + z * cand
    """
    if x.shape[-1] != p[f"{prefix}.w_z"].shape[0] or h_prev.shape[-1] != p[f"{prefix}.u_z"].shape[0]:
        raise ShapeError(
            f"gru_cell {prefix!r}: input {x.shape} / state {h_prev.shape} do not "
            f"match parameters"
        )
    z = sigmoid(add(add(matmul(x, p[f"{prefix}.w_z"]), matmul(h_prev, p[f"{prefix}.u_z"])),
                    p[f"{prefix}.b_z"]))
    r = sigmoid(add(add(matmul(x, p[f"{prefix}.w_r"]), matmul(h_prev, p[f"{prefix}.u_r"])),
                    p[f"{prefix}.b_r"]))
    cand = tanh(add(add(matmul(x, p[f"{prefix}.w_h"]), matmul(mul(r, h_prev), p[f"{prefix}.u_h"])),
                    p[f"{prefix}.b_h"]))
    # (1-z)*h + z*cand, written as h + z*(cand - h)
    return add(h_prev, mul(z, sub(cand, h_prev)))


def gru_layer(p: ParamStore, prefix: str, x_seq: Tensor, mask: np.ndarray,
              hidden: int, reverse: bool = False) -> Tensor:
    """Run a GRU over (B, T, D); padded steps carry the state through.

    Returns per-position states (B, T, H) in original time order. Without
    an active tape the whole recurrence runs in one fused kernel; the
    op-by-op path is only needed when gradients will flow.
    """
    if not recording():
        states = kernels.gru_sequence(
            np.ascontiguousarray(x_seq.data), mask,
            p[f"{prefix}.w_z"].data, p[f"{prefix}.u_z"].data, p[f"{prefix}.b_z"].data,
            p[f"{prefix}.w_r"].data, p[f"{prefix}.u_r"].data, p[f"{prefix}.b_r"].data,
            p[f"{prefix}.w_h"].data, p[f"{prefix}.u_h"].data, p[f"{prefix}.b_h"].data,
            reverse,
        )
        return constant(states)
    b, t_len, _ = x_seq.shape
    h = constant(np.zeros((b, hidden)))
    states: list[Tensor | None] = [None] * t_len
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in steps:
        x_t = getitem(x_seq, (slice(None), t))
        h_new = gru_cell(p, prefix, x_t, h)
        m = constant(mask[:, t:t + 1])
        h = add(h, mul(m, sub(h_new, h)))
        states[t] = h
    return stack(states, axis=1)


def bigru_params(p: ParamStore, prefix: str, in_dim: int, hidden: int,
                 rng: np.random.Generator) -> None:
    gru_params(p, f"{prefix}.fw", in_dim, hidden, rng)
    gru_params(p, f"{prefix}.bw", in_dim, hidden, rng)


def bigru_layer(p: ParamStore, prefix: str, x_seq: Tensor, mask: np.ndarray,
                hidden: int) -> Tensor:
    """Concatenated forward and backward GRU states: (B, T, 2H)."""
    fw = gru_layer(p, f"{prefix}.fw", x_seq, mask, hidden, reverse=False)
    bw = gru_layer(p, f"{prefix}.bw", x_seq, mask, hidden, reverse=True)
    return concat([fw, bw], axis=2)


def stacked_bigru_params(p: ParamStore, prefix: str, in_dim: int, hidden: int,
                         depth: int, rng: np.random.Generator) -> None:
    for layer_idx in range(depth):
        bigru_params(p, f"{prefix}.l{layer_idx}", in_dim if layer_idx == 0 else 2 * hidden,
                     hidden, rng)


def stacked_bigru(p: ParamStore, prefix: str, x_seq: Tensor, mask: np.ndarray,
                  hidden: int, depth: int) -> Tensor:
    out = x_seq
    for layer_idx in range(depth):
        out = bigru_layer(p, f"{prefix}.l{layer_idx}", out, mask, hidden)
    return out


# ---------------------------------------------------------------------------
# additive self-attention pooling
# ---------------------------------------------------------------------------


def additive_attention_params(p: ParamStore, prefix: str, dim: int, attn_dim: int,
                              rng: np.random.Generator) -> None:
    p.matrix(f"{prefix}.w", dim, attn_dim, rng)
    p.bias(f"{prefix}.b", attn_dim)
    p.matrix(f"{prefix}.v", attn_dim, 1, rng)


def additive_attention(p: ParamStore, prefix: str, states: Tensor,
                       mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Pool (B, T, D) -> (B, D) with u_i = tanh(W h_i + b), alpha = softmax(v.u).

    Padded positions get exactly zero weight. Also returns the weights as a
    plain array for inspection.
    """
    b, t_len, _ = states.shape
    u = tanh(add(matmul(states, p[f"{prefix}.w"]), p[f"{prefix}.b"]))
    scores = reshape(matmul(u, p[f"{prefix}.v"]), (b, t_len))
    scores = add(scores, constant((1.0 - mask) * MASK_OFF))
    alphas = softmax(scores, axis=1)
    context = reshape(matmul(reshape(alphas, (b, 1, t_len)), states), (b, states.shape[2]))
    return context, alphas.data


# ---------------------------------------------------------------------------
# transformer encoder
# ---------------------------------------------------------------------------


def encoder_block_params(p: ParamStore, prefix: str, dim: int, ffn_dim: int,
                         rng: np.random.Generator) -> None:
    for name in ("q", "k", "v", "o"):
        # key projection carries no bias: softmax scores are invariant to a
        # shared key offset, so that bias would be an untrainable flat direction
        linear_params(p, f"{prefix}.{name}", dim, dim, rng, bias=(name != "k"))
    p.ln_affine(f"{prefix}.ln1", dim)
    linear_params(p, f"{prefix}.ffn1", dim, ffn_dim, rng)
    linear_params(p, f"{prefix}.ffn2", ffn_dim, dim, rng)
    p.ln_affine(f"{prefix}.ln2", dim)


def encoder_block(p: ParamStore, prefix: str, x: Tensor, mask: np.ndarray,
                  n_heads: int, drop: float, train: bool,
                  rng: np.random.Generator | None,
                  trace: dict | None = None) -> Tensor:
    b, t_len, dim = x.shape
    if dim % n_heads != 0:
        raise ShapeError(f"model dim {dim} not divisible by {n_heads} heads")
    head_dim = dim // n_heads

    def split_heads(t: Tensor) -> Tensor:
        return transpose(reshape(t, (b, t_len, n_heads, head_dim)), (0, 2, 1, 3))

    q = split_heads(linear(p, f"{prefix}.q", x))
    k = split_heads(linear(p, f"{prefix}.k", x))
    v = split_heads(linear(p, f"{prefix}.v", x))
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
    scores = add(scores, constant(((1.0 - mask) * MASK_OFF)[:, None, None, :]))
    attn = softmax(scores, axis=-1)
    if trace is not None:
        trace.setdefault("attention", []).append(attn.data)
    ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (b, t_len, dim))
    ctx = linear(p, f"{prefix}.o", ctx)
    ctx = dropout(ctx, drop, train, rng)
    x = layer_norm(add(x, ctx), p[f"{prefix}.ln1.gain"], p[f"{prefix}.ln1.shift"], LN_EPS)
    ffn = linear(p, f"{prefix}.ffn2", relu(linear(p, f"{prefix}.ffn1", x)))
    ffn = dropout(ffn, drop, train, rng)
    return layer_norm(add(x, ffn), p[f"{prefix}.ln2.gain"], p[f"{prefix}.ln2.shift"], LN_EPS)


def encoder_stack_params(p: ParamStore, prefix: str, dim: int, ffn_dim: int,
                         depth: int, rng: np.random.Generator) -> None:
    for i in range(depth):
        encoder_block_params(p, f"{prefix}.b{i}", dim, ffn_dim, rng)


def encoder_stack(p: ParamStore, prefix: str, x: Tensor, mask: np.ndarray,
                  depth: int, n_heads: int, drop: float, train: bool,
                  rng: np.random.Generator | None,
                  trace: dict | None = None) -> Tensor:
    for i in range(depth):
        x = encoder_block(p, f"{prefix}.b{i}", x, mask, n_heads, drop, train, rng, trace)
    return x


# ---------------------------------------------------------------------------
# feature projection and the shifting gate
# ---------------------------------------------------------------------------


def projection_params(p: ParamStore, prefix: str, feature_dim: int,
                      projection_dim: int, rng: np.random.Generator) -> None:
    linear_params(p, prefix, feature_dim, projection_dim, rng)


def project_features(p: ParamStore, prefix: str, features: np.ndarray) -> Tensor:
    """Affine map of raw feature vectors to the projection width."""
    feats = np.asarray(features, dtype=np.float64)
    expected = p[f"{prefix}.w"].shape[0]
    if feats.ndim != 2 or feats.shape[1] != expected:
        raise ShapeError(
            f"feature dimension {feats.shape} does not match projection input {expected}"
        )
    return linear(p, prefix, constant(feats))


def gate_params(p: ParamStore, prefix: str, embed_dim: int, projection_dim: int,
                rng: np.random.Generator) -> None:
    linear_params(p, f"{prefix}.gate", embed_dim + projection_dim, embed_dim, rng)
    linear_params(p, f"{prefix}.shift", projection_dim, embed_dim, rng)


def gate_displacement(p: ParamStore, prefix: str, e: Tensor, proj: Tensor) -> Tensor:
    """Per-position displacement g_t * (W p + b) with g_t = sigmoid from [e_t; p]."""
    b, t_len, embed_dim = e.shape
    proj_dim = proj.shape[1]
    p_rows = broadcast_to(reshape(proj, (b, 1, proj_dim)), (b, t_len, proj_dim))
    gate = sigmoid(linear(p, f"{prefix}.gate", concat([e, p_rows], axis=2)))
    base = reshape(linear(p, f"{prefix}.shift", proj), (b, 1, embed_dim))
    return mul(gate, base)


def norm_clamped_shift(e: Tensor, disp: Tensor, gate_scale: float,
                       gate_eps: float) -> Tensor:
    """e_t + s_t * h_t with s_t = min(lambda * |e_t| / (|h_t| + eps), 1)."""
    e_norm = l2_norm(e, axis=-1, keepdims=True)
    h_norm = l2_norm(disp, axis=-1, keepdims=True)
    ratio = div(scale(e_norm, gate_scale), add_scalar(h_norm, gate_eps))
    s = minimum_scalar(ratio, 1.0)
    return add(e, mul(s, disp))
