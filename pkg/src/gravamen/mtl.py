"""Joint binary-complaint + severity learning.

Five architectures share one contract: forward returns a binary logit (for
a sigmoid head) and five-class severity logits (for a softmax head), and
training minimizes the weighted joint objective

    joint = (1 - alpha) * binary_loss + alpha * severity_loss.

Recurrent variants follow a shared-encoder pattern: a stacked BiGRU trunk
feeding per-task BiGRU-attention branches, optionally doubled with a
binary-only encoder whose output is concatenated (plain or with the
(1-beta)/beta weighting) into the binary branch. The gated-transformer
variants reuse the fused embedding layer from the single-task model, with
either one shared encoder stack under both heads or two independent
stacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary
from .errors import DataError
from .layers import (
    additive_attention, additive_attention_params, bigru_layer, bigru_params,
    dropout, encoder_stack, encoder_stack_params, gate_params, lengths_to_mask,
    linear, linear_params, projection_params, stacked_bigru,
    stacked_bigru_params,
)
from .lingfeat import FEATURE_DIMS
from .models import (
    EncodedDataset, ModelSpec, TrainConfig, TrainHistory,
    _embed_params, _embed_tokens, project_features, shifting_gate,
    train_model,
)
from .optim import ParamStore
from .tensor import (
    Tensor, add, bce_with_logits, concat, embedding, getitem, reshape, scale,
    sigmoid, softmax, softmax_cross_entropy,
)

MTL_KINDS = (
    "mtl_hard_sharing",
    "mtl_double_encoder",
    "mtl_gated_double_encoder",
    "mtl_m",
    "mtl_m_de",
)

N_SEVERITY_CLASSES = 5


@dataclass
class MTLConfig:
    alpha: float = 0.1
    beta: float = 0.5
    stacked_layers: int = 2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise DataError(f"beta must lie in [0, 1], got {self.beta}")
        if self.stacked_layers < 1:
            raise DataError("stacked_layers must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def joint_loss(l_com, l_sev, alpha: float):
    """(1 - alpha) * binary loss + alpha * severity loss.

    Accepts floats (bookkeeping) or loss tensors (training).
    """
    if not 0.0 <= alpha <= 1.0:
        raise DataError(f"alpha must lie in [0, 1], got {alpha}")
    if isinstance(l_com, Tensor) or isinstance(l_sev, Tensor):
        return add(scale(l_com, 1.0 - alpha), scale(l_sev, alpha))
    return (1.0 - alpha) * l_com + alpha * l_sev


# ---------------------------------------------------------------------------
# parameter builders
# ---------------------------------------------------------------------------


def _branch_params(p: ParamStore, prefix: str, in_dim: int, hidden: int,
                   head_out: int, rng: np.random.Generator) -> None:
    """A BiGRU-attention branch: encoder (in -> 2H), pooled, linear head."""
    bigru_params(p, f"{prefix}.enc", in_dim, hidden, rng)
    additive_attention_params(p, f"{prefix}.attn", 2 * hidden, hidden, rng)
    linear_params(p, f"{prefix}.head", 2 * hidden, head_out, rng)


def build_mtl_params(kind: str, spec: ModelSpec, mtl: MTLConfig,
                     vocab_size: int, seed: int) -> ParamStore:
    p = ParamStore()
    rng = np.random.default_rng(seed)
    h = spec.hidden
    if kind == "mtl_hard_sharing":
        p.embedding_table("tok", vocab_size, spec.embed_dim, rng)
        stacked_bigru_params(p, "shared", spec.embed_dim, h, mtl.stacked_layers, rng)
        _branch_params(p, "bin", 2 * h, h, 1, rng)
        _branch_params(p, "sev", 2 * h, h, N_SEVERITY_CLASSES, rng)
    elif kind in ("mtl_double_encoder", "mtl_gated_double_encoder"):
        p.embedding_table("tok", vocab_size, spec.embed_dim, rng)
        stacked_bigru_params(p, "shared", spec.embed_dim, h, mtl.stacked_layers, rng)
        stacked_bigru_params(p, "task", spec.embed_dim, h, mtl.stacked_layers, rng)
        _branch_params(p, "bin", 4 * h, h, 1, rng)
        _branch_params(p, "sev", 2 * h, h, N_SEVERITY_CLASSES, rng)
    elif kind == "mtl_m":
        _embed_params(p, spec, vocab_size, rng)
        projection_params(p, "proj", FEATURE_DIMS[spec.feature_mode], spec.projection_dim, rng)
        gate_params(p, "fuse", spec.embed_dim, spec.projection_dim, rng)
        encoder_stack_params(p, "enc", spec.embed_dim, spec.ffn_dim, spec.layers, rng)
        linear_params(p, "bin_head", spec.embed_dim, 1, rng)
        linear_params(p, "sev_head", spec.embed_dim, N_SEVERITY_CLASSES, rng)
    elif kind == "mtl_m_de":
        _embed_params(p, spec, vocab_size, rng)
        projection_params(p, "proj", FEATURE_DIMS[spec.feature_mode], spec.projection_dim, rng)
        gate_params(p, "fuse", spec.embed_dim, spec.projection_dim, rng)
        encoder_stack_params(p, "enc_bin", spec.embed_dim, spec.ffn_dim, spec.layers, rng)
        encoder_stack_params(p, "enc_sev", spec.embed_dim, spec.ffn_dim, spec.layers, rng)
        linear_params(p, "bin_head", spec.embed_dim, 1, rng)
        linear_params(p, "sev_head", spec.embed_dim, N_SEVERITY_CLASSES, rng)
    else:
        raise DataError(f"unknown MTL architecture {kind!r}")
    return p


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _branch(p: ParamStore, prefix: str, states, mask, hidden: int,
            trace: dict | None):
    enc = bigru_layer(p, f"{prefix}.enc", states, mask, hidden)
    ctx, alphas = additive_attention(p, f"{prefix}.attn", enc, mask)
    if trace is not None:
        trace[f"{prefix}_attention"] = alphas
    return linear(p, f"{prefix}.head", ctx)


def mtl_hard_sharing_forward(p: ParamStore, spec: ModelSpec, mtl: MTLConfig,
                             ids, lengths, train=False, rng=None, trace=None):
    mask = lengths_to_mask(lengths, ids.shape[1])
    emb = dropout(embedding(p["tok"], ids), spec.dropout, train, rng)
    shared = stacked_bigru(p, "shared", emb, mask, spec.hidden, mtl.stacked_layers)
    bin_logit = reshape(_branch(p, "bin", shared, mask, spec.hidden, trace), (ids.shape[0],))
    sev_logits = _branch(p, "sev", shared, mask, spec.hidden, trace)
    return bin_logit, sev_logits


def mtl_double_encoder_forward(p: ParamStore, spec: ModelSpec, mtl: MTLConfig,
                               ids, lengths, train=False, rng=None, trace=None,
                               beta: float | None = None):
    """Shared encoder feeds severity; binary sees [task-specific ; shared].

    With ``beta`` set, the two halves are weighted (1-beta) / beta before
    concatenation (the gated variant).
    """
    mask = lengths_to_mask(lengths, ids.shape[1])
    emb = dropout(embedding(p["tok"], ids), spec.dropout, train, rng)
    shared = stacked_bigru(p, "shared", emb, mask, spec.hidden, mtl.stacked_layers)
    task = stacked_bigru(p, "task", emb, mask, spec.hidden, mtl.stacked_layers)
    if beta is None:
        combined = concat([task, shared], axis=2)
    else:
        combined = concat([scale(task, 1.0 - beta), scale(shared, beta)], axis=2)
    if trace is not None:
        trace["combined"] = combined.data
    bin_logit = reshape(_branch(p, "bin", combined, mask, spec.hidden, trace), (ids.shape[0],))
    sev_logits = _branch(p, "sev", shared, mask, spec.hidden, trace)
    return bin_logit, sev_logits


def mtl_gated_double_encoder_forward(p: ParamStore, spec: ModelSpec, mtl: MTLConfig,
                                     ids, lengths, train=False, rng=None, trace=None):
    return mtl_double_encoder_forward(p, spec, mtl, ids, lengths, train, rng,
                                      trace, beta=mtl.beta)


def mtl_m_forward(p: ParamStore, spec: ModelSpec, ids, lengths, features,
                  train=False, rng=None, trace=None):
    """Gated-transformer trunk with two heads on the pooled representation."""
    if features is None:
        raise DataError("mtl_m requires linguistic feature vectors")
    seq, mask = _embed_tokens(p, spec, ids, lengths)
    proj = project_features(p, "proj", features)
    h = shifting_gate(p, spec, seq, proj, train, rng)
    h = encoder_stack(p, "enc", h, mask, spec.layers, spec.heads,
                      spec.dropout, train, rng, trace)
    pooled = getitem(h, (slice(None), 0))
    bin_logit = reshape(linear(p, "bin_head", pooled), (ids.shape[0],))
    sev_logits = linear(p, "sev_head", pooled)
    return bin_logit, sev_logits


def mtl_m_de_forward(p: ParamStore, spec: ModelSpec, ids, lengths, features,
                     train=False, rng=None, trace=None):
    """One fused embedding feeding two independent encoder stacks."""
    if features is None:
        raise DataError("mtl_m_de requires linguistic feature vectors")
    seq, mask = _embed_tokens(p, spec, ids, lengths)
    proj = project_features(p, "proj", features)
    fused = shifting_gate(p, spec, seq, proj, train, rng)
    h_bin = encoder_stack(p, "enc_bin", fused, mask, spec.layers, spec.heads,
                          spec.dropout, train, rng, trace)
    h_sev = encoder_stack(p, "enc_sev", fused, mask, spec.layers, spec.heads,
                          spec.dropout, train, rng, trace)
    bin_logit = reshape(linear(p, "bin_head", getitem(h_bin, (slice(None), 0))), (ids.shape[0],))
    sev_logits = linear(p, "sev_head", getitem(h_sev, (slice(None), 0)))
    return bin_logit, sev_logits


# ---------------------------------------------------------------------------
# model wrapper and training
# ---------------------------------------------------------------------------


class MTLModel:
    """Joint model: sigmoid binary head plus 5-class severity softmax head."""

    full_batch = False

    def __init__(self, kind: str, spec: ModelSpec, mtl: MTLConfig,
                 vocab: Vocabulary, seed: int):
        if kind not in MTL_KINDS:
            raise DataError(f"unknown MTL architecture {kind!r}")
        if kind in ("mtl_m", "mtl_m_de") and spec.feature_mode == "none":
            raise DataError(f"{kind} requires a feature mode")
        self.kind = kind
        self.spec = spec
        self.mtl = mtl
        self.vocab = vocab
        self.seed = seed
        self.params = build_mtl_params(kind, spec, mtl, len(vocab), seed)

    def forward(self, ds: EncodedDataset, train: bool = False, rng=None,
                trace: dict | None = None):
        if self.kind == "mtl_hard_sharing":
            return mtl_hard_sharing_forward(self.params, self.spec, self.mtl,
                                            ds.ids, ds.lengths, train, rng, trace)
        if self.kind == "mtl_double_encoder":
            return mtl_double_encoder_forward(self.params, self.spec, self.mtl,
                                              ds.ids, ds.lengths, train, rng, trace)
        if self.kind == "mtl_gated_double_encoder":
            return mtl_gated_double_encoder_forward(self.params, self.spec, self.mtl,
                                                    ds.ids, ds.lengths, train, rng, trace)
        if self.kind == "mtl_m":
            return mtl_m_forward(self.params, self.spec, ds.ids, ds.lengths,
                                 ds.features, train, rng, trace)
        return mtl_m_de_forward(self.params, self.spec, ds.ids, ds.lengths,
                                ds.features, train, rng, trace)

    def loss_on(self, ds: EncodedDataset, train: bool, rng, l2: float = 0.0
                ) -> tuple[Tensor, dict[str, float]]:
        if ds.binary is None:
            raise DataError("joint training requires both binary and severity labels")
        bin_logit, sev_logits = self.forward(ds, train=train, rng=rng)
        l_com = bce_with_logits(bin_logit, ds.binary)
        l_sev = softmax_cross_entropy(sev_logits, ds.labels)
        joint = joint_loss(l_com, l_sev, self.mtl.alpha)
        return joint, {
            "com": float(l_com.data),
            "sev": float(l_sev.data),
            "joint": float(joint.data),
        }

    def predict(self, ds: EncodedDataset, batch_size: int = 256
                ) -> tuple[np.ndarray, np.ndarray]:
        """(binary predictions as 0/1 complaint indicator, severity classes)."""
        bin_out = np.zeros(len(ds), dtype=np.int64)
        sev_out = np.zeros(len(ds), dtype=np.int64)
        for start in range(0, len(ds), batch_size):
            idx = np.arange(start, min(start + batch_size, len(ds)))
            bin_logit, sev_logits = self.forward(ds.subset(idx))
            bin_out[idx] = (sigmoid(bin_logit).data >= 0.5).astype(np.int64)
            sev_out[idx] = softmax(sev_logits, axis=1).data.argmax(axis=1)
        return bin_out, sev_out


def train_mtl(model: MTLModel, cfg: TrainConfig, train_ds: EncodedDataset,
              val_ds: EncodedDataset) -> TrainHistory:
    """Joint training; selection by minimum validation joint loss."""
    for ds in (train_ds, val_ds):
        if ds.binary is None:
            raise DataError("every document in a joint run needs both labels")
    return train_model(model, cfg, train_ds, val_ds)
