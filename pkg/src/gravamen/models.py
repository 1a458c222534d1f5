"""Single-task severity / binary classifiers and the shared training loop.

Five model kinds: ``majority`` (constant most-frequent-label), ``lr_bow``
(multinomial logistic regression over token counts with L2, trained
full-batch), ``bigru_att`` (bidirectional GRU with additive self-attention
pooling), ``transformer`` (small from-scratch encoder pooled at a prepended
classification position), and ``m_transformer`` (the same encoder with
projected linguistic features fused into the embeddings through a
norm-clamped shifting gate).

Training minimizes categorical cross-entropy with Adam (plain gradient
descent for the bag-of-words model), records the validation loss after
every epoch, and returns the parameter snapshot taken at the minimum.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import (
    BinaryLabel, Document, SEVERITY_FIVE, SEVERITY_FOUR, Vocabulary, encode,
)
from .errors import DataError, NumericalError, ShapeError
from .layers import (
    LN_EPS, additive_attention, additive_attention_params, bigru_layer,
    bigru_params, dropout, encoder_stack, encoder_stack_params,
    gate_displacement, gate_params, lengths_to_mask, linear, linear_params,
    norm_clamped_shift, project_features, projection_params,
)
from .lingfeat import FEATURE_DIMS
from .optim import Adam, ParamStore, SGD
from .tensor import (
    Tape, Tensor, add, backward, broadcast_to, concat, constant, embedding,
    getitem, layer_norm, matmul, mul, reshape, scale, softmax,
    softmax_cross_entropy, sum_,
)

MODEL_KINDS = ("majority", "lr_bow", "bigru_att", "transformer", "m_transformer")


@dataclass
class ModelSpec:
    kind: str
    feature_mode: str = "none"
    hidden: int = 128
    dropout: float = 0.2
    embed_dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    projection_dim: int = 200
    gate_scale: float = 0.5
    gate_eps: float = 1e-6
    max_len: int = 50

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DataError(f"unknown model kind {self.kind!r}")
        if self.kind == "m_transformer" and self.feature_mode == "none":
            raise DataError("m_transformer requires a feature mode (emo, top or emo+top)")
        if self.feature_mode not in ("none",) + tuple(FEATURE_DIMS):
            raise DataError(f"unknown feature mode {self.feature_mode!r}")
        for name in ("hidden", "embed_dim", "layers", "heads", "ffn_dim",
                     "projection_dim", "max_len"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError("dropout must lie in [0, 1)")
        if self.gate_scale <= 0 or self.gate_eps <= 0:
            raise DataError("gate_scale and gate_eps must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 13
    l2: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.l2 < 0:
            raise DataError("l2 must be >= 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# encoded datasets
# ---------------------------------------------------------------------------


@dataclass
class EncodedDataset:
    doc_ids: list[str]
    ids: np.ndarray                    # (N, L) int64
    lengths: np.ndarray                # (N,) int64
    labels: np.ndarray                 # (N,) int64 task class indices
    features: np.ndarray | None = None  # (N, F)
    counts: np.ndarray | None = None    # (N, V) bag-of-words
    binary: np.ndarray | None = None    # (N,) float 0/1 complaint indicator

    def __len__(self) -> int:
        return len(self.doc_ids)

    def subset(self, idx: np.ndarray) -> "EncodedDataset":
        return EncodedDataset(
            doc_ids=[self.doc_ids[i] for i in idx],
            ids=self.ids[idx],
            lengths=self.lengths[idx],
            labels=self.labels[idx],
            features=None if self.features is None else self.features[idx],
            counts=None if self.counts is None else self.counts[idx],
            binary=None if self.binary is None else self.binary[idx],
        )


def severity_class_index(doc: Document, five: bool) -> int:
    label = doc.severity_label
    if label is None:
        raise DataError(f"document {doc.id!r} has no severity label")
    classes = SEVERITY_FIVE if five else SEVERITY_FOUR
    if label not in classes:
        raise DataError(f"document {doc.id!r}: label {label.value} invalid for this task")
    return classes.index(label)


def binary_class_index(doc: Document) -> int:
    if doc.binary_label is None:
        raise DataError(f"document {doc.id!r} has no binary label")
    return 0 if doc.binary_label is BinaryLabel.COMPLAINT else 1


def encode_dataset(
    docs: Sequence[Document],
    vocab: Vocabulary,
    max_len: int,
    task: str,
    feature_matrix: np.ndarray | None = None,
    with_counts: bool = False,
) -> EncodedDataset:
    """Turn documents into padded id arrays plus task labels.

    ``task`` is severity (4 classes), binary (2 classes) or mtl (5 severity
    classes plus a 0/1 complaint target). Bag-of-words counts use the full
    token list, not the truncated window.
    """
    n = len(docs)
    ids = np.zeros((n, max_len), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64)
    binary = None
    counts = None
    if task == "mtl":
        binary = np.zeros(n, dtype=np.float64)
    if with_counts:
        counts = np.zeros((n, len(vocab)), dtype=np.float64)
    for i, doc in enumerate(docs):
        ids[i], lengths[i] = encode(doc, vocab, max_len)
        if task == "severity":
            labels[i] = severity_class_index(doc, five=False)
        elif task == "binary":
            labels[i] = binary_class_index(doc)
        elif task == "mtl":
            labels[i] = severity_class_index(doc, five=True)
            binary[i] = 1.0 if doc.binary_label is BinaryLabel.COMPLAINT else 0.0
        else:
            raise DataError(f"unknown task {task!r}")
        if with_counts:
            for tok in doc.tokens:
                counts[i, vocab.lookup(tok)] += 1.0
    return EncodedDataset(
        doc_ids=[d.id for d in docs], ids=ids, lengths=lengths, labels=labels,
        features=feature_matrix, counts=counts, binary=binary,
    )


def task_n_classes(task: str) -> int:
    return {"severity": 4, "binary": 2, "mtl": 5}[task]


# ---------------------------------------------------------------------------
# majority baseline
# ---------------------------------------------------------------------------


def majority_predict(train_labels: Sequence[int], n_eval: int) -> np.ndarray:
    """Constant prediction of the most frequent label; ties -> smallest index."""
    if len(train_labels) == 0:
        raise DataError("majority baseline needs at least one training label")
    counts = Counter(int(l) for l in train_labels)
    best = min(counts, key=lambda l: (-counts[l], l))
    return np.full(n_eval, best, dtype=np.int64)


class MajorityModel:
    kind = "majority"

    def __init__(self):
        self.label: int | None = None

    def fit(self, labels: Sequence[int]) -> None:
        self.label = int(majority_predict(labels, 1)[0])

    def predict(self, ds: EncodedDataset) -> np.ndarray:
        if self.label is None:
            raise DataError("majority model not fitted")
        return np.full(len(ds), self.label, dtype=np.int64)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def build_lr_bow_params(vocab_size: int, n_classes: int, seed: int) -> ParamStore:
    p = ParamStore()
    rng = np.random.default_rng(seed)
    linear_params(p, "head", vocab_size, n_classes, rng)
    return p


def lr_bow_forward(p: ParamStore, counts: np.ndarray) -> Tensor:
    return linear(p, "head", constant(np.asarray(counts, dtype=np.float64)))


def build_bigru_att_params(spec: ModelSpec, vocab_size: int, n_classes: int,
                           seed: int) -> ParamStore:
    p = ParamStore()
    rng = np.random.default_rng(seed)
    p.embedding_table("tok", vocab_size, spec.embed_dim, rng)
    bigru_params(p, "enc", spec.embed_dim, spec.hidden, rng)
    additive_attention_params(p, "attn", 2 * spec.hidden, spec.hidden, rng)
    linear_params(p, "head", 2 * spec.hidden, n_classes, rng)
    return p


def bigru_att_forward(p: ParamStore, spec: ModelSpec, ids: np.ndarray,
                      lengths: np.ndarray, train: bool = False,
                      rng: np.random.Generator | None = None,
                      trace: dict | None = None) -> Tensor:
    if np.any(np.asarray(lengths) == 0):
        raise DataError("cannot classify an empty (zero-length) sequence")
    mask = lengths_to_mask(lengths, ids.shape[1])
    emb = dropout(embedding(p["tok"], ids), spec.dropout, train, rng)
    states = bigru_layer(p, "enc", emb, mask, spec.hidden)
    context, alphas = additive_attention(p, "attn", states, mask)
    if trace is not None:
        trace["attention"] = alphas
    return linear(p, "head", context)


def _embed_params(p: ParamStore, spec: ModelSpec, vocab_size: int,
                  rng: np.random.Generator) -> None:
    p.embedding_table("tok", vocab_size, spec.embed_dim, rng)
    p.embedding_table("pos", spec.max_len + 1, spec.embed_dim, rng)
    p.embedding_table("cls", 1, spec.embed_dim, rng)
    p.ln_affine("emb_ln", spec.embed_dim)


def _embed_tokens(p: ParamStore, spec: ModelSpec, ids: np.ndarray,
                  lengths: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Token + position embeddings with a prepended classification slot."""
    ids = np.asarray(ids)
    b, t_len = ids.shape
    if t_len + 1 > p["pos"].shape[0]:
        raise ShapeError(
            f"sequence length {t_len} exceeds positional table ({p['pos'].shape[0] - 1})"
        )
    tok = embedding(p["tok"], ids)
    cls = broadcast_to(reshape(p["cls"], (1, 1, spec.embed_dim)), (b, 1, spec.embed_dim))
    seq = concat([cls, tok], axis=1)
    pos = getitem(p["pos"], slice(0, t_len + 1))
    seq = add(seq, pos)
    mask = np.concatenate([np.ones((b, 1)), lengths_to_mask(lengths, t_len)], axis=1)
    return seq, mask


def build_transformer_params(spec: ModelSpec, vocab_size: int, n_classes: int,
                             seed: int) -> ParamStore:
    p = ParamStore()
    rng = np.random.default_rng(seed)
    _embed_params(p, spec, vocab_size, rng)
    if spec.kind == "m_transformer":
        projection_params(p, "proj", FEATURE_DIMS[spec.feature_mode], spec.projection_dim, rng)
        gate_params(p, "fuse", spec.embed_dim, spec.projection_dim, rng)
    encoder_stack_params(p, "enc", spec.embed_dim, spec.ffn_dim, spec.layers, rng)
    linear_params(p, "head", spec.embed_dim, n_classes, rng)
    return p


def shifting_gate(p: ParamStore, spec: ModelSpec, e: Tensor, proj: Tensor,
                  train: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Fuse projected features into embeddings with a bounded shift.

    Per position: gate from [e_t; p], displacement gate * (W p + b), shift
    scaled so its norm never exceeds gate_scale * |e_t| (plus eps slack),
    then layer norm and dropout.
    """
    disp = gate_displacement(p, "fuse", e, proj)
    shifted = norm_clamped_shift(e, disp, spec.gate_scale, spec.gate_eps)
    out = layer_norm(shifted, p["emb_ln.gain"], p["emb_ln.shift"], LN_EPS)
    return dropout(out, spec.dropout, train, rng)


def transformer_forward(p: ParamStore, spec: ModelSpec, ids: np.ndarray,
                        lengths: np.ndarray, train: bool = False,
                        rng: np.random.Generator | None = None,
                        trace: dict | None = None) -> Tensor:
    seq, mask = _embed_tokens(p, spec, ids, lengths)
    h = layer_norm(seq, p["emb_ln.gain"], p["emb_ln.shift"], LN_EPS)
    h = dropout(h, spec.dropout, train, rng)
    h = encoder_stack(p, "enc", h, mask, spec.layers, spec.heads,
                      spec.dropout, train, rng, trace)
    pooled = getitem(h, (slice(None), 0))
    return linear(p, "head", pooled)


def m_transformer_forward(p: ParamStore, spec: ModelSpec, ids: np.ndarray,
                          lengths: np.ndarray, features: np.ndarray,
                          train: bool = False,
                          rng: np.random.Generator | None = None,
                          trace: dict | None = None) -> Tensor:
    if features is None:
        raise DataError("m_transformer requires linguistic feature vectors")
    seq, mask = _embed_tokens(p, spec, ids, lengths)
    proj = project_features(p, "proj", features)
    h = shifting_gate(p, spec, seq, proj, train, rng)
    h = encoder_stack(p, "enc", h, mask, spec.layers, spec.heads,
                      spec.dropout, train, rng, trace)
    pooled = getitem(h, (slice(None), 0))
    return linear(p, "head", pooled)


# ---------------------------------------------------------------------------
# trainable model wrapper
# ---------------------------------------------------------------------------


class Classifier:
    """A spec-selected single-task model with its parameters and vocab."""

    def __init__(self, spec: ModelSpec, vocab: Vocabulary, n_classes: int, seed: int):
        self.spec = spec
        self.vocab = vocab
        self.n_classes = n_classes
        self.seed = seed
        if spec.kind == "lr_bow":
            self.params = build_lr_bow_params(len(vocab), n_classes, seed)
        elif spec.kind == "bigru_att":
            self.params = build_bigru_att_params(spec, len(vocab), n_classes, seed)
        elif spec.kind in ("transformer", "m_transformer"):
            self.params = build_transformer_params(spec, len(vocab), n_classes, seed)
        else:
            raise DataError(f"{spec.kind!r} is not a trainable classifier kind")

    @property
    def full_batch(self) -> bool:
        return self.spec.kind == "lr_bow"

    def logits(self, ds: EncodedDataset, train: bool = False,
               rng: np.random.Generator | None = None,
               trace: dict | None = None) -> Tensor:
        kind = self.spec.kind
        if kind == "lr_bow":
            if ds.counts is None:
                raise DataError("lr_bow needs bag-of-words counts")
            return lr_bow_forward(self.params, ds.counts)
        if kind == "bigru_att":
            return bigru_att_forward(self.params, self.spec, ds.ids, ds.lengths,
                                     train, rng, trace)
        if kind == "transformer":
            return transformer_forward(self.params, self.spec, ds.ids, ds.lengths,
                                       train, rng, trace)
        return m_transformer_forward(self.params, self.spec, ds.ids, ds.lengths,
                                     ds.features, train, rng, trace)

    def loss_on(self, ds: EncodedDataset, train: bool, rng, l2: float = 0.0
                ) -> tuple[Tensor, dict[str, float]]:
        logits = self.logits(ds, train=train, rng=rng)
        loss = softmax_cross_entropy(logits, ds.labels)
        if l2 > 0.0 and self.spec.kind == "lr_bow":
            w = self.params["head.w"]
            loss = add(loss, scale(sum_(mul(w, w)), l2))
        return loss, {"loss": float(loss.data)}

    def predict_proba(self, ds: EncodedDataset, batch_size: int = 256) -> np.ndarray:
        out = np.zeros((len(ds), self.n_classes))
        for start in range(0, len(ds), batch_size):
            idx = np.arange(start, min(start + batch_size, len(ds)))
            logits = self.logits(ds.subset(idx))
            out[idx] = softmax(logits, axis=1).data
        return out

    def predict(self, ds: EncodedDataset) -> np.ndarray:
        return self.predict_proba(ds).argmax(axis=1)


# ---------------------------------------------------------------------------
# training loop with validation-loss model selection
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    parts: dict[str, float] = field(default_factory=dict)


@dataclass
class TrainHistory:
    records: list[EpochRecord]
    best_epoch: int
    best_val_loss: float

    def to_dict(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "epochs": [
                {"epoch": r.epoch, "train_loss": r.train_loss,
                 "val_loss": r.val_loss, **r.parts}
                for r in self.records
            ],
        }


def _check_disjoint(train_ds: EncodedDataset, val_ds: EncodedDataset) -> None:
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise DataError("train and validation splits must be non-empty")
    overlap = set(train_ds.doc_ids) & set(val_ds.doc_ids)
    if overlap:
        raise DataError(f"train/validation overlap on {len(overlap)} documents")


def eval_loss(model, ds: EncodedDataset, l2: float = 0.0, batch_size: int = 256) -> float:
    """Size-weighted mean loss over a dataset in eval mode."""
    total, n = 0.0, 0
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        loss, _ = model.loss_on(ds.subset(idx), train=False, rng=None, l2=l2)
        total += float(loss.data) * len(idx)
        n += len(idx)
    return total / n


def train_model(model, cfg: TrainConfig, train_ds: EncodedDataset,
                val_ds: EncodedDataset) -> TrainHistory:
    """Minibatch Adam (or full-batch gradient descent for lr_bow) with the
    returned parameters snapshotted at the minimum validation loss."""
    _check_disjoint(train_ds, val_ds)
    rng = np.random.default_rng([cfg.seed, 1])
    params = model.params
    if model.full_batch:
        optimizer = SGD(params, cfg.learning_rate)
        batch_size = len(train_ds)
    else:
        optimizer = Adam(params, cfg.learning_rate)
        batch_size = cfg.batch_size

    records: list[EpochRecord] = []
    best_epoch, best_val = -1, np.inf
    best_snapshot: dict[str, np.ndarray] | None = None
    n = len(train_ds)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if not model.full_batch else np.arange(n)
        epoch_loss, seen = 0.0, 0
        parts_sum: dict[str, float] = {}
        for start in range(0, n, batch_size):
            batch = train_ds.subset(order[start:start + batch_size])
            with Tape() as tape:
                loss, parts = model.loss_on(batch, train=True, rng=rng, l2=cfg.l2)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch offset {start} "
                    f"(lr={cfg.learning_rate}, batch_size={batch_size})"
                )
            params.zero_grads()
            backward(loss, tape, params=params.tensors())
            optimizer.step()
            epoch_loss += value * len(batch)
            seen += len(batch)
            for k, v in parts.items():
                parts_sum[k] = parts_sum.get(k, 0.0) + v * len(batch)
        val_loss = eval_loss(model, val_ds, l2=cfg.l2)
        record = EpochRecord(
            epoch=epoch,
            train_loss=epoch_loss / seen,
            val_loss=val_loss,
            parts={f"train_{k}": v / seen for k, v in parts_sum.items()},
        )
        records.append(record)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_snapshot = params.snapshot()
    params.load(best_snapshot)
    return TrainHistory(records=records, best_epoch=best_epoch, best_val_loss=best_val)
