"""Linguistic feature extraction for the fusion models.

Two document-level vectors feed the shifting gate: a 9-entry
emotion/sentiment vector ordered [positive, negative, neutral, anger,
disgust, fear, joy, sadness, surprise], and a 200-entry topic distribution
(fraction of tokens per cluster). Both come from pluggable providers, so
precomputed vectors from any external scorer can be dropped in via a JSONL
file keyed by document id.

Resource formats: lexicon = JSON object {category: [words]} covering the
six emotions plus the positive/negative polarities; clusters = TSV
``token<TAB>cluster_id`` with ids below 200; precomputed features = JSONL
``{"id": ..., "emotion": [9 floats], "topic": [200 floats]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .corpus import Document
from .errors import DataError

EMOTION_DIM = 9
TOPIC_DIM = 200

SENTIMENT_FIELDS = ("positive", "negative", "neutral")
EMOTION_FIELDS = ("anger", "disgust", "fear", "joy", "sadness", "surprise")
LEXICON_CATEGORIES = EMOTION_FIELDS + ("positive", "negative")

FEATURE_MODES = ("emo", "top", "emo+top")
FEATURE_DIMS = {"emo": EMOTION_DIM, "top": TOPIC_DIM, "emo+top": EMOTION_DIM + TOPIC_DIM}


@dataclass
class LinguisticFeatures:
    emotion: np.ndarray  # (9,)
    topic: np.ndarray    # (200,)

    def __post_init__(self):
        self.emotion = np.asarray(self.emotion, dtype=np.float64)
        self.topic = np.asarray(self.topic, dtype=np.float64)
        if self.emotion.shape != (EMOTION_DIM,):
            raise DataError(f"emotion vector must have {EMOTION_DIM} entries")
        if self.topic.shape != (TOPIC_DIM,):
            raise DataError(f"topic vector must have {TOPIC_DIM} entries")
        for name, vec in (("emotion", self.emotion), ("topic", self.topic)):
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{name} vector contains NaN/Inf")
            if vec.min() < 0.0 or vec.max() > 1.0:
                raise DataError(f"{name} vector entries must lie in [0, 1]")
        if abs(self.emotion[:3].sum() - 1.0) > 1e-9:
            raise DataError("sentiment triple must sum to 1")
        if self.topic.sum() > 1.0 + 1e-9:
            raise DataError("topic distribution must sum to at most 1")


@dataclass
class EmotionLexicon:
    words: dict[str, frozenset[str]]

    def __post_init__(self):
        for cat in LEXICON_CATEGORIES:
            if not self.words.get(cat):
                raise DataError(f"lexicon category {cat!r} is missing or empty")


# A handful of obvious cue words so the pipeline runs without external
# resources; real experiments should load a proper lexicon file.
DEFAULT_LEXICON = EmotionLexicon({
    "anger": frozenset("angry furious rage mad annoyed outraged hate hateful irritated".split()),
    "disgust": frozenset("disgusting gross nasty awful ew vile revolting yuck".split()),
    "fear": frozenset("scared afraid terrified worry worried anxious fear panic".split()),
    "joy": frozenset("happy joy delighted glad great love lovely wonderful awesome".split()),
    "sadness": frozenset("sad unhappy depressed miserable cry crying sorrow disappointed".split()),
    "surprise": frozenset("surprised shocked wow astonished unbelievable unexpected".split()),
    "positive": frozenset("good great excellent awesome love lovely nice best amazing thanks helpful".split()),
    "negative": frozenset("bad terrible awful worst horrible broken useless poor fail disappointing".split()),
})


def load_lexicon(path: str | Path) -> EmotionLexicon:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read lexicon {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise DataError(f"lexicon {path} must be a JSON object of category -> word list")
    words = {}
    for cat, values in obj.items():
        if cat not in LEXICON_CATEGORIES:
            raise DataError(f"lexicon {path}: unknown category {cat!r}")
        words[cat] = frozenset(str(w).lower() for w in values)
    return EmotionLexicon(words)


@dataclass
class TopicClusters:
    assignment: dict[str, int]

    def __post_init__(self):
        for tok, cid in self.assignment.items():
            if not 0 <= cid < TOPIC_DIM:
                raise DataError(f"cluster id {cid} for token {tok!r} outside [0, {TOPIC_DIM})")


def load_clusters(path: str | Path) -> TopicClusters:
    path = Path(path)
    assignment: dict[str, int] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read cluster file {path}: {exc}") from None
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{line_no}: expected token<TAB>cluster_id")
        token, cid = parts
        try:
            assignment[token] = int(cid)
        except ValueError:
            raise DataError(f"{path}:{line_no}: cluster id {cid!r} is not an integer") from None
    return TopicClusters(assignment)


def build_clusters(docs: Sequence[Document], n_clusters: int = TOPIC_DIM,
                   seed: int = 0, iterations: int = 15) -> TopicClusters:
    """Derive token clusters from document co-occurrence with seeded k-means.

    A stand-in for externally supplied clusters so tests and demos are
    self-contained; tokens with similar document-count profiles share a
    cluster. Deterministic for a given corpus and seed.
    """
    vocab: dict[str, int] = {}
    for doc in docs:
        for tok in doc.tokens:
            vocab.setdefault(tok, len(vocab))
    if not vocab:
        raise DataError("cannot build clusters from an empty corpus")
    mat = np.zeros((len(vocab), len(docs)))
    for j, doc in enumerate(docs):
        for tok in doc.tokens:
            mat[vocab[tok], j] += 1.0
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    mat = mat / np.where(norms > 0, norms, 1.0)

    k = min(n_clusters, len(vocab))
    rng = np.random.default_rng(seed)
    centers = mat[rng.choice(len(vocab), size=k, replace=False)]
    assign = np.zeros(len(vocab), dtype=np.int64)
    for _ in range(iterations):
        dists = ((mat[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = mat[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    tokens = sorted(vocab, key=vocab.get)
    return TopicClusters({tok: int(assign[vocab[tok]]) for tok in tokens})


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


def emotion_vector(tokens: Sequence[str], lexicon: EmotionLexicon) -> np.ndarray:
    """Lexicon-hit fractions per emotion plus a smoothed sentiment triple.

    Sentiment is (positive hits, negative hits, 1) normalized, so the
    triple is a proper distribution with the smoothing mass on neutral.
    """
    out = np.zeros(EMOTION_DIM)
    n = len(tokens)
    if n == 0:
        out[2] = 1.0
        return out
    pos_hits = sum(1 for t in tokens if t in lexicon.words["positive"])
    neg_hits = sum(1 for t in tokens if t in lexicon.words["negative"])
    total = pos_hits + neg_hits + 1.0
    out[0] = pos_hits / total
    out[1] = neg_hits / total
    out[2] = 1.0 / total
    for i, cat in enumerate(EMOTION_FIELDS):
        out[3 + i] = sum(1 for t in tokens if t in lexicon.words[cat]) / n
    return out


def topic_vector(tokens: Sequence[str], clusters: TopicClusters) -> np.ndarray:
    """Fraction of tokens assigned to each cluster; unmapped tokens drop out."""
    out = np.zeros(TOPIC_DIM)
    n = len(tokens)
    if n == 0:
        return out
    for tok in tokens:
        cid = clusters.assignment.get(tok)
        if cid is not None:
            out[cid] += 1.0
    return out / n


def concat_features(emotion: np.ndarray, topic: np.ndarray, mode: str) -> np.ndarray:
    if mode == "emo":
        return np.asarray(emotion, dtype=np.float64)
    if mode == "top":
        return np.asarray(topic, dtype=np.float64)
    if mode == "emo+top":
        return np.concatenate([emotion, topic]).astype(np.float64)
    raise DataError(f"invalid feature mode {mode!r}; expected one of {FEATURE_MODES}")


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------


class FeatureProvider(Protocol):
    def features_for(self, doc: Document) -> LinguisticFeatures: ...


class LexiconTopicProvider:
    """Computes both vectors from a lexicon and a cluster assignment."""

    def __init__(self, lexicon: EmotionLexicon, clusters: TopicClusters):
        self.lexicon = lexicon
        self.clusters = clusters

    def features_for(self, doc: Document) -> LinguisticFeatures:
        return LinguisticFeatures(
            emotion=emotion_vector(doc.tokens, self.lexicon),
            topic=topic_vector(doc.tokens, self.clusters),
        )


class PrecomputedProvider:
    """Serves externally computed vectors from a JSONL file keyed by id."""

    def __init__(self, table: Mapping[str, LinguisticFeatures]):
        self.table = dict(table)

    @classmethod
    def from_file(cls, path: str | Path) -> "PrecomputedProvider":
        path = Path(path)
        table: dict[str, LinguisticFeatures] = {}
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    table[obj["id"]] = LinguisticFeatures(
                        emotion=np.asarray(obj["emotion"], dtype=np.float64),
                        topic=np.asarray(obj["topic"], dtype=np.float64),
                    )
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{line_no}: bad feature record ({exc})") from None
        return cls(table)

    def features_for(self, doc: Document) -> LinguisticFeatures:
        feats = self.table.get(doc.id)
        if feats is None:
            raise DataError(f"no precomputed features for document {doc.id!r}")
        return feats


def save_features(docs: Iterable[Document], provider: FeatureProvider, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            feats = provider.features_for(doc)
            obj = {"id": doc.id, "emotion": feats.emotion.tolist(), "topic": feats.topic.tolist()}
            fh.write(json.dumps(obj) + "\n")


def features_matrix(docs: Sequence[Document], provider: FeatureProvider, mode: str) -> np.ndarray:
    rows = []
    for doc in docs:
        feats = provider.features_for(doc)
        rows.append(concat_features(feats.emotion, feats.topic, mode))
    return np.asarray(rows, dtype=np.float64)
