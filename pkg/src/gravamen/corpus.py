"""Data model, tweet-style preprocessing, vocabulary, and fold planning.

The on-disk corpus format is JSONL, one object per line:

    {"id": "t1", "text": "...", "binary": "complaint" | "non_complaint" | null,
     "severity": "no_explicit_reproach" | "disapproval" | "accusation" |
                 "blame" | "no_complaint_severity" | null,
     "annotators": ["disapproval", "blame", "disapproval"] | null,
     "domain": "software" | null}

Loading is strict: any malformed line aborts with its 1-based line number.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


class SeverityLabel(Enum):
    NO_EXPLICIT_REPROACH = "no_explicit_reproach"
    DISAPPROVAL = "disapproval"
    ACCUSATION = "accusation"
    BLAME = "blame"
    NO_COMPLAINT_SEVERITY = "no_complaint_severity"

    @property
    def index(self) -> int:
        return _SEVERITY_ORDER.index(self)


class BinaryLabel(Enum):
    COMPLAINT = "complaint"
    NON_COMPLAINT = "non_complaint"


_SEVERITY_ORDER = list(SeverityLabel)
SEVERITY_FOUR = _SEVERITY_ORDER[:4]
SEVERITY_FIVE = _SEVERITY_ORDER


@dataclass
class Document:
    id: str
    raw_text: str
    tokens: list[str]
    binary_label: BinaryLabel | None = None
    severity_label: SeverityLabel | None = None
    annotator_labels: list[SeverityLabel] | None = None
    domain: str | None = None


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

USER_TOKEN = "<USER>"
URL_TOKEN = "<URL>"

_PLACEHOLDER_RE = re.compile(r"<\s*(user|url)\s*>", re.IGNORECASE)
_URL_RE = re.compile(r"(?:https?://\S+|www\.\S+)", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")

# Common western emoticons, matched after lowercasing.
_EMOTICON = r"""
    (?:
        [:;=8x][\-o'^]?[)(\[\]dp3/\\|*@o$]+     # :-) ;d =p x( 8-o ...
      | [)(\[\]dp/\\|*@$]+[\-o'^]?[:;=8x]       # (-: d:
      | </?3+                                    # <3 </3
      | \^_*\^                                   # ^^ ^_^
      | -_+-                                     # -_-
    )
"""

_TOKEN_RE = re.compile(
    rf"<user>|<url>|{_EMOTICON}|\#\w[\w'\-]*|\w[\w'\-]*|[^\w\s]",
    re.VERBOSE,
)


def preprocess(raw_text: str) -> list[str]:
    """Lowercase and tokenize; mentions and URLs become placeholder tokens.

    Emoticons and hashtags survive as single tokens. Existing placeholder
    spellings are canonicalized rather than re-tokenized, which makes the
    function idempotent over its own space-joined output.
    """
    if not raw_text or not raw_text.strip():
        return []
    text = _PLACEHOLDER_RE.sub(lambda m: f" <{m.group(1).lower()}> ", raw_text)
    text = _URL_RE.sub(" <url> ", text)
    text = _MENTION_RE.sub(" <user> ", text)
    text = text.lower()
    tokens = _TOKEN_RE.findall(text)
    canon = {"<user>": USER_TOKEN, "<url>": URL_TOKEN}
    return [canon.get(t, t) for t in tokens]


# ---------------------------------------------------------------------------
# corpus IO
# ---------------------------------------------------------------------------

_ALLOWED_KEYS = {"id", "text", "binary", "severity", "annotators", "domain"}


def _parse_severity(value: str, line_no: int) -> SeverityLabel:
    try:
        return SeverityLabel(value)
    except ValueError:
        valid = ", ".join(l.value for l in SeverityLabel)
        raise DataError(
            f"line {line_no}: unknown severity label {value!r} (expected one of {valid})"
        ) from None


def _parse_record(obj: dict, line_no: int) -> Document:
    if not isinstance(obj, dict):
        raise DataError(f"line {line_no}: expected a JSON object")
    unknown = set(obj) - _ALLOWED_KEYS
    if unknown:
        raise DataError(f"line {line_no}: unknown fields {sorted(unknown)}")
    doc_id = obj.get("id")
    text = obj.get("text")
    if not isinstance(doc_id, str) or not doc_id:
        raise DataError(f"line {line_no}: 'id' must be a non-empty string")
    if not isinstance(text, str):
        raise DataError(f"line {line_no}: 'text' must be a string")

    binary = obj.get("binary")
    if binary is not None:
        try:
            binary = BinaryLabel(binary)
        except ValueError:
            raise DataError(
                f"line {line_no}: unknown binary label {binary!r} "
                f"(expected complaint or non_complaint)"
            ) from None

    severity = obj.get("severity")
    if severity is not None:
        severity = _parse_severity(severity, line_no)
        if severity is SeverityLabel.NO_COMPLAINT_SEVERITY and binary is not BinaryLabel.NON_COMPLAINT:
            raise DataError(
                f"line {line_no}: no_complaint_severity requires binary = non_complaint"
            )

    annotators = obj.get("annotators")
    if annotators is not None:
        if not isinstance(annotators, list) or len(annotators) != 3:
            raise DataError(f"line {line_no}: 'annotators' must list exactly 3 labels")
        annotators = [_parse_severity(a, line_no) for a in annotators]

    domain = obj.get("domain")
    if domain is not None and not isinstance(domain, str):
        raise DataError(f"line {line_no}: 'domain' must be a string or null")

    return Document(
        id=doc_id,
        raw_text=text,
        tokens=preprocess(text),
        binary_label=binary,
        severity_label=severity,
        annotator_labels=annotators,
        domain=domain,
    )


def load_corpus(path: str | Path) -> list[Document]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    docs: list[Document] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: malformed JSON ({exc.msg})") from None
            doc = _parse_record(obj, line_no)
            if doc.id in seen:
                raise DataError(f"line {line_no}: duplicate id {doc.id!r}")
            seen.add(doc.id)
            docs.append(doc)
    return docs


def save_corpus(docs: Iterable[Document], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            obj = {
                "id": doc.id,
                "text": doc.raw_text,
                "binary": doc.binary_label.value if doc.binary_label else None,
                "severity": doc.severity_label.value if doc.severity_label else None,
                "annotators": [a.value for a in doc.annotator_labels] if doc.annotator_labels else None,
                "domain": doc.domain,
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# vocabulary and encoding
# ---------------------------------------------------------------------------

PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
PAD_ID = 0
UNK_ID = 1
USER_ID = 2
URL_ID = 3
_RESERVED = [PAD_TOKEN, UNK_TOKEN, USER_TOKEN, URL_TOKEN]


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def content_hash(self) -> str:
        h = hashlib.sha256("\n".join(self.id_to_token).encode("utf-8"))
        return h.hexdigest()[:16]


def build_vocab(docs: Sequence[Document], min_freq: int = 1) -> Vocabulary:
    if min_freq < 1:
        raise DataError("min_freq must be >= 1")
    if not docs:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for doc in docs:
        for tok in doc.tokens:
            counts[tok] = counts.get(tok, 0) + 1
    kept = [
        tok for tok, c in counts.items()
        if c >= min_freq and tok not in (USER_TOKEN, URL_TOKEN)
    ]
    # frequency-major, then lexicographic: stable across runs for one corpus
    kept.sort(key=lambda t: (-counts[t], t))
    id_to_token = _RESERVED + kept
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    return Vocabulary(token_to_id, id_to_token)


def encode(doc: Document, vocab: Vocabulary, max_len: int) -> tuple[np.ndarray, int]:
    """Fixed-length id sequence (right-padded or right-truncated) + true length."""
    if max_len < 1:
        raise DataError("max_len must be >= 1")
    ids = [vocab.lookup(t) for t in doc.tokens[:max_len]]
    true_len = len(ids)
    ids.extend([PAD_ID] * (max_len - true_len))
    return np.asarray(ids, dtype=np.int64), true_len


# ---------------------------------------------------------------------------
# nested fold planning
# ---------------------------------------------------------------------------


@dataclass
class FoldPlan:
    """Outer test partitions plus, per outer fold, inner (train, val) splits."""

    seed: int
    n_docs: int
    outer: list[np.ndarray] = field(default_factory=list)
    inner: list[list[tuple[np.ndarray, np.ndarray]]] = field(default_factory=list)

    def outer_train(self, k: int) -> np.ndarray:
        test = set(self.outer[k].tolist())
        return np.asarray([i for i in range(self.n_docs) if i not in test], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_docs": self.n_docs,
            "outer": [fold.tolist() for fold in self.outer],
            "inner": [
                [[tr.tolist(), va.tolist()] for tr, va in splits]
                for splits in self.inner
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FoldPlan":
        plan = cls(seed=obj["seed"], n_docs=obj["n_docs"])
        plan.outer = [np.asarray(f, dtype=np.int64) for f in obj["outer"]]
        plan.inner = [
            [(np.asarray(tr, dtype=np.int64), np.asarray(va, dtype=np.int64)) for tr, va in splits]
            for splits in obj["inner"]
        ]
        return plan


def _stratified_partition(keys: Sequence, indices: np.ndarray, k: int,
                          rng: np.random.Generator) -> list[list[int]]:
    """Split ``indices`` into k folds, per-key counts within +-1, overall
    fold sizes within +-1 (extras go to the currently smallest folds)."""
    by_class: dict = {}
    for i in indices:
        by_class.setdefault(keys[i], []).append(int(i))
    folds: list[list[int]] = [[] for _ in range(k)]
    totals = np.zeros(k, dtype=np.int64)
    for cls in sorted(by_class, key=repr):
        members = np.asarray(by_class[cls], dtype=np.int64)
        rng.shuffle(members)
        q, r = divmod(len(members), k)
        tiebreak = rng.permutation(k)
        order = np.lexsort((tiebreak, totals))
        extra = set(order[:r].tolist())
        pos = 0
        for fold_idx in range(k):
            take = q + (1 if fold_idx in extra else 0)
            folds[fold_idx].extend(members[pos:pos + take].tolist())
            totals[fold_idx] += take
            pos += take
    return folds


def make_folds(keys: Sequence, outer: int = 10, inner: int = 3, seed: int = 0) -> FoldPlan:
    """Deterministic nested fold plan stratified by ``keys``.

    ``keys`` holds one hashable stratification value per document (the
    severity label, the binary label, or a (binary, severity) pair for
    joint runs).
    """
    n = len(keys)
    counts: dict = {}
    for key in keys:
        counts[key] = counts.get(key, 0) + 1
    for cls, c in sorted(counts.items(), key=lambda kv: repr(kv[0])):
        if c < outer:
            raise DataError(
                f"stratification class {cls!r} has {c} members; "
                f"need at least {outer} for {outer} outer folds"
            )
    rng = np.random.default_rng(seed)
    all_idx = np.arange(n, dtype=np.int64)
    outer_folds = _stratified_partition(keys, all_idx, outer, rng)
    plan = FoldPlan(seed=seed, n_docs=n)
    for fold in outer_folds:
        plan.outer.append(np.asarray(sorted(fold), dtype=np.int64))
    for k in range(outer):
        train_idx = plan.outer_train(k)
        inner_folds = _stratified_partition(keys, train_idx, inner, rng)
        splits = []
        for i in range(inner):
            val = np.asarray(sorted(inner_folds[i]), dtype=np.int64)
            train = np.asarray(
                sorted(x for j in range(inner) if j != i for x in inner_folds[j]),
                dtype=np.int64,
            )
            splits.append((train, val))
        plan.inner.append(splits)
    return plan


def stratify_keys(docs: Sequence[Document], task: str) -> list:
    if task == "severity":
        missing = [d.id for d in docs if d.severity_label is None]
        if missing:
            raise DataError(f"severity labels missing for {len(missing)} documents (e.g. {missing[0]!r})")
        return [d.severity_label for d in docs]
    if task == "binary":
        missing = [d.id for d in docs if d.binary_label is None]
        if missing:
            raise DataError(f"binary labels missing for {len(missing)} documents (e.g. {missing[0]!r})")
        return [d.binary_label for d in docs]
    if task == "mtl":
        missing = [d.id for d in docs if d.binary_label is None or d.severity_label is None]
        if missing:
            raise DataError(f"joint runs need both labels; missing on {len(missing)} documents (e.g. {missing[0]!r})")
        return [(d.binary_label, d.severity_label) for d in docs]
    raise DataError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# distribution report
# ---------------------------------------------------------------------------


def class_distribution(docs: Sequence[Document], label_kind: str) -> list[tuple[str, int, float]]:
    """Counts and percentages per label, ordered by frequency then enum order."""
    if label_kind == "severity":
        labels = [d.severity_label for d in docs]
        order = {lab: i for i, lab in enumerate(SeverityLabel)}
    elif label_kind == "binary":
        labels = [d.binary_label for d in docs]
        order = {lab: i for i, lab in enumerate(BinaryLabel)}
    else:
        raise DataError(f"unknown label kind {label_kind!r}")
    if any(l is None for l in labels):
        raise DataError(f"{label_kind} labels missing for some documents")
    total = len(labels)
    if total == 0:
        raise DataError("empty corpus")
    counts: dict = {}
    for l in labels:
        counts[l] = counts.get(l, 0) + 1
    rows = sorted(counts.items(), key=lambda kv: (-kv[1], order[kv[0]]))
    return [(lab.value, c, 100.0 * c / total) for lab, c in rows]
