"""Vectorizers: documents in, tensors out.

Four categories are supported: token-level features (one tensor row per
token), document-level features (one vector per document), multi-document
features (shared structure between a pair of documents), and word
embeddings.  Token-level outputs use -1 as the variable token axis in their
shape signatures; everything else is concrete after fitting.

Fitting is deterministic given document order, and fitted state serializes
into the store manifest so later runs (and ``predict``) reuse it verbatim
instead of refitting.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document

logger = logging.getLogger(__name__)

CATEGORIES = ("token", "document", "multi_document", "embedding")

UNKNOWN_POLICIES = ("error", "ignore_row_zero")


class VectorizeError(ValueError):
    """Raised for missing annotations, unknown tags, and bad fits."""


@dataclass
class CategoryMap:
    """Ordered tag vocabulary for one annotation key; index order is data."""

    key: str
    categories: list[str]
    unknown_policy: str = "error"

    def __post_init__(self):
        if len(set(self.categories)) != len(self.categories):
            raise VectorizeError(f"categories for {self.key!r} are not distinct")
        if self.unknown_policy not in UNKNOWN_POLICIES:
            raise VectorizeError(f"unknown policy {self.unknown_policy!r}")
        self.index = {c: i for i, c in enumerate(self.categories)}

    def __len__(self) -> int:
        return len(self.categories)


@dataclass
class TfidfModel:
    vocabulary: list[str]
    idf: list[float]
    doc_count: int

    def __post_init__(self):
        if len(self.vocabulary) != len(self.idf):
            raise VectorizeError("idf length must equal vocabulary length")
        self.term_index = {t: i for i, t in enumerate(self.vocabulary)}


@dataclass
class EmbeddingTable:
    """Word vectors; out-of-vocabulary tokens map to zero rows."""

    dimension: int
    vectors: dict[str, np.ndarray]


@dataclass
class VectorizerDescriptor:
    name: str
    category: str
    feature_id: str
    output_shape: list[int]
    fit_required: bool

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise VectorizeError(f"unknown vectorizer category {self.category!r}")
        if sum(1 for e in self.output_shape if e == -1) > 1:
            raise VectorizeError("output_shape may mark at most one variable axis")


def fit_category_map(key: str, documents, unknown_policy: str = "error") -> CategoryMap:
    """Collect tags for ``key`` in first-seen order over ``documents``."""
    documents = list(documents)
    if not documents:
        raise VectorizeError("cannot fit a category map on an empty document sequence")
    seen: list[str] = []
    index: set[str] = set()
    for doc in documents:
        for tag in _tags(doc, key):
            if tag not in index:
                index.add(tag)
                seen.append(tag)
    return CategoryMap(key=key, categories=seen, unknown_policy=unknown_policy)


def fit_tfidf(documents) -> TfidfModel:
    """Vocabulary in first-seen token order; idf = ln((1+N)/(1+df)) + 1."""
    documents = list(documents)
    if not documents:
        raise VectorizeError("cannot fit tf-idf on an empty document sequence")
    vocabulary: list[str] = []
    index: set[str] = set()
    df: dict[str, int] = {}
    for doc in documents:
        for tok in doc.tokens:
            if tok not in index:
                index.add(tok)
                vocabulary.append(tok)
        for tok in set(doc.tokens):
            df[tok] = df.get(tok, 0) + 1
    n = len(documents)
    idf = [math.log((1 + n) / (1 + df[t])) + 1.0 for t in vocabulary]
    return TfidfModel(vocabulary=vocabulary, idf=idf, doc_count=n)


def _tags(doc: Document, key: str) -> list[str]:
    try:
        return doc.annotations[key]
    except KeyError:
        raise VectorizeError(
            f"document {doc.doc_id!r} has no {key!r} annotation"
        ) from None


def token_onehot(doc: Document, cmap: CategoryMap) -> np.ndarray:
    """One-hot rows, shape [T, C]; unknown tags follow the map's policy."""
    tags = _tags(doc, cmap.key)
    out = np.zeros((len(tags), len(cmap)), dtype=np.float32)
    for t, tag in enumerate(tags):
        idx = cmap.index.get(tag)
        if idx is None:
            if cmap.unknown_policy == "error":
                raise VectorizeError(
                    f"unknown {cmap.key!r} tag {tag!r} in document {doc.doc_id!r}"
                )
            continue  # ignore_row_zero: leave the row at zero
        out[t, idx] = 1.0
    return out


def doc_tag_counts(doc: Document, cmap: CategoryMap) -> np.ndarray:
    """Per-category tag counts, shape [C]."""
    tags = _tags(doc, cmap.key)
    out = np.zeros(len(cmap), dtype=np.float32)
    for tag in tags:
        idx = cmap.index.get(tag)
        if idx is None:
            if cmap.unknown_policy == "error":
                raise VectorizeError(
                    f"unknown {cmap.key!r} tag {tag!r} in document {doc.doc_id!r}"
                )
            continue
        out[idx] += 1.0
    return out


def doc_tfidf(doc: Document, model: TfidfModel) -> np.ndarray:
    """Raw term count times idf, shape [V]; OOV tokens ignored, no normalization."""
    out = np.zeros(len(model.vocabulary), dtype=np.float32)
    for tok in doc.tokens:
        idx = model.term_index.get(tok)
        if idx is not None:
            out[idx] += 1.0
    return out * np.asarray(model.idf, dtype=np.float32)


def multidoc_overlap(a: Document, b: Document, cmap: CategoryMap) -> np.ndarray:
    """Multiset intersection of tag counts: entry c = min(count_a(c), count_b(c))."""
    return np.minimum(doc_tag_counts(a, cmap), doc_tag_counts(b, cmap))


def load_embeddings(path: Path | str) -> EmbeddingTable:
    """GloVe text format: one word then D space-separated floats per line."""
    path = Path(path)
    if not path.is_file():
        raise VectorizeError(f"embedding file not found: {path}")
    dimension = None
    vectors: dict[str, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                raise VectorizeError(f"{path}:{lineno}: expected a word and floats")
            word, fields = parts[0], parts[1:]
            try:
                values = [float(v) for v in fields]
            except ValueError:
                raise VectorizeError(
                    f"{path}:{lineno}: non-numeric embedding field"
                ) from None
            if dimension is None:
                dimension = len(values)
            elif len(values) != dimension:
                raise VectorizeError(
                    f"{path}:{lineno}: dimension {len(values)} != {dimension}"
                )
            if word in vectors:
                logger.warning("%s:%d: duplicate word %r, keeping the later vector",
                               path, lineno, word)
            vectors[word] = np.asarray(values, dtype=np.float32)
    if dimension is None:
        raise VectorizeError(f"{path}: embedding file is empty")
    return EmbeddingTable(dimension=dimension, vectors=vectors)


def embedding_file_digest(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def embed_tokens(doc: Document, table: EmbeddingTable) -> np.ndarray:
    """Embedding rows in token order, shape [T, D]; lookups are exact-match."""
    out = np.zeros((len(doc.tokens), table.dimension), dtype=np.float32)
    for t, tok in enumerate(doc.tokens):
        vec = table.vectors.get(tok)
        if vec is not None:
            out[t] = vec
    return out


def concat_token_features(embedding: np.ndarray, features) -> np.ndarray:
    """Concatenate [T, Ci] blocks onto [T, D] column-wise, embedding first.

    ``features`` is a sequence of (feature_id, tensor) pairs so a row-count
    mismatch can name the offending feature.
    """
    features = list(features)
    if not features:
        return embedding
    rows = embedding.shape[0]
    for feature_id, tensor in features:
        if tensor.shape[0] != rows:
            raise VectorizeError(
                f"feature {feature_id!r} has {tensor.shape[0]} rows, expected {rows}"
            )
    return np.concatenate([embedding] + [t for _, t in features], axis=1)


def shape_matches(signature, shape) -> bool:
    """True when ``shape`` instantiates ``signature`` with -1 bound to any extent."""
    if len(signature) != len(shape):
        return False
    return all(s == -1 or s == e for s, e in zip(signature, shape))


# --- pipeline vectorizers -------------------------------------------------
#
# The store pipeline works with fitted vectorizer objects: a descriptor plus
# whatever state `fit` produced, with a per-document transform.  These are
# immutable after fit and picklable, so encode workers can share them.


@dataclass
class FittedVectorizer:
    descriptor: VectorizerDescriptor

    @property
    def feature_id(self) -> str:
        return self.descriptor.feature_id

    def transform(self, doc: Document) -> np.ndarray:
        raise NotImplementedError

    def fitted_state(self) -> dict:
        raise NotImplementedError


@dataclass
class TokenOneHot(FittedVectorizer):
    cmap: CategoryMap

    def transform(self, doc: Document) -> np.ndarray:
        return token_onehot(doc, self.cmap)

    def fitted_state(self) -> dict:
        return {"kind": "token_onehot", "key": self.cmap.key,
                "categories": self.cmap.categories,
                "unknown_policy": self.cmap.unknown_policy}


@dataclass
class TagCounts(FittedVectorizer):
    cmap: CategoryMap

    def transform(self, doc: Document) -> np.ndarray:
        return doc_tag_counts(doc, self.cmap)

    def fitted_state(self) -> dict:
        return {"kind": "tag_counts", "key": self.cmap.key,
                "categories": self.cmap.categories,
                "unknown_policy": self.cmap.unknown_policy}


@dataclass
class Tfidf(FittedVectorizer):
    model: TfidfModel
    fit_split: str = "train"

    def transform(self, doc: Document) -> np.ndarray:
        return doc_tfidf(doc, self.model)

    def fitted_state(self) -> dict:
        return {"kind": "tfidf", "vocabulary": self.model.vocabulary,
                "idf": self.model.idf, "doc_count": self.model.doc_count,
                "fit_split": self.fit_split}


@dataclass
class Embedding(FittedVectorizer):
    table: EmbeddingTable
    source_path: str
    file_digest: str

    def transform(self, doc: Document) -> np.ndarray:
        return embed_tokens(doc, self.table)

    def fitted_state(self) -> dict:
        return {"kind": "embedding", "path": self.source_path,
                "dimension": self.table.dimension, "file_digest": self.file_digest}


def vectorizer_from_state(feature_id: str, category: str, shape: list[int],
                          state: dict, base_dir: Path | str = ".") -> FittedVectorizer:
    """Rebuild a fitted vectorizer from its manifest entry."""
    descriptor = VectorizerDescriptor(
        name=feature_id, category=category, feature_id=feature_id,
        output_shape=list(shape), fit_required=False,
    )
    kind = state.get("kind")
    if kind in ("token_onehot", "tag_counts"):
        cmap = CategoryMap(key=state["key"], categories=list(state["categories"]),
                           unknown_policy=state["unknown_policy"])
        cls = TokenOneHot if kind == "token_onehot" else TagCounts
        return cls(descriptor, cmap)
    if kind == "tfidf":
        model = TfidfModel(vocabulary=list(state["vocabulary"]),
                           idf=list(state["idf"]), doc_count=int(state["doc_count"]))
        return Tfidf(descriptor, model, fit_split=state.get("fit_split", "train"))
    if kind == "embedding":
        path = Path(base_dir) / state["path"]
        digest = embedding_file_digest(path) if path.is_file() else None
        if digest != state["file_digest"]:
            raise VectorizeError(
                f"embedding file {path} missing or changed since the store was encoded"
            )
        return Embedding(descriptor, load_embeddings(path), state["path"],
                         state["file_digest"])
    raise VectorizeError(f"unknown fitted vectorizer kind {kind!r}")
