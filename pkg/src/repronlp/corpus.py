"""Corpus loading and deterministic train/validation/test splits.

The corpus is newline-delimited JSON, one document per line, with fields
``id``, ``tokens``, ``annotations`` and ``label``.  Annotations (POS tags,
NER tags, ...) ship with the data; the pipeline never parses raw text, which
keeps the determinism surface closed.

Split order is data, not a derived quantity: assignments are persisted with
their exact document order and reloaded verbatim.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .rng import RngStream

SPLIT_NAMES = ("train", "validation", "test")

SPLITS_FILENAME = "splits.json"


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid split requests."""


@dataclass
class Document:
    doc_id: str
    tokens: list[str]
    annotations: dict[str, list[str]]
    label: str


@dataclass
class Corpus:
    documents: list[Document]
    digest: str
    by_id: dict[str, Document] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.by_id:
            self.by_id = {doc.doc_id: doc for doc in self.documents}

    def __len__(self) -> int:
        return len(self.documents)


@dataclass
class SplitSpec:
    """Proportions must cover (0, 1] each and sum to 1 within 1e-9."""

    proportions: dict[str, float]
    shuffle: bool = True

    def validate(self) -> None:
        if not self.proportions:
            raise CorpusError("split spec has no proportions")
        unknown = [n for n in self.proportions if n not in SPLIT_NAMES]
        if unknown:
            raise CorpusError(
                f"unknown split names {unknown}; allowed: {list(SPLIT_NAMES)}"
            )
        for name, frac in self.proportions.items():
            if not (0.0 < frac <= 1.0):
                raise CorpusError(f"split {name!r} proportion {frac} outside (0, 1]")
        total = sum(self.proportions.values())
        if abs(total - 1.0) > 1e-9:
            raise CorpusError(f"split proportions sum to {total}, expected 1")


@dataclass
class SplitAssignment:
    splits: dict[str, list[str]]
    corpus_digest: str


def parse_document(obj: dict, where: str = "") -> Document:
    prefix = f"{where}: " if where else ""
    if not isinstance(obj, dict):
        raise CorpusError(f"{prefix}document must be a JSON object")
    try:
        doc_id = obj["id"]
        tokens = obj["tokens"]
        label = obj["label"]
    except KeyError as exc:
        raise CorpusError(f"{prefix}missing required field {exc.args[0]!r}") from None
    annotations = obj.get("annotations", {})
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusError(f"{prefix}document id must be a non-empty string")
    if not isinstance(tokens, list) or any(not isinstance(t, str) for t in tokens):
        raise CorpusError(f"{prefix}tokens of {doc_id!r} must be a list of strings")
    if not isinstance(label, str):
        raise CorpusError(f"{prefix}label of {doc_id!r} must be a string")
    if not isinstance(annotations, dict):
        raise CorpusError(f"{prefix}annotations of {doc_id!r} must be an object")
    for key, tags in annotations.items():
        if not isinstance(tags, list) or len(tags) != len(tokens):
            raise CorpusError(
                f"{prefix}annotation {key!r} of document {doc_id!r} has "
                f"{len(tags) if isinstance(tags, list) else 'non-list'} tags "
                f"for {len(tokens)} tokens"
            )
    return Document(doc_id=doc_id, tokens=list(tokens),
                    annotations={k: list(v) for k, v in annotations.items()},
                    label=label)


def load_corpus(path: Path | str) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    documents: list[Document] = []
    seen: set[str] = set()
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
        doc = parse_document(obj, where=f"{path}:{lineno}")
        if doc.doc_id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate document id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        documents.append(doc)
    return Corpus(documents=documents, digest=digest)


def make_splits(corpus: Corpus, spec: SplitSpec, stream: RngStream) -> SplitAssignment:
    """Cut the corpus into ordered, disjoint splits.

    With shuffle, a Fisher-Yates pass over document indices runs first (the
    bounded draw is ``next_u64 % n``, a declared rule).  Counts are
    floor(n * p) per split in listed order; remainder documents go to the
    first-listed split so the partition is total.
    """
    spec.validate()
    n = len(corpus)
    if n == 0:
        raise CorpusError("cannot split an empty corpus")
    order = list(range(n))
    if spec.shuffle:
        for i in range(n - 1, 0, -1):
            j = stream.next_below(i + 1)
            order[i], order[j] = order[j], order[i]
    names = list(spec.proportions)
    counts = {name: int(n * frac) for name, frac in spec.proportions.items()}
    counts[names[0]] += n - sum(counts.values())
    splits: dict[str, list[str]] = {}
    cursor = 0
    for name in names:
        take = order[cursor : cursor + counts[name]]
        splits[name] = [corpus.documents[i].doc_id for i in take]
        cursor += counts[name]
    return SplitAssignment(splits=splits, corpus_digest=corpus.digest)


def assignment_to_json(assignment: SplitAssignment) -> str:
    payload = {
        "corpus_digest": assignment.corpus_digest,
        "splits": {name: assignment.splits[name] for name in sorted(assignment.splits)},
    }
    return json.dumps(payload, indent=2) + "\n"


def save_splits(assignment: SplitAssignment, store_path: Path | str) -> Path:
    store_path = Path(store_path)
    store_path.mkdir(parents=True, exist_ok=True)
    out = store_path / SPLITS_FILENAME
    out.write_text(assignment_to_json(assignment), encoding="utf-8")
    return out


def load_splits(store_path: Path | str, expected_digest: str | None = None) -> SplitAssignment:
    """Reload a persisted assignment; order comes from the file, never recomputed."""
    path = Path(store_path) / SPLITS_FILENAME
    if not path.is_file():
        raise CorpusError(f"splits file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        assignment = SplitAssignment(
            splits={name: list(ids) for name, ids in payload["splits"].items()},
            corpus_digest=payload["corpus_digest"],
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorpusError(f"{path}: malformed splits file: {exc}") from None
    if expected_digest is not None and assignment.corpus_digest != expected_digest:
        raise CorpusError(
            "corpus digest mismatch: splits were made from a different corpus "
            f"({assignment.corpus_digest[:12]}... vs {expected_digest[:12]}...)"
        )
    return assignment
