"""On-disk mini-batch store: parallel encode, feature-selective decode.

Encoding cuts each split's documents (in split order) into batches, groups
batches into chunks, and vectorizes chunks in parallel workers.  Each worker
writes one tensor file per (batch, feature) plus ``labels.tns`` and
``mask.tns``, so decoding a feature subset touches only that subset's files.
The manifest is written last, atomically; a store without a manifest is
invalid by definition, which is what makes a crashed encode recognizable.

Workers share nothing mutable: they receive the chunk's documents, the
fitted vectorizers, and their own child RNG stream, and they write disjoint
files.  Output is a pure function of (inputs, chunk index), never of
scheduling, which is the property the worker-invariance tests pin down.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, SplitAssignment, save_splits
from .rng import RngSnapshot, RngStream, restore
from .tensorfile import IoAudit, read_tensor, write_tensor
from .vectorize import FittedVectorizer, shape_matches, vectorizer_from_state

MANIFEST_FILENAME = "manifest.json"
FORMAT_VERSION = 1

LABELS_FILE = "labels.tns"
MASK_FILE = "mask.tns"


class StoreError(ValueError):
    """Raised for invalid stores, unknown features, and corrupt tensor files."""


@dataclass
class FeatureEntry:
    feature_id: str
    category: str
    dtype: str
    shape: list[int]
    fitted: dict

    def to_json_dict(self) -> dict:
        return {"feature_id": self.feature_id, "category": self.category,
                "dtype": self.dtype, "shape": self.shape, "fitted": self.fitted}


@dataclass
class BatchManifest:
    format_version: int
    batch_size: int
    chunk_size: int
    features: list[FeatureEntry]
    splits: dict[str, list[str]]
    batch_docs: dict[str, list[str]]  # keyed "<split>/<batch_id>"
    class_names: list[str]
    config_fingerprint: str
    corpus_digest: str

    def feature(self, feature_id: str) -> FeatureEntry:
        for entry in self.features:
            if entry.feature_id == feature_id:
                return entry
        raise StoreError(f"unknown feature {feature_id!r}; manifest has "
                         f"{[f.feature_id for f in self.features]}")

    def to_json(self) -> str:
        payload = {
            "format_version": self.format_version,
            "batch_size": self.batch_size,
            "chunk_size": self.chunk_size,
            "features": [f.to_json_dict() for f in self.features],
            "splits": self.splits,
            "batch_docs": self.batch_docs,
            "class_names": self.class_names,
            "config_fingerprint": self.config_fingerprint,
            "corpus_digest": self.corpus_digest,
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BatchManifest":
        try:
            payload = json.loads(text)
            return cls(
                format_version=payload["format_version"],
                batch_size=payload["batch_size"],
                chunk_size=payload["chunk_size"],
                features=[FeatureEntry(**f) for f in payload["features"]],
                splits={k: list(v) for k, v in payload["splits"].items()},
                batch_docs={k: list(v) for k, v in payload["batch_docs"].items()},
                class_names=list(payload["class_names"]),
                config_fingerprint=payload["config_fingerprint"],
                corpus_digest=payload["corpus_digest"],
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise StoreError(f"malformed manifest: {exc}") from None


@dataclass
class Batch:
    split: str
    batch_id: str
    doc_ids: list[str]
    tensors: dict[str, np.ndarray]
    labels: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.doc_ids)


class TensorCache:
    """LRU tensor cache bounded by resident bytes.

    Entries larger than the budget are never admitted (pass-through), so a
    tiny budget degrades to uncached reads with identical results.  Safe for
    concurrent readers: lookups and insertions hold one lock, and values are
    immutable arrays.
    """

    def __init__(self, max_bytes: int):
        self.max_bytes = max_bytes
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self._entries: OrderedDict[str, np.ndarray] = OrderedDict()
        self._resident = 0
        self._lock = threading.Lock()

    @property
    def resident_bytes(self) -> int:
        return self._resident

    def get(self, key: str, loader):
        with self._lock:
            if key in self._entries:
                self.hits += 1
                self._entries.move_to_end(key)
                return self._entries[key]
        value = loader()
        size = value.nbytes
        with self._lock:
            self.misses += 1
            if size <= self.max_bytes and key not in self._entries:
                self._entries[key] = value
                self._resident += size
                while self._resident > self.max_bytes:
                    _, evicted = self._entries.popitem(last=False)
                    self._resident -= evicted.nbytes
                    self.evictions += 1
        return value


def _batch_plan(splits: SplitAssignment, batch_size: int):
    """Yield (split, batch_id, doc_ids) in canonical store order."""
    plan = []
    for split, doc_ids in splits.splits.items():
        for index, start in enumerate(range(0, len(doc_ids), batch_size)):
            plan.append((split, f"{index:06d}", doc_ids[start : start + batch_size]))
    return plan


def _stack_batch(docs, vectorizers: list[FittedVectorizer], class_index: dict[str, int]):
    """Vectorize one batch: pad token features to the batch max T, build mask."""
    token_like = [v for v in vectorizers if v.descriptor.category in ("token", "embedding")]
    doc_level = [v for v in vectorizers if v.descriptor.category == "document"]
    lengths = [len(d.tokens) for d in docs]
    t_max = max(lengths, default=0)
    b = len(docs)

    tensors: dict[str, np.ndarray] = {}
    for vec in token_like:
        width = vec.descriptor.output_shape[-1]
        out = np.zeros((b, t_max, width), dtype=np.float32)
        for row, doc in enumerate(docs):
            values = vec.transform(doc)
            out[row, : values.shape[0], :] = values
        tensors[vec.feature_id] = out
    for vec in doc_level:
        rows = [vec.transform(doc) for doc in docs]
        tensors[vec.feature_id] = np.stack(rows).astype(np.float32, copy=False)

    mask = np.zeros((b, t_max), dtype=np.float32)
    for row, length in enumerate(lengths):
        mask[row, :length] = 1.0

    labels = np.zeros(b, dtype=np.int64)
    for row, doc in enumerate(docs):
        try:
            labels[row] = class_index[doc.label]
        except KeyError:
            raise StoreError(
                f"document {doc.doc_id!r} has label {doc.label!r} "
                f"outside classes {sorted(class_index)}"
            ) from None
    return tensors, labels, mask


def assemble_batch(docs, vectorizers: list[FittedVectorizer],
                   class_names: list[str] | None = None,
                   split: str = "adhoc", batch_id: str = "000000") -> Batch:
    """Vectorize documents directly into an in-memory batch (used by predict).

    Without ``class_names`` the labels tensor is all zeros, for unlabeled input.
    """
    if class_names is None:
        tensors, _, mask = _stack_batch(docs, vectorizers,
                                        {doc.label: 0 for doc in docs})
        labels = np.zeros(len(docs), dtype=np.int64)
    else:
        tensors, labels, mask = _stack_batch(
            docs, vectorizers, {name: i for i, name in enumerate(class_names)})
    return Batch(split=split, batch_id=batch_id,
                 doc_ids=[doc.doc_id for doc in docs],
                 tensors=tensors, labels=labels, mask=mask)


@dataclass
class _ChunkTask:
    chunk_index: int
    store_path: str
    batches: list  # (split, batch_id, [Document, ...])
    vectorizers: list
    class_index: dict
    stream_snapshot: dict


def _encode_chunk(task: _ChunkTask) -> list[str]:
    # the chunk stream is currently unused (no stochastic vectorizers yet)
    # but restoring it here keeps randomness worker-invariant by construction
    stream: RngStream = restore(RngSnapshot.from_json_dict(task.stream_snapshot))
    assert stream is not None
    written = []
    for split, batch_id, docs in task.batches:
        batch_dir = Path(task.store_path) / "batch" / split / batch_id
        batch_dir.mkdir(parents=True, exist_ok=True)
        tensors, labels, mask = _stack_batch(docs, task.vectorizers, task.class_index)
        for feature_id, arr in tensors.items():
            write_tensor(batch_dir / f"{feature_id}.tns", arr)
        write_tensor(batch_dir / LABELS_FILE, labels)
        write_tensor(batch_dir / MASK_FILE, mask)
        written.append(f"{split}/{batch_id}")
    return written


def encode(
    corpus: Corpus,
    splits: SplitAssignment,
    vectorizers: list[FittedVectorizer],
    *,
    batch_size: int,
    chunk_size: int,
    workers: int,
    store_path: Path | str,
    root_stream: RngStream,
    class_names: list[str] | None = None,
    config_fingerprint: str = "",
) -> BatchManifest:
    """Encode the corpus into ``store_path`` and return the written manifest."""
    store_path = Path(store_path)
    if store_path.exists() and any(store_path.iterdir()):
        raise StoreError(f"store path {store_path} is not empty")
    if batch_size < 1 or chunk_size < 1 or workers < 1:
        raise StoreError("batch_size, chunk_size and workers must be >= 1")
    for vec in vectorizers:
        if vec.descriptor.category == "multi_document":
            raise StoreError(
                f"feature {vec.feature_id!r}: multi-document vectorizers take a "
                "document pair and cannot be batch-encoded"
            )
    store_path.mkdir(parents=True, exist_ok=True)
    save_splits(splits, store_path)

    if class_names is None:
        class_names = sorted({doc.label for doc in corpus.documents})
    class_index = {name: i for i, name in enumerate(class_names)}

    plan = _batch_plan(splits, batch_size)
    tasks = []
    for chunk_index in range(0, len(plan), chunk_size):
        batches = [
            (split, batch_id, [corpus.by_id[d] for d in doc_ids])
            for split, batch_id, doc_ids in plan[chunk_index : chunk_index + chunk_size]
        ]
        index = chunk_index // chunk_size
        child = root_stream.split(f"chunk/{index}")
        tasks.append(_ChunkTask(
            chunk_index=index,
            store_path=str(store_path),
            batches=batches,
            vectorizers=vectorizers,
            class_index=class_index,
            stream_snapshot=child.snapshot().to_json_dict(),
        ))

    try:
        if workers == 1:
            for task in tasks:
                _encode_chunk(task)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for _ in pool.map(_encode_chunk, tasks):
                    pass
    except StoreError:
        raise
    except Exception as exc:
        raise StoreError(f"encode worker failed: {exc}") from exc

    manifest = BatchManifest(
        format_version=FORMAT_VERSION,
        batch_size=batch_size,
        chunk_size=chunk_size,
        features=[
            FeatureEntry(
                feature_id=vec.feature_id,
                category=vec.descriptor.category,
                dtype="f32",
                shape=list(vec.descriptor.output_shape),
                fitted=vec.fitted_state(),
            )
            for vec in vectorizers
        ],
        splits={split: [b for s, b, _ in plan if s == split] for split in splits.splits},
        batch_docs={f"{s}/{b}": list(doc_ids) for s, b, doc_ids in plan},
        class_names=class_names,
        config_fingerprint=config_fingerprint,
        corpus_digest=corpus.digest,
    )
    _write_manifest(store_path, manifest)
    return manifest


def _write_manifest(store_path: Path, manifest: BatchManifest) -> None:
    # temp-write then rename: the manifest's presence defines store validity
    fd, tmp = tempfile.mkstemp(dir=store_path, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(manifest.to_json())
        os.replace(tmp, store_path / MANIFEST_FILENAME)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_manifest(store_path: Path | str) -> BatchManifest:
    path = Path(store_path) / MANIFEST_FILENAME
    if not path.is_file():
        raise StoreError(f"no manifest at {path}; not a valid store")
    try:
        return BatchManifest.from_json(path.read_text(encoding="utf-8"))
    except StoreError:
        raise StoreError(f"corrupt manifest file {path}")


def manifest_digest(store_path: Path | str) -> str:
    path = Path(store_path) / MANIFEST_FILENAME
    if not path.is_file():
        raise StoreError(f"no manifest at {path}; not a valid store")
    return hashlib.sha256(path.read_bytes()).hexdigest()


def decode(
    store_path: Path | str,
    split: str,
    feature_set: list[str],
    cache: TensorCache | None = None,
    audit: IoAudit | None = None,
):
    """Iterate the split's batches in manifest order with only the requested features.

    Validation happens before the first batch is yielded.  Only the requested
    features' files plus labels and mask are ever opened; the optional
    ``audit`` records exactly which files and how many bytes.
    """
    store_path = Path(store_path)
    manifest = load_manifest(store_path)
    if split not in manifest.splits:
        raise StoreError(f"split {split!r} not in store; has {sorted(manifest.splits)}")
    entries = [manifest.feature(feature_id) for feature_id in feature_set]

    def _read(path: Path, signature=None, dtype=None):
        def loader():
            arr = read_tensor(path, audit)
            return arr
        arr = cache.get(str(path), loader) if cache is not None else loader()
        if dtype is not None and arr.dtype != dtype:
            raise StoreError(f"{path}: dtype {arr.dtype} does not match manifest")
        if signature is not None and not shape_matches(signature, arr.shape):
            raise StoreError(
                f"{path}: shape {arr.shape} does not match manifest signature {signature}"
            )
        return arr

    def batches():
        for batch_id in manifest.splits[split]:
            batch_dir = store_path / "batch" / split / batch_id
            doc_ids = manifest.batch_docs[f"{split}/{batch_id}"]
            b = len(doc_ids)
            tensors = {}
            for entry in entries:
                if entry.category == "document":
                    signature = [b] + list(entry.shape)
                else:  # token and embedding features gain the padded token axis
                    signature = [b, -1] + list(entry.shape[1:])
                tensors[entry.feature_id] = _read(
                    batch_dir / f"{entry.feature_id}.tns",
                    signature=signature, dtype=np.float32,
                )
            labels = _read(batch_dir / LABELS_FILE, signature=[b], dtype=np.int64)
            mask = _read(batch_dir / MASK_FILE, signature=[b, -1], dtype=np.float32)
            yield Batch(split=split, batch_id=batch_id, doc_ids=list(doc_ids),
                        tensors=tensors, labels=labels, mask=mask)

    return batches()


def store_digest(store_path: Path | str) -> str:
    """SHA-256 over sorted relative paths, each followed by its file bytes."""
    store_path = Path(store_path)
    if not (store_path / MANIFEST_FILENAME).is_file():
        raise StoreError(f"no manifest in {store_path}; not a valid store")
    digest = hashlib.sha256()
    paths = sorted(
        p.relative_to(store_path).as_posix()
        for p in store_path.rglob("*") if p.is_file()
    )
    for rel in paths:
        digest.update(rel.encode("utf-8"))
        digest.update((store_path / rel).read_bytes())
    return digest.hexdigest()


def inspect(store_path: Path | str) -> str:
    """Byte-stable human-readable report of the store's layout and sizes."""
    store_path = Path(store_path)
    manifest = load_manifest(store_path)
    lines = [
        f"format_version: {manifest.format_version}",
        f"corpus_digest: {manifest.corpus_digest}",
        f"config_fingerprint: {manifest.config_fingerprint}",
        f"batch_size: {manifest.batch_size}",
        f"chunk_size: {manifest.chunk_size}",
        f"classes: {', '.join(manifest.class_names)}",
        "features:",
    ]
    for entry in manifest.features:
        total = 0
        for split, batch_ids in manifest.splits.items():
            for batch_id in batch_ids:
                path = store_path / "batch" / split / batch_id / f"{entry.feature_id}.tns"
                if path.is_file():
                    total += path.stat().st_size
        shape = "[" + ", ".join(str(e) for e in entry.shape) + "]"
        lines.append(f"  {entry.feature_id}: {entry.category} {entry.dtype} "
                     f"{shape} ({total} bytes on disk)")
    lines.append("splits:")
    for split, batch_ids in manifest.splits.items():
        doc_counts = [len(manifest.batch_docs[f"{split}/{b}"]) for b in batch_ids]
        n_docs = sum(doc_counts)
        if all(c == manifest.batch_size for c in doc_counts):
            sizes = f"batch sizes {manifest.batch_size}"
        elif len(doc_counts) == 1:
            sizes = f"batch sizes {doc_counts[0]}"
        else:
            sizes = f"batch sizes {manifest.batch_size} then {doc_counts[-1]}"
        lines.append(f"  {split}: {len(batch_ids)} batches, {n_docs} docs, {sizes}")
    return "\n".join(lines) + "\n"


def rebuild_vectorizers(manifest: BatchManifest, base_dir: Path | str = ".",
                        feature_set: list[str] | None = None) -> list[FittedVectorizer]:
    """Reconstruct the fitted vectorizers recorded in a manifest.

    With ``feature_set``, only those features are rebuilt (predict does not
    need to load embedding tables for features the model never reads).
    """
    wanted = None if feature_set is None else set(feature_set)
    return [
        vectorizer_from_state(entry.feature_id, entry.category, entry.shape,
                              entry.fitted, base_dir=base_dir)
        for entry in manifest.features
        if wanted is None or entry.feature_id in wanted
    ]
