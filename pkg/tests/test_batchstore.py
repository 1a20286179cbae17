from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from repronlp import rng
from repronlp.batchstore import (
    StoreError,
    TensorCache,
    decode,
    encode,
    inspect,
    load_manifest,
    store_digest,
)
from repronlp.corpus import Corpus, Document, SplitAssignment
from repronlp.tensorfile import IoAudit
from repronlp.vectorize import (
    CategoryMap,
    FittedVectorizer,
    TokenOneHot,
    VectorizerDescriptor,
)

from conftest import fit_fixture_vectorizers, load_and_split

GOLDEN_DIR = Path(__file__).parent / "goldens"


def tiny_corpus(n=10, tokens_per_doc=3):
    docs = [
        Document(f"d{i}", [f"w{i}_{j}" for j in range(tokens_per_doc)],
                 {"pos": ["NN"] * tokens_per_doc}, "a" if i % 2 else "b")
        for i in range(n)
    ]
    return Corpus(documents=docs, digest="00" * 32)


def tiny_vectorizers(width=2):
    cmap = CategoryMap("pos", ["NN", "VB"][:width], unknown_policy="ignore_row_zero")
    return [TokenOneHot(
        VectorizerDescriptor("pos", "token", "pos", [-1, len(cmap)], True), cmap)]


def one_split(corpus):
    return SplitAssignment(splits={"train": [d.doc_id for d in corpus.documents]},
                           corpus_digest=corpus.digest)


def run_encode(corpus, splits, vectorizers, store, workers=1, batch_size=4,
               chunk_size=2, seed=0):
    return encode(
        corpus, splits, vectorizers,
        batch_size=batch_size, chunk_size=chunk_size, workers=workers,
        store_path=store, root_stream=rng.seed_root(seed),
    )


def test_encode_cuts_batches_preserving_order(tmp_path):
    corpus = tiny_corpus(10)
    manifest = run_encode(corpus, one_split(corpus), tiny_vectorizers(),
                          tmp_path / "store")
    ids = manifest.splits["train"]
    assert ids == ["000000", "000001", "000002"]
    sizes = [len(manifest.batch_docs[f"train/{b}"]) for b in ids]
    assert sizes == [4, 4, 2]
    flattened = [d for b in ids for d in manifest.batch_docs[f"train/{b}"]]
    assert flattened == [d.doc_id for d in corpus.documents]


def test_encode_writes_expected_file_count(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    manifest = run_encode(corpus, splits, vecs, tmp_path / "store", batch_size=8)
    n_batches = sum(len(v) for v in manifest.splits.values())
    tns_files = list((tmp_path / "store").rglob("*.tns"))
    # 3 features + labels + mask per batch
    assert len(tns_files) == n_batches * (3 + 2)


def test_encode_refuses_nonempty_store(tmp_path):
    store = tmp_path / "store"
    store.mkdir()
    (store / "junk.txt").write_text("x")
    corpus = tiny_corpus(4)
    with pytest.raises(StoreError, match="not empty"):
        run_encode(corpus, one_split(corpus), tiny_vectorizers(), store)


def test_worker_count_invariance(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    digests = []
    for workers in (1, 2, 4):
        store = tmp_path / f"store-w{workers}"
        run_encode(corpus, splits, vecs, store, workers=workers, batch_size=8)
        digests.append(store_digest(store))
    assert digests[0] == digests[1] == digests[2]


def test_decode_order_matches_split_order(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    for split, expected_ids in splits.splits.items():
        decoded = [d for batch in decode(store, split, ["glove"]) for d in batch.doc_ids]
        assert decoded == expected_ids


def test_decode_is_repeatable(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)

    def collect():
        out = []
        for batch in decode(store, "train", ["glove", "pos"]):
            out.append((batch.batch_id, tuple(batch.doc_ids),
                        batch.tensors["glove"].tobytes(), batch.labels.tobytes()))
        return out

    assert collect() == collect()


def test_decode_unknown_feature_fails_before_yield(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    with pytest.raises(StoreError, match="bogus"):
        decode(store, "train", ["bogus"])


def test_decode_unknown_split(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    with pytest.raises(StoreError, match="nope"):
        decode(store, "nope", ["glove"])


def test_partial_feature_io_audit(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)

    audit = IoAudit()
    for _ in decode(store, "train", ["glove"], audit=audit):
        pass
    opened = {Path(p).name for p in audit.files_opened}
    assert opened == {"glove.tns", "labels.tns", "mask.tns"}
    expected_bytes = sum(
        path.stat().st_size
        for path in (tmp_path / "store" / "batch" / "train").rglob("*.tns")
        if path.name in ("glove.tns", "labels.tns", "mask.tns")
    )
    assert audit.bytes_read == expected_bytes


def test_feature_swap_stability(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    lean = list(decode(store, "train", ["glove"]))
    full = list(decode(store, "train", ["glove", "pos", "tfidf"]))
    assert [b.batch_id for b in lean] == [b.batch_id for b in full]
    assert [b.doc_ids for b in lean] == [b.doc_ids for b in full]
    for a, b in zip(lean, full):
        assert np.array_equal(a.labels, b.labels)
    assert set(full[0].tensors) == {"glove", "pos", "tfidf"}
    assert set(lean[0].tensors) == {"glove"}


def test_padding_and_mask(tmp_path):
    docs = [
        Document("short", ["x"], {"pos": ["NN"]}, "a"),
        Document("long", ["x", "y", "z"], {"pos": ["NN", "VB", "NN"]}, "b"),
    ]
    corpus = Corpus(documents=docs, digest="11" * 32)
    store = tmp_path / "store"
    run_encode(corpus, one_split(corpus), tiny_vectorizers(), store, batch_size=2)
    (batch,) = list(decode(store, "train", ["pos"]))
    assert batch.mask.tolist() == [[1, 0, 0], [1, 1, 1]]
    pos = batch.tensors["pos"]
    assert pos.shape == (2, 3, 2)
    assert pos[0, 1:].tolist() == [[0, 0], [0, 0]]  # padded rows stay zero
    # labels follow sorted class order: a=0, b=1
    assert batch.labels.tolist() == [0, 1]


def test_all_empty_token_documents_round_trip(tmp_path):
    docs = [Document(f"d{i}", [], {"pos": []}, "a" if i % 2 else "b")
            for i in range(3)]
    corpus = Corpus(documents=docs, digest="22" * 32)
    store = tmp_path / "store"
    run_encode(corpus, one_split(corpus), tiny_vectorizers(), store, batch_size=2)
    batches = list(decode(store, "train", ["pos"]))
    assert [b.tensors["pos"].shape for b in batches] == [(2, 0, 2), (1, 0, 2)]
    assert [b.mask.shape for b in batches] == [(2, 0), (1, 0)]


def test_cache_budget_pass_through_identical(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)

    def collect(cache):
        return [
            (b.batch_id, b.tensors["glove"].tobytes(), b.labels.tobytes())
            for b in decode(store, "train", ["glove"], cache=cache)
        ]

    unbounded = TensorCache(max_bytes=1 << 30)
    tiny = TensorCache(max_bytes=8)  # smaller than any tensor file
    assert collect(unbounded) == collect(tiny)
    assert tiny.resident_bytes == 0
    assert tiny.hits == 0
    # a second pass through the unbounded cache is all hits
    before = unbounded.misses
    collect(unbounded)
    assert unbounded.misses == before
    assert unbounded.hits > 0


def test_cache_tolerates_concurrent_readers(mini_dir, tmp_path):
    import threading

    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    cache = TensorCache(max_bytes=1 << 20)
    results = [None] * 4

    def reader(slot):
        results[slot] = [
            (b.batch_id, b.tensors["glove"].tobytes())
            for b in decode(store, "train", ["glove"], cache=cache)
        ]

    threads = [threading.Thread(target=reader, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == results[0] for r in results)
    assert cache.hits + cache.misses >= 4 * 6  # 4 readers x (glove+labels+mask) x 2 batches


def test_cache_eviction_counters():
    cache = TensorCache(max_bytes=100)
    a = np.zeros(10, dtype=np.float32)  # 40 bytes

    cache.get("x", lambda: a)
    cache.get("y", lambda: a)
    cache.get("z", lambda: a)  # evicts x
    assert cache.evictions == 1
    assert cache.resident_bytes == 80
    cache.get("y", lambda: a)
    assert cache.hits == 1


def test_store_digest_flips_on_any_byte(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    before = store_digest(store)
    victim = sorted(store.rglob("*.tns"))[0]
    data = bytearray(victim.read_bytes())
    data[-1] ^= 0xFF
    victim.write_bytes(bytes(data))
    assert store_digest(store) != before


def test_store_digest_requires_manifest(tmp_path):
    empty = tmp_path / "nothing"
    empty.mkdir()
    with pytest.raises(StoreError):
        store_digest(empty)


def test_decode_detects_corrupt_tensor(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    victim = store / "batch" / "train" / "000000" / "glove.tns"
    data = bytearray(victim.read_bytes())
    data[0] = 0x00  # break the magic
    victim.write_bytes(bytes(data))
    with pytest.raises(Exception, match="magic"):
        list(decode(store, "train", ["glove"]))


def test_decode_detects_shape_mismatch_vs_manifest(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    victim = store / "batch" / "train" / "000000" / "glove.tns"
    from repronlp.tensorfile import write_tensor
    write_tensor(victim, np.zeros((8, 3, 99), dtype=np.float32))  # valid file, wrong width
    with pytest.raises(StoreError, match="shape"):
        list(decode(store, "train", ["glove"]))


def test_decode_detects_dtype_mismatch_vs_manifest(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    victim = store / "batch" / "train" / "000000" / "labels.tns"
    from repronlp.tensorfile import write_tensor
    write_tensor(victim, np.zeros(8, dtype=np.float32))  # labels must be i64
    with pytest.raises(StoreError, match="dtype"):
        list(decode(store, "train", ["glove"]))


def test_inspect_matches_golden(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    run_encode(corpus, splits, vecs, store, batch_size=8)
    report = inspect(store)
    golden = (GOLDEN_DIR / "inspect_mini.txt").read_text(encoding="utf-8")
    assert report == golden
    assert inspect(store) == report  # byte-stable
    assert "train: 4 batches" in report


def test_inspect_corrupt_manifest(tmp_path):
    store = tmp_path / "store"
    store.mkdir()
    (store / "manifest.json").write_text("{broken", encoding="utf-8")
    with pytest.raises(StoreError, match="manifest"):
        inspect(store)


@dataclass
class _ExplodingVectorizer(FittedVectorizer):
    def transform(self, doc):
        raise RuntimeError("boom")

    def fitted_state(self):
        return {"kind": "exploding"}


def test_worker_failure_leaves_no_manifest(tmp_path):
    corpus = tiny_corpus(6)
    store = tmp_path / "store"
    bad = [_ExplodingVectorizer(
        VectorizerDescriptor("bad", "document", "bad", [1], False))]
    for workers in (1, 2):
        target = tmp_path / f"store-{workers}"
        with pytest.raises(StoreError, match="worker failed"):
            run_encode(corpus, one_split(corpus), bad, target, workers=workers)
        assert not (target / "manifest.json").exists()
        with pytest.raises(StoreError):
            load_manifest(target)


def test_multidoc_vectorizer_rejected(tmp_path):
    corpus = tiny_corpus(4)
    bad = [_ExplodingVectorizer(
        VectorizerDescriptor("ov", "multi_document", "ov", [2], False))]
    with pytest.raises(StoreError, match="multi-document"):
        run_encode(corpus, one_split(corpus), bad, tmp_path / "store")


def test_manifest_round_trip(mini_dir, tmp_path):
    corpus, splits = load_and_split(mini_dir)
    vecs = fit_fixture_vectorizers(corpus, splits, mini_dir)
    store = tmp_path / "store"
    written = run_encode(corpus, splits, vecs, store, batch_size=8)
    loaded = load_manifest(store)
    assert loaded == written
    # concatenated batch docs reproduce the split assignment exactly
    for split, ids in splits.splits.items():
        docs = [d for b in loaded.splits[split]
                for d in loaded.batch_docs[f"{split}/{b}"]]
        assert docs == ids
