import pytest

from repronlp import rng
from repronlp.corpus import SplitSpec, load_corpus, make_splits
from repronlp.vectorize import (
    Embedding,
    Tfidf,
    TokenOneHot,
    VectorizerDescriptor,
    embedding_file_digest,
    fit_category_map,
    fit_tfidf,
    load_embeddings,
)

import fixture_corpus


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Full-size synthetic corpus + embeddings + config, written once per session."""
    return fixture_corpus.write_fixture(tmp_path_factory.mktemp("fixture"))


@pytest.fixture(scope="session")
def mini_dir(tmp_path_factory):
    """A small corpus for unit tests that exercise the pipeline cheaply."""
    return fixture_corpus.write_fixture(
        tmp_path_factory.mktemp("mini"), n_docs=40, seed=99, epochs=3, batch_size=8)


def fit_fixture_vectorizers(corpus, splits, base_dir):
    """Embedding + POS one-hot + tf-idf, fitted on the train split."""
    train_docs = [corpus.by_id[i] for i in splits.splits["train"]]
    emb_path = base_dir / "embeddings.txt"
    table = load_embeddings(emb_path)
    cmap = fit_category_map("pos", train_docs, unknown_policy="ignore_row_zero")
    tfidf_model = fit_tfidf(train_docs)
    return [
        Embedding(
            VectorizerDescriptor("glove", "embedding", "glove",
                                 [-1, table.dimension], False),
            table, "embeddings.txt", embedding_file_digest(emb_path)),
        TokenOneHot(
            VectorizerDescriptor("pos", "token", "pos", [-1, len(cmap)], True),
            cmap),
        Tfidf(
            VectorizerDescriptor("tfidf", "document", "tfidf",
                                 [len(tfidf_model.vocabulary)], True),
            tfidf_model),
    ]


def load_and_split(base_dir, seed=7):
    corpus = load_corpus(base_dir / "corpus.ndjson")
    spec = SplitSpec({"train": 0.8, "validation": 0.1, "test": 0.1}, shuffle=True)
    splits = make_splits(corpus, spec, rng.seed_root(seed).split("splits"))
    return corpus, splits
