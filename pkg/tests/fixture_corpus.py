"""Synthetic two-class fixture corpus for tests.

Labels are derivable from the token distribution: each document samples most
of its tokens from its own class's half of the vocabulary, and the label is
the majority source class.  Embeddings are class-informative with per-word
noise, so a mean-pooled linear model can separate the classes.  Every byte
written is a pure function of the seed.

Also runnable as a script (used by the dashboard's live test):

    python tests/fixture_corpus.py OUTDIR [--docs N] [--epochs N] [--seed N]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from repronlp import rng  # noqa: E402

TAGS_GOOD = ["NN", "JJ"]
TAGS_BAD = ["VB", "JJ"]

CONFIG_TEMPLATE = """\
# synthetic two-class text classification experiment
[experiment]
seed = 7

[corpus]
path = corpus.ndjson

[splits]
train = 0.8
validation = 0.1
test = 0.1
shuffle = true

[vectorizer:glove]
kind = embedding
path = embeddings.txt

[vectorizer:pos]
kind = token_onehot
key = pos
unknown = ignore_row_zero

[vectorizer:tfidf]
kind = tfidf

[feature_set:full]
features = glove, pos, tfidf

[feature_set:lean]
features = glove

[model]
feature_set = ref:feature_set:full
hidden = 32
activation = relu
learning_rate = {learning_rate}
epochs = {epochs}
patience = {patience}

[batching]
batch_size = {batch_size}
chunk_size = 2
workers = 2
"""


def word(cls: int, i: int) -> str:
    return f"{'good' if cls == 0 else 'bad'}{i:02d}"


def word_tag(cls: int, i: int) -> str:
    return (TAGS_GOOD if cls == 0 else TAGS_BAD)[i % 2]


def generate_documents(n_docs: int, seed: int, vocab_per_class: int = 100):
    stream = rng.seed_root(seed).split("fixture/docs")
    docs = []
    for d in range(n_docs):
        own = d % 2
        length = 4 + stream.next_below(9)
        tokens, tags, own_count = [], [], 0
        for _ in range(length):
            cls = own if stream.next_f64_unit() < 0.78 else 1 - own
            i = stream.next_below(vocab_per_class)
            tokens.append(word(cls, i))
            tags.append(word_tag(cls, i))
            own_count += cls == own
        tokens.append(".")
        tags.append(".")
        majority = own if 2 * own_count >= length else 1 - own
        docs.append({
            "id": f"doc{d:04d}",
            "tokens": tokens,
            "annotations": {"pos": tags},
            "label": "positive" if majority == 0 else "negative",
        })
    return docs


def generate_embeddings(seed: int, dim: int = 16, vocab_per_class: int = 100):
    stream = rng.seed_root(seed).split("fixture/embeddings")
    lines = []
    for cls in (0, 1):
        sign = 1.0 if cls == 0 else -1.0
        for i in range(vocab_per_class):
            vec = []
            for k in range(dim):
                base = sign * (0.6 if k < dim // 2 else -0.2)
                vec.append(base + 0.25 * stream.next_f64_normal())
            lines.append(word(cls, i) + " " + " ".join(f"{v:.5f}" for v in vec))
    return lines


def write_fixture(outdir: Path, *, n_docs: int = 500, seed: int = 2718,
                  epochs: int = 10, batch_size: int = 32,
                  learning_rate: float = 0.3, patience: int = 0) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    docs = generate_documents(n_docs, seed)
    corpus_lines = [json.dumps(d) for d in docs]
    (outdir / "corpus.ndjson").write_text("\n".join(corpus_lines) + "\n", encoding="utf-8")
    (outdir / "embeddings.txt").write_text(
        "\n".join(generate_embeddings(seed)) + "\n", encoding="utf-8")
    (outdir / "experiment.conf").write_text(
        CONFIG_TEMPLATE.format(epochs=epochs, batch_size=batch_size,
                               learning_rate=learning_rate, patience=patience),
        encoding="utf-8")
    return outdir


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("outdir", type=Path)
    parser.add_argument("--docs", type=int, default=500)
    parser.add_argument("--seed", type=int, default=2718)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--batch-size", type=int, default=32)
    args = parser.parse_args(argv)
    write_fixture(args.outdir, n_docs=args.docs, seed=args.seed,
                  epochs=args.epochs, batch_size=args.batch_size)
    print(args.outdir)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
