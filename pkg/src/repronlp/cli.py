"""Command line: encode, train, test, predict, info, report.

Flags mirror the resolved configuration's settable fields, so anything the
config declares can be overridden per invocation without editing the file
(seed precedence: flag > config > default 0).  Data goes to stdout, logs and
debug output to stderr, so pipelines stay clean.

Exit codes: 0 success, 1 usage, 2 configuration error, 3 data error,
4 store error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import config as configlib
from .batchstore import (
    StoreError,
    TensorCache,
    assemble_batch,
    encode,
    inspect,
    load_manifest,
    manifest_digest,
    rebuild_vectorizers,
    store_digest,
)
from .config import ConfigError, ResolvedPlan, VectorizerPlan
from .corpus import Corpus, CorpusError, SplitAssignment, load_corpus, make_splits
from .model import (
    ModelConfig,
    ModelError,
    TrainerState,
    build,
    evaluate,
    forward,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .monitor import RunHandle, serve
from .corpus import parse_document
from .rng import seed_root
from .tensorfile import TensorFormatError
from .vectorize import (
    CategoryMap,
    Embedding,
    FittedVectorizer,
    TagCounts,
    Tfidf,
    TokenOneHot,
    VectorizeError,
    VectorizerDescriptor,
    embedding_file_digest,
    fit_category_map,
    fit_tfidf,
    load_embeddings,
)

logger = logging.getLogger("repronlp")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_STORE = 4

DEFAULT_CACHE_BYTES = 256 * 1024 * 1024


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fit_vectorizers(plan: ResolvedPlan, corpus: Corpus, splits: SplitAssignment,
                    base_dir: Path) -> list[FittedVectorizer]:
    """Fit every declared vectorizer (train split only), single-threaded."""
    train_docs = [corpus.by_id[i] for i in splits.splits.get("train", [])]

    def need_train(vp: VectorizerPlan):
        if not train_docs:
            raise VectorizeError(
                f"vectorizer {vp.feature_id!r} must be fit on a train split, "
                "but the split assignment has none"
            )

    fitted: list[FittedVectorizer] = []
    for vp in plan.vectorizers:
        if vp.kind == "embedding":
            path = base_dir / vp.params["path"]
            table = load_embeddings(path)
            descriptor = VectorizerDescriptor(
                vp.feature_id, "embedding", vp.feature_id,
                [-1, table.dimension], False)
            fitted.append(Embedding(descriptor, table, vp.params["path"],
                                    embedding_file_digest(path)))
        elif vp.kind in ("token_onehot", "tag_counts"):
            policy = vp.params.get("unknown", "error")
            if "categories" in vp.params:
                categories = [c.strip() for c in vp.params["categories"].split(",")
                              if c.strip()]
                cmap = CategoryMap(vp.params["key"], categories, policy)
            else:
                need_train(vp)
                cmap = fit_category_map(vp.params["key"], train_docs, policy)
            if vp.kind == "token_onehot":
                descriptor = VectorizerDescriptor(
                    vp.feature_id, "token", vp.feature_id, [-1, len(cmap)], True)
                fitted.append(TokenOneHot(descriptor, cmap))
            else:
                descriptor = VectorizerDescriptor(
                    vp.feature_id, "document", vp.feature_id, [len(cmap)], True)
                fitted.append(TagCounts(descriptor, cmap))
        elif vp.kind == "tfidf":
            need_train(vp)
            model = fit_tfidf(train_docs)
            descriptor = VectorizerDescriptor(
                vp.feature_id, "document", vp.feature_id,
                [len(model.vocabulary)], True)
            fitted.append(Tfidf(descriptor, model, fit_split="train"))
        else:  # pragma: no cover - resolve() already rejects unknown kinds
            raise ConfigError(f"unsupported vectorizer kind {vp.kind!r}")
    return fitted


def _load_plan(args) -> tuple[configlib.ConfigDoc, ResolvedPlan, Path, str]:
    doc = configlib.parse_file(args.config)
    plan = configlib.resolve(doc)
    base_dir = Path(args.config).resolve().parent
    return doc, plan, base_dir, configlib.fingerprint(doc)


def _store_path(args, plan: ResolvedPlan, base_dir: Path) -> Path:
    if getattr(args, "store", None):
        return Path(args.store)
    if plan.store_path:
        return base_dir / plan.store_path
    raise UsageError("no store path: pass --store or set [experiment] store")


def _effective_seed(args, plan: ResolvedPlan) -> int:
    return args.seed if args.seed is not None else plan.seed


def _model_config(plan: ResolvedPlan, feature_set_name: str, class_names: list[str],
                  seed: int, epochs: int | None) -> ModelConfig:
    if feature_set_name not in plan.feature_sets:
        raise ConfigError(f"unknown feature set {feature_set_name!r}; config declares "
                          f"{sorted(plan.feature_sets)}")
    return ModelConfig(
        feature_set=plan.feature_sets[feature_set_name],
        hidden_widths=plan.model.hidden_widths,
        activation=plan.model.activation,
        learning_rate=plan.model.learning_rate,
        epochs=epochs if epochs is not None else plan.model.epochs,
        early_stop_patience=plan.model.patience,
        seed=seed,
        class_names=class_names,
    )


class EventFileWriter:
    def __init__(self, path: Path, append: bool):
        self._handle = open(path, "a" if append else "w", encoding="utf-8")

    def __call__(self, event) -> None:
        self._handle.write(json.dumps(event.to_json_dict()) + "\n")
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()


def _cmd_encode(args) -> int:
    doc, plan, base_dir, fingerprint = _load_plan(args)
    store = _store_path(args, plan, base_dir)
    corpus = load_corpus(base_dir / plan.corpus_path)
    seed = _effective_seed(args, plan)
    root = seed_root(seed)
    splits = make_splits(corpus, plan.split_spec, root.split("splits"))
    fitted = fit_vectorizers(plan, corpus, splits, base_dir)
    workers = args.workers if args.workers is not None else plan.batching.workers
    logger.info("encoding %d documents into %s with %d workers",
                len(corpus), store, workers)
    encode(
        corpus, splits, fitted,
        batch_size=plan.batching.batch_size,
        chunk_size=plan.batching.chunk_size,
        workers=workers,
        store_path=store,
        root_stream=root,
        class_names=plan.model.class_names,
        config_fingerprint=fingerprint,
    )
    print(f"store: {store}")
    print(f"digest: {store_digest(store)}")
    return EXIT_OK


def _debug_model_block(model, sink) -> None:
    widths = " + ".join(f"{fid} {w}" for fid, w in
                        model.token_features + model.doc_features)
    sink(f"model: input {model.input_dim} ({widths})")
    last = len(model.layers) - 1
    for i, (fan_in, fan_out) in enumerate(model.layer_dims()):
        sink(f"linear: {fan_in} -> {fan_out}")
        if i < last:
            sink(model.config.activation)


def _cmd_train(args) -> int:
    doc, plan, base_dir, fingerprint = _load_plan(args)
    store = _store_path(args, plan, base_dir)
    manifest = load_manifest(store)
    if manifest.config_fingerprint != fingerprint and not args.allow_mismatch:
        raise StoreError(
            f"store {store} was encoded from a different configuration; "
            "re-encode or pass --allow-mismatch"
        )
    seed = _effective_seed(args, plan)
    feature_set_name = args.feature_set or plan.model.feature_set_name
    config = _model_config(plan, feature_set_name, manifest.class_names, seed,
                           args.epochs)

    debug_sink = None
    if args.debug:
        def debug_sink(line):
            print(line, file=sys.stderr)

    if args.resume:
        state = load_checkpoint(
            args.resume,
            expected_config_fingerprint=fingerprint,
            expected_manifest_digest=manifest_digest(store),
            expected_feature_set=config.feature_set,
            override=args.allow_mismatch,
        )
        # the resumed run's target supersedes the one recorded mid-run, so a
        # continued checkpoint is byte-identical to an uninterrupted one
        state.model.config.epochs = config.epochs
        logger.info("resuming from %s at epoch %d", args.resume, state.epoch)
    else:
        root = seed_root(seed)
        model = build(config, manifest, root.split("init"))
        state = TrainerState.fresh(model, root)
    if debug_sink is not None:
        _debug_model_block(state.model, debug_sink)

    run_id = f"{fingerprint[:8]}-s{seed}"
    handle = None
    server = None
    if args.monitor_port is not None:
        handle = RunHandle(run_id, config_fingerprint=fingerprint)
        server = serve(handle, args.monitor_port)
        if server is not None:
            logger.info("monitor listening on 127.0.0.1:%d", server.port)

    events_path = Path(args.events) if args.events else store / "events.ndjson"
    writer = EventFileWriter(events_path, append=bool(args.resume))

    def sink(event):
        writer(event)
        if handle is not None:
            handle.publish(event)
        logger.info("epoch %d: train_loss=%.6f validation_loss=%.6f accuracy=%.4f%s",
                    event.epoch, event.train_loss, event.validation_loss,
                    event.validation_accuracy,
                    "" if event.action == "none" else f" [{event.action}]")

    cache = TensorCache(DEFAULT_CACHE_BYTES)
    try:
        result = train(
            state, store,
            control=handle,
            sink=sink,
            cache=cache,
            config_fingerprint=fingerprint,
            manifest=manifest,
            record_wall=not args.no_timestamps,
            debug_sink=debug_sink,
        )
    finally:
        writer.close()
        if handle is not None:
            handle.complete()
        if server is not None:
            server.stop()

    checkpoint_path = Path(args.checkpoint) if args.checkpoint else store / "checkpoint.zck"
    save_checkpoint(result.state, checkpoint_path,
                    config_fingerprint=fingerprint,
                    manifest_digest=manifest_digest(store))
    print(f"trained {result.state.epoch} epochs; best epoch {result.state.best_epoch}")
    print(f"checkpoint: {checkpoint_path}")
    print(f"events: {events_path}")
    return EXIT_OK


def _cmd_test(args) -> int:
    doc, plan, base_dir, fingerprint = _load_plan(args)
    store = _store_path(args, plan, base_dir)
    manifest = load_manifest(store)
    checkpoint = Path(args.checkpoint) if args.checkpoint else store / "checkpoint.zck"
    state = load_checkpoint(
        checkpoint,
        expected_config_fingerprint=fingerprint,
        expected_manifest_digest=manifest_digest(store),
        override=args.allow_mismatch,
    )
    metrics = evaluate(state.best_model(), store, args.split)
    print(json.dumps({"accuracy": metrics.accuracy, "loss": metrics.loss,
                      "macro_f1": metrics.macro_f1}, sort_keys=True))
    return EXIT_OK


def _cmd_predict(args) -> int:
    doc, plan, base_dir, fingerprint = _load_plan(args)
    store = _store_path(args, plan, base_dir)
    manifest = load_manifest(store)
    checkpoint = Path(args.checkpoint) if args.checkpoint else store / "checkpoint.zck"
    state = load_checkpoint(
        checkpoint,
        expected_config_fingerprint=fingerprint,
        expected_manifest_digest=manifest_digest(store),
        override=args.allow_mismatch,
    )
    model = state.best_model()
    # fitted state comes from the manifest; nothing is refit at predict time
    vectorizers = rebuild_vectorizers(manifest, base_dir=base_dir,
                                      feature_set=model.config.feature_set)
    for lineno, line in enumerate(sys.stdin, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"stdin:{lineno}: invalid JSON: {exc.msg}") from None
        payload.setdefault("label", "")
        payload.setdefault("id", f"stdin-{lineno}")
        document = parse_document(payload, where=f"stdin:{lineno}")
        batch = assemble_batch([document], vectorizers)
        logits = forward(model, batch)
        print(model.config.class_names[int(logits[0].argmax())])
    return EXIT_OK


def _cmd_info(args) -> int:
    print(inspect(Path(args.store)), end="")
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = []
    for path in args.events:
        path = Path(path)
        if not path.is_file():
            raise CorpusError(f"events file not found: {path}")
        run_id = path.stem
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            rows.append([run_id, event["epoch"], event["train_loss"],
                         event["validation_loss"], event["validation_accuracy"],
                         event["action"]])
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["run_id", "epoch", "train_loss", "validation_loss",
                         "validation_accuracy", "action"])
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="repronlp",
                     description="Reproducible NLP experiment pipeline")
    parser.add_argument("--no-timestamps", action="store_true",
                        help="suppress wall-clock output (log times, wall_ms)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, store_required=False):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--store", default=None,
                       required=store_required, help="batch store directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p_encode = sub.add_parser("encode", help="vectorize the corpus into a store")
    common(p_encode)
    p_encode.add_argument("--workers", type=int, default=None,
                          help="override worker count")
    p_encode.set_defaults(func=_cmd_encode)

    p_train = sub.add_parser("train", help="train from an encoded store")
    common(p_train)
    p_train.add_argument("--feature-set", default=None,
                         help="named feature set from the config")
    p_train.add_argument("--epochs", type=int, default=None,
                         help="override the target epoch count")
    p_train.add_argument("--checkpoint", default=None, help="checkpoint output path")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.add_argument("--events", default=None, help="events.ndjson output path")
    p_train.add_argument("--monitor-port", type=int, default=None,
                         help="serve the live monitor on this port (0 = any)")
    p_train.add_argument("--debug", action="store_true",
                         help="print batch composition and layer dimensions to stderr")
    p_train.add_argument("--allow-mismatch", action="store_true",
                         help="force past fingerprint checks")
    p_train.set_defaults(func=_cmd_train)

    p_test = sub.add_parser("test", help="evaluate a checkpoint on a split")
    common(p_test)
    p_test.add_argument("--checkpoint", default=None)
    p_test.add_argument("--split", default="test")
    p_test.add_argument("--allow-mismatch", action="store_true")
    p_test.set_defaults(func=_cmd_test)

    p_predict = sub.add_parser(
        "predict", help="read documents (ndjson) on stdin, print one label per line")
    common(p_predict)
    p_predict.add_argument("--checkpoint", default=None)
    p_predict.add_argument("--allow-mismatch", action="store_true")
    p_predict.set_defaults(func=_cmd_predict)

    p_info = sub.add_parser("info", help="describe an encoded store")
    p_info.add_argument("--store", required=True)
    p_info.set_defaults(func=_cmd_info)

    p_report = sub.add_parser("report", help="merge event logs into one CSV")
    p_report.add_argument("events", nargs="+", help="events.ndjson files")
    p_report.add_argument("--out", default=None, help="CSV output path (default stdout)")
    p_report.set_defaults(func=_cmd_report)

    return parser


def _setup_logging(no_timestamps: bool) -> None:
    fmt = "%(levelname)s %(message)s" if no_timestamps else \
        "%(asctime)s %(levelname)s %(message)s"
    logging.basicConfig(level=logging.INFO, format=fmt, stream=sys.stderr, force=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.no_timestamps)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, VectorizeError, ModelError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StoreError, TensorFormatError) as exc:
        print(f"store error: {exc}", file=sys.stderr)
        return EXIT_STORE


if __name__ == "__main__":
    raise SystemExit(main())
