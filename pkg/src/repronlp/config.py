"""INI-style experiment configuration: parse, resolve, fingerprint.

One config file declares the whole pipeline: corpus, splits, vectorizers,
named feature sets, model, and batching.  A value of the form
``ref:<section>`` points at another section; the reference graph must be
acyclic and fully resolvable.  The fingerprint is a SHA-256 over a canonical
serialization (sections and keys sorted, values trimmed, LF endings), so
whitespace, comments, and ordering never change an experiment's identity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import SplitSpec
from .vectorize import UNKNOWN_POLICIES

REF_PREFIX = "ref:"

VECTORIZER_KINDS = ("embedding", "token_onehot", "tag_counts", "tfidf")

_KIND_CATEGORY = {
    "embedding": "embedding",
    "token_onehot": "token",
    "tag_counts": "document",
    "tfidf": "document",
}


class ConfigError(ValueError):
    """Raised for syntax errors, dangling refs, cycles, and bad field values."""


@dataclass
class ConfigDoc:
    sections: dict[str, dict[str, str]] = field(default_factory=dict)

    def get(self, section: str, key: str, default: str | None = None) -> str | None:
        return self.sections.get(section, {}).get(key, default)

    def require(self, section: str, key: str) -> str:
        value = self.get(section, key)
        if value is None:
            raise ConfigError(f"section [{section}] is missing required key {key!r}")
        return value


def parse(text: str) -> ConfigDoc:
    """Parse ``[section]`` headers and ``key = value`` lines; ``#`` comments."""
    doc = ConfigDoc()
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section name")
            if name in doc.sections:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            doc.sections[name] = {}
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in doc.sections[current]:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} in section [{current}]"
            )
        doc.sections[current][key] = value
    return doc


def parse_file(path: Path | str) -> ConfigDoc:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse(path.read_text(encoding="utf-8"))


def canonical_text(doc: ConfigDoc) -> str:
    lines = []
    for section in sorted(doc.sections):
        lines.append(f"[{section}]")
        for key in sorted(doc.sections[section]):
            lines.append(f"{key}={doc.sections[section][key]}")
    return "\n".join(lines) + ("\n" if lines else "")


def fingerprint(doc: ConfigDoc) -> str:
    """SHA-256 of the canonical serialization."""
    return hashlib.sha256(canonical_text(doc).encode("utf-8")).hexdigest()


def _check_refs(doc: ConfigDoc) -> None:
    """Every ref must resolve; the reference graph must be acyclic."""
    edges: dict[str, list[str]] = {}
    for section, pairs in doc.sections.items():
        for key, value in pairs.items():
            if value.startswith(REF_PREFIX):
                target = value[len(REF_PREFIX):]
                if target not in doc.sections:
                    raise ConfigError(
                        f"[{section}] {key} references unknown section [{target}]"
                    )
                edges.setdefault(section, []).append(target)

    visiting: list[str] = []
    done: set[str] = set()

    def visit(node: str) -> None:
        if node in done:
            return
        if node in visiting:
            cycle = visiting[visiting.index(node):] + [node]
            raise ConfigError(f"reference cycle: {cycle}")
        visiting.append(node)
        for target in edges.get(node, []):
            visit(target)
        visiting.pop()
        done.add(node)

    for section in doc.sections:
        visit(section)


def _deref(doc: ConfigDoc, value: str) -> str:
    return value[len(REF_PREFIX):] if value.startswith(REF_PREFIX) else value


@dataclass
class VectorizerPlan:
    """Declared vectorizer; the concrete descriptor exists only after fitting."""

    feature_id: str
    kind: str
    category: str
    params: dict[str, str]
    fit_required: bool


@dataclass
class ModelPlan:
    feature_set_name: str
    hidden_widths: list[int]
    activation: str
    learning_rate: float
    epochs: int
    patience: int
    class_names: list[str] | None


@dataclass
class BatchingPlan:
    batch_size: int
    chunk_size: int
    workers: int


@dataclass
class ResolvedPlan:
    seed: int
    corpus_path: str
    split_spec: SplitSpec
    vectorizers: list[VectorizerPlan]
    feature_sets: dict[str, list[str]]
    model: ModelPlan
    batching: BatchingPlan
    store_path: str | None


def _parse_int(doc: ConfigDoc, section: str, key: str, default: int | None = None,
               minimum: int | None = None) -> int:
    raw = doc.get(section, key)
    if raw is None:
        if default is None:
            raise ConfigError(f"section [{section}] is missing required key {key!r}")
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}") from None
    if minimum is not None and value < minimum:
        raise ConfigError(f"[{section}] {key} must be >= {minimum}, got {value}")
    return value


def _parse_float(doc: ConfigDoc, section: str, key: str) -> float:
    raw = doc.require(section, key)
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}") from None


def _parse_bool(doc: ConfigDoc, section: str, key: str, default: bool) -> bool:
    raw = doc.get(section, key)
    if raw is None:
        return default
    if raw.lower() in ("true", "yes", "1"):
        return True
    if raw.lower() in ("false", "no", "0"):
        return False
    raise ConfigError(f"[{section}] {key} must be a boolean, got {raw!r}")


def _comma_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def resolve(doc: ConfigDoc) -> ResolvedPlan:
    """Validate the document and instantiate the experiment plan."""
    _check_refs(doc)

    corpus_path = doc.require("corpus", "path") if "corpus" in doc.sections else None
    if corpus_path is None:
        raise ConfigError("missing [corpus] section")

    if "splits" not in doc.sections:
        raise ConfigError("missing [splits] section")
    proportions = {}
    for name in ("train", "validation", "test"):
        raw = doc.get("splits", name)
        if raw is not None:
            try:
                proportions[name] = float(raw)
            except ValueError:
                raise ConfigError(f"[splits] {name} must be a number") from None
    split_spec = SplitSpec(proportions=proportions,
                           shuffle=_parse_bool(doc, "splits", "shuffle", True))
    try:
        split_spec.validate()
    except ValueError as exc:
        raise ConfigError(f"[splits]: {exc}") from None

    vectorizers: list[VectorizerPlan] = []
    for section, pairs in doc.sections.items():
        if not section.startswith("vectorizer:"):
            continue
        feature_id = section.split(":", 1)[1]
        if not feature_id:
            raise ConfigError(f"section [{section}] has an empty vectorizer name")
        kind = pairs.get("kind")
        if kind not in VECTORIZER_KINDS:
            raise ConfigError(
                f"[{section}] has unknown kind {kind!r}; expected one of "
                f"{list(VECTORIZER_KINDS)}"
            )
        params = dict(pairs)
        if kind in ("token_onehot", "tag_counts"):
            if "key" not in params:
                raise ConfigError(f"[{section}] needs 'key' (the annotation to encode)")
            policy = params.get("unknown", "error")
            if policy not in UNKNOWN_POLICIES:
                raise ConfigError(
                    f"[{section}] unknown= must be one of {list(UNKNOWN_POLICIES)}"
                )
        if kind == "embedding" and "path" not in params:
            raise ConfigError(f"[{section}] needs 'path' (the embedding file)")
        fit_required = kind == "tfidf" or (
            kind in ("token_onehot", "tag_counts") and "categories" not in params
        )
        vectorizers.append(VectorizerPlan(
            feature_id=feature_id, kind=kind, category=_KIND_CATEGORY[kind],
            params=params, fit_required=fit_required,
        ))
    if not vectorizers:
        raise ConfigError("no [vectorizer:<name>] sections declared")
    known_features = {plan.feature_id for plan in vectorizers}

    feature_sets: dict[str, list[str]] = {}
    for section, pairs in doc.sections.items():
        if not section.startswith("feature_set:"):
            continue
        name = section.split(":", 1)[1]
        features = _comma_list(pairs.get("features", ""))
        if not features:
            raise ConfigError(f"[{section}] lists no features")
        for feature_id in features:
            if feature_id not in known_features:
                raise ConfigError(
                    f"[{section}] references undeclared vectorizer {feature_id!r}"
                )
        feature_sets[name] = features
    if not feature_sets:
        raise ConfigError("no [feature_set:<name>] sections declared")

    if "model" not in doc.sections:
        raise ConfigError("missing [model] section")
    fs_value = _deref(doc, doc.require("model", "feature_set"))
    fs_name = fs_value.split(":", 1)[1] if fs_value.startswith("feature_set:") else fs_value
    if fs_name not in feature_sets:
        raise ConfigError(f"[model] references undeclared feature set {fs_name!r}")
    hidden_raw = doc.get("model", "hidden", "")
    try:
        hidden = [int(v) for v in _comma_list(hidden_raw)]
    except ValueError:
        raise ConfigError(f"[model] hidden must be comma-separated integers") from None
    activation = doc.get("model", "activation", "relu")
    if activation not in ("relu", "tanh"):
        raise ConfigError(f"[model] activation must be relu or tanh, got {activation!r}")
    classes_raw = doc.get("model", "classes")
    model_plan = ModelPlan(
        feature_set_name=fs_name,
        hidden_widths=hidden,
        activation=activation,
        learning_rate=_parse_float(doc, "model", "learning_rate"),
        epochs=_parse_int(doc, "model", "epochs", minimum=1),
        patience=_parse_int(doc, "model", "patience", default=0, minimum=0),
        class_names=_comma_list(classes_raw) if classes_raw is not None else None,
    )

    batching = BatchingPlan(
        batch_size=_parse_int(doc, "batching", "batch_size", default=32, minimum=1),
        chunk_size=_parse_int(doc, "batching", "chunk_size", default=4, minimum=1),
        workers=_parse_int(doc, "batching", "workers", default=1, minimum=1),
    )

    return ResolvedPlan(
        seed=_parse_int(doc, "experiment", "seed", default=0),
        corpus_path=corpus_path,
        split_spec=split_spec,
        vectorizers=vectorizers,
        feature_sets=feature_sets,
        model=model_plan,
        batching=batching,
        store_path=doc.get("experiment", "store"),
    )
