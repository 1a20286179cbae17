"""Feed-forward text classifier with manual gradients and bit-exact training.

Architecture: token-level features (embeddings plus per-token categoricals)
are concatenated per token, masked-mean-pooled over real tokens, joined with
document-level feature vectors, and passed through a small MLP.  All math
runs through the sequential-accumulation kernels in :mod:`repronlp.detmath`,
so a training run is a pure function of (seed, store, config).

Training state (weights, best-validation weights, epoch, RNG snapshots,
history) round-trips through checkpoints byte-exactly, which is what makes
"train n+m" and "train n, save, load, train m" indistinguishable.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .batchstore import Batch, BatchManifest, StoreError, TensorCache, decode
from .detmath import matmul, seq_sum
from .rng import RngSnapshot, RngStream, restore
from . import tensorfile

ACTIVATIONS = ("relu", "tanh")

CHECKPOINT_MAGIC = b"ZCKP"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    """Raised for invalid configs, shape mismatches, and checkpoint problems."""


@dataclass
class ModelConfig:
    feature_set: list[str]
    hidden_widths: list[int]
    activation: str
    learning_rate: float
    epochs: int
    early_stop_patience: int
    seed: int
    class_names: list[str]

    def validate(self) -> None:
        if not self.feature_set:
            raise ModelError("feature_set must not be empty")
        if len(self.class_names) < 2:
            raise ModelError("need at least two class names")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")
        if self.epochs < 1:
            raise ModelError("epochs must be at least 1")
        if self.early_stop_patience < 0:
            raise ModelError("early_stop_patience must be non-negative")
        if any(w < 1 for w in self.hidden_widths):
            raise ModelError("hidden widths must be positive")

    def to_json_dict(self) -> dict:
        return {
            "feature_set": self.feature_set,
            "hidden_widths": self.hidden_widths,
            "activation": self.activation,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "early_stop_patience": self.early_stop_patience,
            "seed": self.seed,
            "class_names": self.class_names,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ModelConfig":
        return cls(
            feature_set=list(obj["feature_set"]),
            hidden_widths=list(obj["hidden_widths"]),
            activation=obj["activation"],
            learning_rate=float(obj["learning_rate"]),
            epochs=int(obj["epochs"]),
            early_stop_patience=int(obj["early_stop_patience"]),
            seed=int(obj["seed"]),
            class_names=list(obj["class_names"]),
        )


@dataclass
class TrainEvent:
    epoch: int
    train_loss: float
    validation_loss: float
    validation_accuracy: float
    wall_ms: int
    action: str = "none"  # none | early_stopped | epoch_reset

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "validation_loss": self.validation_loss,
            "validation_accuracy": self.validation_accuracy,
            "wall_ms": self.wall_ms,
            "action": self.action,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TrainEvent":
        return cls(
            epoch=int(obj["epoch"]),
            train_loss=float(obj["train_loss"]),
            validation_loss=float(obj["validation_loss"]),
            validation_accuracy=float(obj["validation_accuracy"]),
            wall_ms=int(obj["wall_ms"]),
            action=obj["action"],
        )

    def metrics_equal(self, other: "TrainEvent") -> bool:
        """Equality of the deterministic fields (wall time and action excluded)."""
        return (self.epoch == other.epoch
                and self.train_loss == other.train_loss
                and self.validation_loss == other.validation_loss
                and self.validation_accuracy == other.validation_accuracy)


@dataclass
class Layer:
    weights: np.ndarray  # [fan_in, fan_out]
    bias: np.ndarray  # [fan_out]


@dataclass
class Model:
    config: ModelConfig
    token_features: list[tuple[str, int]]  # embedding blocks first, then token blocks
    doc_features: list[tuple[str, int]]
    layers: list[Layer]

    @property
    def input_dim(self) -> int:
        return (sum(w for _, w in self.token_features)
                + sum(w for _, w in self.doc_features))

    def layer_dims(self) -> list[tuple[int, int]]:
        return [(layer.weights.shape[0], layer.weights.shape[1]) for layer in self.layers]

    def copy_weights(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(layer.weights.copy(), layer.bias.copy()) for layer in self.layers]

    def set_weights(self, weights: list[tuple[np.ndarray, np.ndarray]]) -> None:
        self.layers = [Layer(w.copy(), b.copy()) for w, b in weights]

    def weight_bytes(self) -> bytes:
        return b"".join(layer.weights.tobytes() + layer.bias.tobytes()
                        for layer in self.layers)


def _feature_width(entry) -> int:
    if entry.category in ("token", "embedding"):
        width = entry.shape[-1]
    elif entry.category == "document":
        width = entry.shape[0] if entry.shape else -1
    else:
        raise ModelError(
            f"feature {entry.feature_id!r} has category {entry.category!r}, "
            "which cannot feed the classifier"
        )
    if width < 0:
        raise ModelError(f"feature {entry.feature_id!r} has unresolved variable width")
    return width


def compute_input_dim(manifest: BatchManifest, feature_set: list[str]) -> int:
    """Token and embedding features add their per-token widths (they are
    mean-pooled); document features add their vector widths (join layer)."""
    if not feature_set:
        raise ModelError("feature_set must not be empty")
    total = 0
    for feature_id in feature_set:
        try:
            entry = manifest.feature(feature_id)
        except StoreError as exc:
            raise ModelError(str(exc)) from None
        total += _feature_width(entry)
    return total


def build(config: ModelConfig, manifest: BatchManifest, stream: RngStream) -> Model:
    """Initialize the MLP; weights ~ uniform(-a, a) with a = sqrt(6/(fan_in+fan_out)).

    Weights are drawn row-major from per-layer child streams split from
    ``stream``, so initialization is a pure function of the seed.
    """
    config.validate()
    if manifest.class_names and config.class_names != manifest.class_names:
        raise ModelError(
            f"config class_names {config.class_names} do not match "
            f"store classes {manifest.class_names}"
        )
    embedding_blocks: list[tuple[str, int]] = []
    token_blocks: list[tuple[str, int]] = []
    doc_blocks: list[tuple[str, int]] = []
    for feature_id in config.feature_set:
        try:
            entry = manifest.feature(feature_id)
        except StoreError as exc:
            raise ModelError(str(exc)) from None
        width = _feature_width(entry)
        if entry.category == "embedding":
            embedding_blocks.append((feature_id, width))
        elif entry.category == "token":
            token_blocks.append((feature_id, width))
        else:
            doc_blocks.append((feature_id, width))
    token_features = embedding_blocks + token_blocks
    doc_features = doc_blocks

    dims = ([sum(w for _, w in token_features) + sum(w for _, w in doc_features)]
            + list(config.hidden_widths) + [len(config.class_names)])
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        child = stream.split(f"layer/{i}")
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        draws = np.asarray(
            [child.next_f64_unit() for _ in range(fan_in * fan_out)], dtype=np.float64
        )
        weights = ((draws * 2.0 - 1.0) * bound).astype(np.float32).reshape(fan_in, fan_out)
        layers.append(Layer(weights=weights, bias=np.zeros(fan_out, dtype=np.float32)))
    return Model(config=config, token_features=token_features,
                 doc_features=doc_features, layers=layers)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, z.dtype.type(0))
    return np.tanh(z)


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    t = np.tanh(z)
    return z.dtype.type(1) - t * t


def _assemble_input(model: Model, batch: Batch) -> np.ndarray:
    """Per-token concat, masked mean-pool, then join with document features."""
    parts = []
    if model.token_features:
        blocks = []
        for feature_id, width in model.token_features:
            tensor = batch.tensors.get(feature_id)
            if tensor is None:
                raise ModelError(f"batch is missing feature {feature_id!r}")
            if tensor.ndim != 3 or tensor.shape[-1] != width:
                raise ModelError(
                    f"feature {feature_id!r} has shape {tensor.shape}, "
                    f"expected [B, T, {width}]"
                )
            blocks.append(tensor)
        stacked = np.concatenate(blocks, axis=2) if len(blocks) > 1 else blocks[0]
        mask = batch.mask.astype(stacked.dtype, copy=False)
        counts = seq_sum(mask, axis=1)  # [B]
        summed = seq_sum(stacked * mask[:, :, None], axis=1)  # [B, W]
        denom = np.where(counts > 0, counts, stacked.dtype.type(1))
        pooled = summed / denom[:, None]
        # zero-token documents pool to the zero vector
        pooled = np.where(counts[:, None] > 0, pooled, stacked.dtype.type(0))
        parts.append(pooled)
    for feature_id, width in model.doc_features:
        tensor = batch.tensors.get(feature_id)
        if tensor is None:
            raise ModelError(f"batch is missing feature {feature_id!r}")
        if tensor.ndim != 2 or tensor.shape[-1] != width:
            raise ModelError(
                f"feature {feature_id!r} has shape {tensor.shape}, expected [B, {width}]"
            )
        parts.append(tensor)
    return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]


def _forward_layers(model: Model, joined: np.ndarray):
    """Returns (logits, per-layer inputs, per-layer pre-activations)."""
    inputs = [joined]
    pres = []
    h = joined
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z = matmul(h, layer.weights.astype(h.dtype, copy=False)) + layer.bias.astype(h.dtype, copy=False)
        pres.append(z)
        h = _activate(z, model.config.activation) if i < last else z
        inputs.append(h)
    return h, inputs, pres


def forward(model: Model, batch: Batch) -> np.ndarray:
    """Logits [B, K]; no softmax applied."""
    logits, _, _ = _forward_layers(model, _assemble_input(model, batch))
    return logits


def _cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy; returns (loss, dLoss/dlogits)."""
    b, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= k:
        raise ModelError(
            f"label out of range: batch has labels up to {int(labels.max())} "
            f"for {k} classes"
        )
    dtype = logits.dtype
    m = np.max(logits, axis=1, keepdims=True)
    z = logits - m
    e = np.exp(z)
    s = seq_sum(e, axis=1)[:, None]
    log_probs = z - np.log(s)
    picked = log_probs[np.arange(b), labels]
    loss = float(seq_sum(-picked, axis=0) / dtype.type(b))
    dlogits = e / s
    dlogits[np.arange(b), labels] -= dtype.type(1)
    dlogits = dlogits / dtype.type(b)
    return loss, dlogits


def loss_and_grads(model: Model, batch: Batch):
    """Mean cross-entropy and manual backprop gradients, one pair per layer."""
    joined = _assemble_input(model, batch)
    logits, inputs, pres = _forward_layers(model, joined)
    loss, delta = _cross_entropy(logits, batch.labels)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)  # type: ignore
    for i in reversed(range(len(model.layers))):
        a_prev = inputs[i]
        grads[i] = (matmul(a_prev.T, delta), seq_sum(delta, axis=0))
        if i > 0:
            upstream = matmul(delta, model.layers[i].weights.T.astype(delta.dtype, copy=False))
            delta = upstream * _activate_grad(pres[i - 1], model.config.activation)
    return loss, grads


def sgd_step(model: Model, grads, learning_rate: float) -> None:
    for layer, (g_w, g_b) in zip(model.layers, grads):
        layer.weights -= learning_rate * g_w
        layer.bias -= learning_rate * g_b


@dataclass
class EvalMetrics:
    accuracy: float
    macro_f1: float
    loss: float


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int):
    """Accuracy and macro-F1; classes with no support contribute F1 = 0."""
    correct = int((y_true == y_pred).sum())
    f1s = []
    for c in range(n_classes):
        tp = int(((y_pred == c) & (y_true == c)).sum())
        fp = int(((y_pred == c) & (y_true != c)).sum())
        fn = int(((y_pred != c) & (y_true == c)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return correct / len(y_true), sum(f1s) / n_classes


def evaluate(model: Model, store_path, split: str,
             cache: TensorCache | None = None) -> EvalMetrics:
    total_loss = 0.0
    n_docs = 0
    trues: list[np.ndarray] = []
    preds: list[np.ndarray] = []
    for batch in decode(store_path, split, model.config.feature_set, cache=cache):
        logits = forward(model, batch)
        loss, _ = _cross_entropy(logits, batch.labels)
        total_loss += loss * len(batch)
        n_docs += len(batch)
        trues.append(batch.labels)
        preds.append(np.argmax(logits, axis=1))
    if n_docs == 0:
        raise ModelError(f"split {split!r} has no documents to evaluate")
    y_true = np.concatenate(trues)
    y_pred = np.concatenate(preds)
    accuracy, macro_f1 = classification_metrics(y_true, y_pred, len(model.config.class_names))
    return EvalMetrics(accuracy=accuracy, macro_f1=macro_f1, loss=total_loss / n_docs)


# --- training loop ----------------------------------------------------------


@dataclass
class TrainerState:
    """Everything needed to continue a run exactly where it stopped."""

    model: Model
    epoch: int  # completed epochs
    history: list[TrainEvent]
    rng: dict[str, RngSnapshot]
    best_weights: list[tuple[np.ndarray, np.ndarray]]
    best_val_loss: float
    best_epoch: int

    @classmethod
    def fresh(cls, model: Model, root_stream: RngStream) -> "TrainerState":
        return cls(
            model=model,
            epoch=0,
            history=[],
            rng={"trainer": root_stream.split("trainer").snapshot()},
            best_weights=model.copy_weights(),
            best_val_loss=math.inf,
            best_epoch=0,
        )

    def best_model(self) -> Model:
        best = Model(config=self.model.config,
                     token_features=list(self.model.token_features),
                     doc_features=list(self.model.doc_features),
                     layers=[])
        best.set_weights(self.best_weights)
        return best


@dataclass
class TrainResult:
    model: Model  # best-validation weights
    history: list[TrainEvent]
    state: TrainerState


def _debug_batch_line(batch: Batch, feature_set: list[str]) -> str:
    shapes = " ".join(
        f"{fid}{list(batch.tensors[fid].shape)}" for fid in feature_set
    )
    return (f"batch {batch.split}/{batch.batch_id} docs={len(batch)}: {shapes} "
            f"labels{list(batch.labels.shape)} mask{list(batch.mask.shape)}")


def train(
    state: TrainerState,
    store_path,
    *,
    control=None,
    sink=None,
    cache: TensorCache | None = None,
    config_fingerprint: str | None = None,
    manifest: BatchManifest | None = None,
    epochs: int | None = None,
    record_wall: bool = True,
    debug_sink=None,
) -> TrainResult:
    """Run SGD epochs until the target count, early stop, or interactive stop.

    Batches arrive in manifest order every epoch (order is the contract; no
    reshuffling).  The control channel is polled once per epoch boundary:
    ``early_stop`` finishes after the current epoch, ``reset_epoch`` restores
    the weights and RNG snapshots taken at the start of the current epoch and
    reruns it.  Automatic early stop fires when validation loss has not
    improved for ``early_stop_patience`` consecutive epochs (0 disables).
    """
    model = state.model
    config = model.config
    if manifest is not None and config_fingerprint is not None:
        if manifest.config_fingerprint != config_fingerprint:
            raise ModelError(
                "store was encoded from a different configuration "
                f"({manifest.config_fingerprint[:12]}... vs {config_fingerprint[:12]}...)"
            )
    target_epochs = config.epochs if epochs is None else epochs
    streams = {name: restore(snap) for name, snap in state.rng.items()}

    first_epoch = state.epoch + 1
    epoch = first_epoch
    while epoch <= target_epochs:
        epoch_start_weights = model.copy_weights()
        epoch_start_rng = {name: s.snapshot() for name, s in streams.items()}
        started = time.monotonic()

        total_loss = 0.0
        total_docs = 0
        for batch in decode(store_path, "train", config.feature_set, cache=cache):
            if debug_sink is not None and epoch == first_epoch:
                debug_sink(_debug_batch_line(batch, config.feature_set))
            loss, grads = loss_and_grads(model, batch)
            sgd_step(model, grads, config.learning_rate)
            total_loss += loss * len(batch)
            total_docs += len(batch)
        if total_docs == 0:
            raise ModelError("train split has no documents")
        val = evaluate(model, store_path, "validation", cache=cache)
        wall_ms = int((time.monotonic() - started) * 1000) if record_wall else 0

        command = control.take() if control is not None else None
        improved = val.loss < state.best_val_loss
        if command == "reset_epoch":
            action = "epoch_reset"
        elif command == "early_stop":
            action = "early_stopped"
        elif (config.early_stop_patience > 0 and not improved
              and epoch - state.best_epoch >= config.early_stop_patience):
            action = "early_stopped"
        else:
            action = "none"

        event = TrainEvent(
            epoch=epoch,
            train_loss=total_loss / total_docs,
            validation_loss=val.loss,
            validation_accuracy=val.accuracy,
            wall_ms=wall_ms,
            action=action,
        )
        state.history.append(event)
        if sink is not None:
            sink(event)

        if action == "epoch_reset":
            # replay: discard this attempt entirely and rerun the same epoch
            model.set_weights(epoch_start_weights)
            streams = {name: restore(snap) for name, snap in epoch_start_rng.items()}
            continue

        if improved:
            state.best_weights = model.copy_weights()
            state.best_val_loss = val.loss
            state.best_epoch = epoch
        state.epoch = epoch
        state.rng = {name: s.snapshot() for name, s in streams.items()}
        if action == "early_stopped":
            break
        epoch += 1

    return TrainResult(model=state.best_model(), history=list(state.history), state=state)


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(state: TrainerState, path, *, config_fingerprint: str = "",
                    manifest_digest: str = "") -> None:
    """JSON header plus weight tensors (current, then best) in .tns format."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "epoch": state.epoch,
        "config_fingerprint": config_fingerprint,
        "manifest_digest": manifest_digest,
        "config": state.model.config.to_json_dict(),
        "token_features": [list(f) for f in state.model.token_features],
        "doc_features": [list(f) for f in state.model.doc_features],
        "layer_count": len(state.model.layers),
        "history": [e.to_json_dict() for e in state.history],
        "rng": {name: snap.to_json_dict() for name, snap in state.rng.items()},
        "best": {"val_loss": state.best_val_loss, "epoch": state.best_epoch},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blobs = []
    for weights, bias in [(l.weights, l.bias) for l in state.model.layers] + \
                         [(w, b) for w, b in state.best_weights]:
        blobs.append(tensorfile.tensor_to_bytes(weights))
        blobs.append(tensorfile.tensor_to_bytes(bias))
    payload = (CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
               + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(blobs))
    Path(path).write_bytes(payload)


def load_checkpoint(path, *, expected_config_fingerprint: str | None = None,
                    expected_manifest_digest: str | None = None,
                    expected_feature_set: list[str] | None = None,
                    override: bool = False) -> TrainerState:
    """Rebuild a :class:`TrainerState`; refuses fingerprint drift unless overridden."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelError(f"{path}: corrupt checkpoint header: {exc}") from None

    if not override:
        saved_fp = header.get("config_fingerprint", "")
        if expected_config_fingerprint is not None and saved_fp != expected_config_fingerprint:
            raise ModelError(
                "checkpoint config fingerprint "
                f"{saved_fp[:12]}... does not match live config "
                f"{expected_config_fingerprint[:12]}... (pass the override flag to force)"
            )
        saved_md = header.get("manifest_digest", "")
        if expected_manifest_digest is not None and saved_md != expected_manifest_digest:
            raise ModelError(
                "checkpoint was trained against a different store "
                f"({saved_md[:12]}... vs {expected_manifest_digest[:12]}...)"
            )
    config = ModelConfig.from_json_dict(header["config"])
    if expected_feature_set is not None and config.feature_set != list(expected_feature_set) \
            and not override:
        raise ModelError(
            f"checkpoint was trained with feature set {config.feature_set}, "
            f"not {list(expected_feature_set)}"
        )

    offset = 16 + header_len
    tensors = []
    try:
        for _ in range(header["layer_count"] * 4):
            arr, offset = tensorfile.tensor_from_bytes(data, offset)
            tensors.append(arr.copy())
    except tensorfile.TensorFormatError as exc:
        raise ModelError(f"{path}: corrupt checkpoint tensors: {exc}") from None

    n = header["layer_count"]
    current = [(tensors[2 * i], tensors[2 * i + 1]) for i in range(n)]
    best = [(tensors[2 * n + 2 * i], tensors[2 * n + 2 * i + 1]) for i in range(n)]
    model = Model(
        config=config,
        token_features=[(f[0], int(f[1])) for f in header["token_features"]],
        doc_features=[(f[0], int(f[1])) for f in header["doc_features"]],
        layers=[],
    )
    model.set_weights(current)
    return TrainerState(
        model=model,
        epoch=int(header["epoch"]),
        history=[TrainEvent.from_json_dict(e) for e in header["history"]],
        rng={name: RngSnapshot.from_json_dict(snap)
             for name, snap in header["rng"].items()},
        best_weights=[(w.copy(), b.copy()) for w, b in best],
        best_val_loss=float(header["best"]["val_loss"]),
        best_epoch=int(header["best"]["epoch"]),
    )


# --- layer dimension calculators ------------------------------------------------


def conv1d_out_len(in_len: int, kernel: int, stride: int = 1, padding: int = 0,
                   dilation: int = 1) -> int:
    """Output length of a 1-D convolution; errors when no window fits."""
    if in_len < 1 or kernel < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise ModelError(
            "conv1d_out_len requires positive in_len/kernel/stride/dilation "
            "and non-negative padding"
        )
    out = (in_len + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1
    if out < 1:
        raise ModelError(
            f"conv window (k={kernel}, s={stride}, p={padding}, d={dilation}) "
            f"does not fit input of length {in_len}"
        )
    return out


def pool_out_len(in_len: int, window: int, stride: int) -> int:
    """Output length of a 1-D pooling layer (no padding, no dilation)."""
    return conv1d_out_len(in_len, window, stride, padding=0, dilation=1)
