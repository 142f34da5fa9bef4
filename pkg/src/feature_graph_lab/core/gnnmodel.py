"""Feature-graph GNN: per-node embeddings, attention message passing, mean pooling, linear head.

Every row of a batch is one graph over the same topology: node i carries the
scalar feature x_i concatenated with its learnable embedding. Each layer
computes, for node i,

    z_i = W_root h_i + sum_{j in N(i)} alpha_ij W_val h_j
    alpha_ij = softmax_j((W_qry h_i) . (W_key h_j) / sqrt(hidden))

followed by ReLU(BatchNorm(z)). The readout averages node states and applies
a linear head.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DatasetError, LabValidationError, NonFiniteError, ShapeError, TrainingDivergedError
from ..models import FeatureGraph, GnnConfig
from .diffkit import AdamState, BatchNormState, ReduceOnPlateau, Tape, Tensor, adam_step, zero_grad
from .synth import SyntheticDataset

logger = logging.getLogger(__name__)

EVAL_CHUNK = 4096
CHECKPOINT_WEIGHTS = "weights.npz"
CHECKPOINT_MANIFEST = "manifest.json"


@dataclass
class AttentionLayer:
    """Query/key/value/root projections with biases, plus batch-norm state."""

    w_query: Tensor
    b_query: Tensor
    w_key: Tensor
    b_key: Tensor
    w_value: Tensor
    b_value: Tensor
    w_root: Tensor
    b_root: Tensor
    norm: BatchNormState

    def named_parameters(self) -> dict[str, Tensor]:
        return {
            "w_query": self.w_query,
            "b_query": self.b_query,
            "w_key": self.w_key,
            "b_key": self.b_key,
            "w_value": self.w_value,
            "b_value": self.b_value,
            "w_root": self.w_root,
            "b_root": self.b_root,
            "bn_gamma": self.norm.gamma,
            "bn_beta": self.norm.beta,
        }


@dataclass
class GnnModel:
    config: GnnConfig
    num_features: int
    embedding: Tensor
    layers: list[AttentionLayer]
    head_w: Tensor
    head_b: Tensor

    @property
    def hidden(self) -> int:
        return self.config.hidden

    def named_parameters(self) -> dict[str, Tensor]:
        named = {"embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            named.update({f"layer{i}.{k}": v for k, v in layer.named_parameters().items()})
        named["head_w"] = self.head_w
        named["head_b"] = self.head_b
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    lr: float


@dataclass
class TrainedModel:
    """A trained model with its history and test metrics."""

    model: GnnModel
    history: list[EpochStats] = field(default_factory=list)
    test_mae: float = math.nan
    test_mse: float = math.nan
    stopped_early: bool = False
    wall_time: float = 0.0

    @property
    def epochs_run(self) -> int:
        return self.history[-1].epoch if self.history else 0

    @property
    def final_train_loss(self) -> float:
        return self.history[-1].train_loss

    @property
    def final_lr(self) -> float:
        return self.history[-1].lr


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...], name: str) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def init_model(config: GnnConfig, num_features: int, rng: np.random.Generator | None = None) -> GnnModel:
    """Initialize parameters: embedding N(0, std^2), projections uniform in +-1/sqrt(fan_in)."""
    if num_features < 1:
        raise LabValidationError("A model needs at least one feature node")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    hidden = config.hidden
    embedding = Tensor(
        rng.normal(0.0, config.embedding_init_std, size=(num_features, config.embedding_dim)),
        requires_grad=True,
        name="embedding",
    )

    layers = []
    width = 1 + config.embedding_dim
    for i in range(config.num_layers):
        projections = {}
        for role in ("query", "key", "value", "root"):
            projections[f"w_{role}"] = _uniform(rng, width, (width, hidden), f"layer{i}.w_{role}")
            projections[f"b_{role}"] = _uniform(rng, width, (hidden,), f"layer{i}.b_{role}")
        norm = BatchNormState.create(hidden, momentum=config.bn_momentum, eps=config.bn_eps, name=f"layer{i}.bn")
        layers.append(AttentionLayer(norm=norm, **projections))
        width = hidden

    return GnnModel(
        config=config,
        num_features=num_features,
        embedding=embedding,
        layers=layers,
        head_w=_uniform(rng, hidden, (hidden, 1), "head_w"),
        head_b=_uniform(rng, hidden, (1,), "head_b"),
    )


def parameter_count(config: GnnConfig, num_features: int) -> int:
    """Number of scalar parameters of a model built from ``config`` on ``num_features`` nodes."""
    hidden = config.hidden
    total = num_features * config.embedding_dim
    width = 1 + config.embedding_dim
    for _ in range(config.num_layers):
        total += 4 * (width * hidden + hidden) + 2 * hidden
        width = hidden
    return total + hidden + 1


def matched_hidden_dim(num_layers: int, target: int, num_features: int, embedding_dim: int = 16) -> int:
    """Smallest hidden width whose parameter count reaches ``target``."""
    hidden = 1
    while True:
        config = GnnConfig(num_layers=num_layers, embedding_dim=embedding_dim, hidden_dim=hidden)
        if parameter_count(config, num_features) >= target:
            return hidden
        hidden += 1


def message_arcs(graph: FeatureGraph) -> tuple[np.ndarray, np.ndarray]:
    """Source and destination of every arc, both directions per edge, sorted by destination."""
    # (dst, src) pairs
    arcs = sorted([(j, i) for i, j in graph.edges] + [(i, j) for i, j in graph.edges])
    if not arcs:
        empty = np.zeros(0, dtype=np.intp)
        return empty, empty
    dst, src = (np.asarray(a, dtype=np.intp) for a in zip(*arcs))
    return src, dst


def _linear(tape: Tape, h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return tape.add(tape.matmul(h, w), b)


def forward(
    model: GnnModel,
    graph: FeatureGraph,
    batch: np.ndarray,
    tape: Tape | None = None,
    training: bool = False,
) -> Tensor:
    """
    Predict one target per row.

    Args:
        model: Model whose node count matches the graph.
        graph: Feature graph shared by every row of the batch.
        batch: rows x d feature matrix.
        tape: Tape to record on; a fresh one is used when omitted.
        training: Use batch statistics in batch norm (and update running stats).

    Returns:
        Tensor of shape (rows, 1).
    """
    batch = np.asarray(batch, dtype=np.float64)
    d = model.num_features
    if graph.num_features != d:
        raise ShapeError(f"Graph has {graph.num_features} nodes, model has {d}")
    if batch.ndim != 2 or batch.shape[1] != d:
        raise ShapeError(f"Batch of shape {batch.shape} does not have {d} feature columns")
    if batch.shape[0] == 0:
        raise ShapeError("Batch is empty")

    tape = tape if tape is not None else Tape()
    rows = batch.shape[0]
    src, dst = message_arcs(graph)
    scale = 1.0 / math.sqrt(model.hidden)

    x = Tensor(batch[..., None])
    emb = tape.broadcast_to(model.embedding, (rows, d, model.config.embedding_dim))
    h = tape.concat([x, emb], axis=-1)

    for layer in model.layers:
        z = _linear(tape, h, layer.w_root, layer.b_root)
        if src.size:
            q = _linear(tape, h, layer.w_query, layer.b_query)
            k = _linear(tape, h, layer.w_key, layer.b_key)
            v = _linear(tape, h, layer.w_value, layer.b_value)
            q_dst = tape.gather(q, dst, axis=1)
            k_src = tape.gather(k, src, axis=1)
            scores = tape.scale(tape.sum(tape.mul(q_dst, k_src), axis=-1), scale)
            alpha = tape.segment_softmax(scores, dst, d)
            messages = tape.mul(tape.reshape(alpha, (rows, src.size, 1)), tape.gather(v, src, axis=1))
            z = tape.add(z, tape.segment_sum(messages, dst, d))
        h = tape.relu(tape.batch_norm(z, layer.norm, training))

    pooled = tape.mean(h, axis=1)
    return _linear(tape, pooled, model.head_w, model.head_b)


def predict(model: GnnModel, graph: FeatureGraph, features: np.ndarray, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Eval-mode predictions, computed in fixed-size chunks."""
    features = np.asarray(features, dtype=np.float64)
    outputs = [
        forward(model, graph, features[start : start + chunk]).value[:, 0]
        for start in range(0, features.shape[0], chunk)
    ]
    return np.concatenate(outputs) if outputs else np.zeros(0)


def evaluate(
    trained: TrainedModel | GnnModel,
    graph: FeatureGraph,
    features: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, float]:
    """
    Mean absolute and mean squared error on the given rows.

    Raises:
        DatasetError: no rows.
    """
    model = trained.model if isinstance(trained, TrainedModel) else trained
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        raise DatasetError("Cannot evaluate on zero rows")
    errors = predict(model, graph, features) - targets
    return float(np.mean(np.abs(errors))), float(np.mean(errors**2))


def _batches(rng: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    # array_split keeps every minibatch within one row of the others
    return np.array_split(rng.permutation(n), max(1, math.ceil(n / batch_size)))


def train(graph: FeatureGraph, dataset: SyntheticDataset, config: GnnConfig) -> TrainedModel:
    """
    Minimize train-split MSE with Adam and a plateau schedule, then score the test split.

    Deterministic given ``config.seed``. Stops early after ``config.patience``
    epochs without a train-loss improvement.

    Raises:
        TrainingDivergedError: the loss or an activation became non-finite.
    """
    if graph.num_features != dataset.d:
        raise ShapeError(f"Graph has {graph.num_features} nodes, dataset has {dataset.d} features")
    if dataset.train_n < 2:
        raise DatasetError("Training needs at least 2 train rows")

    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    model = init_model(config, dataset.d, rng)
    params = model.parameters()
    adam = AdamState.for_params(params, lr=config.lr)
    schedule = ReduceOnPlateau(
        factor=config.plateau_factor,
        patience=config.plateau_patience,
        threshold=config.plateau_threshold,
        min_lr=config.min_lr,
    )
    features, targets = dataset.train_features, dataset.train_targets

    try:
        _, initial_mse = evaluate(model, graph, features, targets)
    except NonFiniteError as e:
        raise TrainingDivergedError(0, f"Non-finite activation at initialization: {e}") from e
    history = [EpochStats(epoch=0, train_loss=initial_mse, lr=adam.lr)]
    logger.info(
        f"Training L={config.num_layers} h={config.hidden} seed={config.seed} "
        f"on {graph.num_edges} edges, {dataset.train_n} rows"
    )

    best = math.inf
    stale = 0
    stopped_early = False
    for epoch in range(1, config.max_epochs + 1):
        total = 0.0
        for idx in _batches(rng, dataset.train_n, config.batch_size):
            tape = Tape()
            zero_grad(params)
            try:
                prediction = forward(model, graph, features[idx], tape, training=True)
                loss = tape.mse(prediction, Tensor(targets[idx, None]))
            except NonFiniteError as e:
                raise TrainingDivergedError(epoch, f"Training diverged at epoch {epoch}: {e}") from e
            tape.backward(loss)
            adam_step(params, [p.grad for p in params], adam)
            total += loss.item() * idx.size

        epoch_loss = total / dataset.train_n
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        schedule.step(epoch_loss, adam)
        history.append(EpochStats(epoch=epoch, train_loss=epoch_loss, lr=adam.lr))
        logger.debug(f"Epoch {epoch}: loss={epoch_loss:.6f} lr={adam.lr:.3g}")

        if epoch_loss < best - config.plateau_threshold:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                stopped_early = True
                logger.info(f"Early stop at epoch {epoch} (best loss {best:.6f})")
                break

    trained = TrainedModel(model=model, history=history, stopped_early=stopped_early)
    trained.test_mae, trained.test_mse = evaluate(model, graph, dataset.test_features, dataset.test_targets)
    trained.wall_time = time.perf_counter() - started
    logger.info(f"Finished after {trained.epochs_run} epochs: test MAE {trained.test_mae:.4f}")
    return trained


def save_checkpoint(model: GnnModel, directory: Path) -> tuple[Path, Path]:
    """Write ``weights.npz`` (named tensors plus batch-norm running stats) and ``manifest.json``."""
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {name: t.value for name, t in model.named_parameters().items()}
    for i, layer in enumerate(model.layers):
        arrays[f"layer{i}.bn_running_mean"] = layer.norm.running_mean
        arrays[f"layer{i}.bn_running_var"] = layer.norm.running_var

    weights_path = directory / CHECKPOINT_WEIGHTS
    manifest_path = directory / CHECKPOINT_MANIFEST
    np.savez(weights_path, **arrays)
    manifest = {
        "config": model.config.model_dump(mode="json"),
        "num_features": model.num_features,
        "seed": model.config.seed,
        "shapes": {name: list(value.shape) for name, value in arrays.items()},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return weights_path, manifest_path


def load_checkpoint(directory: Path) -> GnnModel:
    manifest_path = directory / CHECKPOINT_MANIFEST
    weights_path = directory / CHECKPOINT_WEIGHTS
    if not manifest_path.exists() or not weights_path.exists():
        raise LabValidationError(f"Checkpoint not found in {directory}")

    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    model = init_model(GnnConfig(**manifest["config"]), int(manifest["num_features"]))
    with np.load(weights_path) as weights:
        for name, tensor in model.named_parameters().items():
            if weights[name].shape != tensor.shape:
                raise ShapeError(f"Checkpoint tensor {name} has shape {weights[name].shape}, expected {tensor.shape}")
            tensor.value = np.array(weights[name], dtype=np.float64)
        for i, layer in enumerate(model.layers):
            layer.norm.running_mean = np.array(weights[f"layer{i}.bn_running_mean"])
            layer.norm.running_var = np.array(weights[f"layer{i}.bn_running_var"])
    return model
