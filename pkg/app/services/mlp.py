"""
Fully connected feedforward network approximating the feedback map
``(t_g, x) -> u``, trained by backpropagation on the mean-squared error.

Inputs and targets are standardized with training-split statistics; the loss
and the stop criterion are both measured on standardized targets, averaged
over samples and output components.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from pydantic import ValidationError

from app.exceptions import ConfigError, ContractViolationError, TrainingError
from app.models.config import TrainConfig
from app.models.mlp import Architecture, LayerFile, MlpFile, NormStatsFile
from app import storage

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class NormStats:
    input_mean: np.ndarray
    input_scale: np.ndarray
    output_mean: np.ndarray
    output_scale: np.ndarray

    @classmethod
    def identity(cls, n_in: int, n_out: int) -> "NormStats":
        return cls(np.zeros(n_in), np.ones(n_in), np.zeros(n_out), np.ones(n_out))

    @classmethod
    def fit(cls, features: np.ndarray, targets: np.ndarray) -> "NormStats":
        """Mean and standard deviation per column; constant columns get scale 1."""
        in_scale = features.std(axis=0)
        out_scale = targets.std(axis=0)
        in_scale[in_scale == 0.0] = 1.0
        out_scale[out_scale == 0.0] = 1.0
        return cls(features.mean(axis=0), in_scale, targets.mean(axis=0), out_scale)


@dataclass
class MlpModel:
    """
    Layer ``k`` maps ``sizes[k]`` to ``sizes[k+1]`` with ``W[k]`` of shape
    ``(sizes[k+1], sizes[k])``. Hidden layers use tanh, the output layer is linear.
    """

    sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    norm: NormStats
    activation: str = "tanh"

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MlpModel":
        return MlpModel(
            sizes=list(self.sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            norm=NormStats(*(a.copy() for a in (self.norm.input_mean, self.norm.input_scale,
                                                self.norm.output_mean, self.norm.output_scale))),
            activation=self.activation,
        )


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: Optional[float] = None


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)
    converged: bool = False
    mse_convention: str = "normalized"

    def __len__(self) -> int:
        return len(self.records)


def init_model(sizes: Sequence[int], seed: int = 0, norm: Optional[NormStats] = None) -> MlpModel:
    """Weights uniform in ``+-1/sqrt(fan_in)`` from a seeded generator, biases zero."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ContractViolationError(f"invalid layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes=sizes, weights=weights, biases=biases,
                    norm=norm or NormStats.identity(sizes[0], sizes[-1]))


# --- Forward and backward passes on standardized data ---

def _forward(model: MlpModel, z: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    activations = [z]
    a = z
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w.T + b
        if k < last:
            a = np.tanh(a)
        activations.append(a)
    return a, activations


def mse(model: MlpModel, z: np.ndarray, y: np.ndarray) -> float:
    """Mean-squared error on standardized inputs ``z`` and targets ``y``."""
    out, _ = _forward(model, z)
    return float(np.mean((out - y) ** 2))


def backprop(model: MlpModel, z: np.ndarray, y: np.ndarray) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Loss and its gradients with respect to every weight matrix and bias vector."""
    out, activations = _forward(model, z)
    residual = out - y
    loss = float(np.mean(residual ** 2))
    delta = 2.0 * residual / residual.size
    grads_w: List[np.ndarray] = [None] * len(model.weights)
    grads_b: List[np.ndarray] = [None] * len(model.weights)
    for k in range(len(model.weights) - 1, -1, -1):
        grads_w[k] = delta.T @ activations[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k]) * (1.0 - activations[k] ** 2)
    return loss, grads_w, grads_b


def normalize_inputs(model: MlpModel, features: np.ndarray) -> np.ndarray:
    return (features - model.norm.input_mean) / model.norm.input_scale


def normalize_targets(model: MlpModel, targets: np.ndarray) -> np.ndarray:
    return (targets - model.norm.output_mean) / model.norm.output_scale


# --- Inference ---

def infer_batch(model: MlpModel, features: np.ndarray) -> np.ndarray:
    out, _ = _forward(model, normalize_inputs(model, np.atleast_2d(features)))
    return out * model.norm.output_scale + model.norm.output_mean


def infer(model: MlpModel, t_g: float, x: np.ndarray) -> np.ndarray:
    """
    One forward pass for a single query ``(t_g, x)``.

    Raises:
        ContractViolationError: on non-finite or wrongly sized input.
    """
    z = np.concatenate([[t_g], np.atleast_1d(x)]).astype(float)
    if z.shape != (model.n_inputs,):
        raise ContractViolationError(f"model expects {model.n_inputs} inputs, got {z.shape[0]}")
    if not np.all(np.isfinite(z)):
        raise ContractViolationError(f"non-finite network input {z}")
    a = (z - model.norm.input_mean) / model.norm.input_scale
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = w @ a + b
        if k < last:
            a = np.tanh(a)
    return a * model.norm.output_scale + model.norm.output_mean


# --- Training ---

class _Adam:
    def __init__(self, params: List[np.ndarray], lr: float):
        self.lr = lr
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


def fit(features: np.ndarray, targets: np.ndarray, cfg: TrainConfig) -> Tuple[MlpModel, TrainingLog]:
    """
    Train a network on ``features -> targets``.

    Args:
        features: ``(N, 1+n)`` inputs ``[t_g, x]``.
        targets: ``(N, m)`` controls.
        cfg: architecture, optimizer and stopping rule.

    Returns:
        The trained model and its per-epoch log (empty when ``max_epochs == 0``).

    Raises:
        ContractViolationError: on empty or non-finite data.
        TrainingError: if the loss becomes non-finite.
    """
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(len(features), -1)
    if len(features) == 0:
        raise ContractViolationError("cannot train on an empty dataset")
    if not (np.all(np.isfinite(features)) and np.all(np.isfinite(targets))):
        raise ContractViolationError("training data contains non-finite values")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(features))
    n_val = int(round(cfg.validation_split * len(features)))
    if n_val >= len(features):
        n_val = 0
    val_idx, train_idx = order[:n_val], order[n_val:]

    norm = NormStats.fit(features[train_idx], targets[train_idx])
    sizes = [features.shape[1], *cfg.hidden_layers, targets.shape[1]]
    model = init_model(sizes, seed=cfg.seed, norm=norm)
    log = TrainingLog()
    if cfg.max_epochs == 0:
        return model, log

    z_all = normalize_inputs(model, features)
    y_all = normalize_targets(model, targets)
    z_train, y_train = z_all[train_idx], y_all[train_idx]
    z_val, y_val = z_all[val_idx], y_all[val_idx]
    batch = min(cfg.batch_size, len(train_idx))
    params = model.parameters()
    optimizer = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(cfg.learning_rate)

    best_val = np.inf
    since_best = 0
    warned = False
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(len(z_train))
        for start in range(0, len(perm), batch):
            idx = perm[start:start + batch]
            _, grads_w, grads_b = backprop(model, z_train[idx], y_train[idx])
            optimizer.step(params, [g for pair in zip(grads_w, grads_b) for g in pair])

        train_mse = mse(model, z_train, y_train)
        if not np.isfinite(train_mse):
            raise TrainingError("training loss is not finite", epoch)
        val_mse = mse(model, z_val, y_val) if n_val else None
        log.records.append(EpochRecord(epoch=epoch, train_mse=train_mse, val_mse=val_mse))

        if val_mse is not None:
            if val_mse < best_val:
                best_val, since_best = val_mse, 0
            else:
                since_best += 1
                if since_best >= cfg.patience and not warned:
                    logger.warning(f"Validation MSE has not improved for {cfg.patience} epochs (best {best_val:.3e})")
                    warned = True

        if epoch % cfg.log_every == 0:
            logger.info(f"Epoch {epoch}: train MSE {train_mse:.3e}" + (f", validation MSE {val_mse:.3e}" if val_mse is not None else ""))
        if train_mse < cfg.target_mse:
            log.converged = True
            logger.info(f"Reached target MSE {cfg.target_mse:g} at epoch {epoch}")
            break

    if not log.converged:
        logger.warning(f"Stopped after {cfg.max_epochs} epochs at train MSE {log.records[-1].train_mse:.3e}")
    return model, log


def train(ds, cfg: TrainConfig) -> Tuple[MlpModel, TrainingLog]:
    """Train on a dataset's ``[t_g, x] -> u`` records; costates are ignored."""
    return fit(ds.features, ds.targets, cfg)


# --- Gradient check ---

def gradient_check(model: MlpModel, features: np.ndarray, targets: np.ndarray, step: float = 1e-6,
                   floor: float = 1e-4) -> float:
    """
    Largest relative difference between backprop gradients and central
    differences of the loss over every parameter.

    The loss is evaluated on data standardized with the model's own
    statistics. Relative errors use ``max(|g_bp|, |g_fd|, floor)`` as denominator.
    """
    z = normalize_inputs(model, np.atleast_2d(np.asarray(features, dtype=float)))
    y = normalize_targets(model, np.asarray(targets, dtype=float).reshape(len(z), -1))
    trial = model.copy()
    _, grads_w, grads_b = backprop(trial, z, y)
    analytic = [g for pair in zip(grads_w, grads_b) for g in pair]

    worst = 0.0
    for param, grad in zip(trial.parameters(), analytic):
        flat = param.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            plus = mse(trial, z, y)
            flat[i] = saved - step
            minus = mse(trial, z, y)
            flat[i] = saved
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(flat_grad[i]), abs(numeric), floor)
            worst = max(worst, abs(flat_grad[i] - numeric) / denom)
    return worst


# --- Persistence ---

def model_to_dict(model: MlpModel) -> dict:
    doc = MlpFile(
        arch=Architecture(sizes=model.sizes),
        activation=model.activation,
        norm_stats=NormStatsFile(
            input_mean=model.norm.input_mean.tolist(),
            input_scale=model.norm.input_scale.tolist(),
            output_mean=model.norm.output_mean.tolist(),
            output_scale=model.norm.output_scale.tolist(),
        ),
        layers=[LayerFile(W=w.tolist(), b=b.tolist()) for w, b in zip(model.weights, model.biases)],
    )
    return doc.model_dump()


def model_from_dict(payload: dict) -> MlpModel:
    """
    Raises:
        ConfigError: if the document is not a valid model file.
    """
    try:
        doc = MlpFile.model_validate(payload)
    except ValidationError as e:
        details = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid model file: {details}") from e
    stats = doc.norm_stats
    return MlpModel(
        sizes=list(doc.arch.sizes),
        weights=[np.array(layer.W, dtype=float) for layer in doc.layers],
        biases=[np.array(layer.b, dtype=float) for layer in doc.layers],
        norm=NormStats(
            np.array(stats.input_mean), np.array(stats.input_scale),
            np.array(stats.output_mean), np.array(stats.output_scale),
        ),
        activation=doc.activation,
    )


def write_model(model: MlpModel, path: Union[str, Path]) -> Path:
    return storage.atomic_write_text(path, storage.dumps_exact(model_to_dict(model)) + "\n")


def read_model(path: Union[str, Path]) -> MlpModel:
    """
    Raises:
        ArtifactNotFoundError: if the file does not exist.
        ConfigError: if the file is not JSON or not a valid model document.
    """
    return model_from_dict(storage.read_json(path, "model"))


def write_training_log(log: TrainingLog, path: Union[str, Path]) -> Path:
    rows = [(r.epoch, r.train_mse, "" if r.val_mse is None else r.val_mse) for r in log.records]
    return storage.write_csv(path, ["epoch", "train_mse_normalized", "val_mse_normalized"], rows)
