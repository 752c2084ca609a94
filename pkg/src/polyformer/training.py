"""Synthetic regression data and the clipped one-cycle SGD loop."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from functools import singledispatch
from typing import Callable, Sequence

import numpy as np

from .baselines import MlpParams, MlpSpec, mlp_backward, mlp_predict
from .constructor import TransformerModel, make_blocks
from .network import GradientSet, backward, predict
from .polynomials import Polynomial, dim_homogeneous, evaluate

CONVERGENCE_TOL = 0.01


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: "RunHistory"):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray  # (N, d)
    noisy_labels: np.ndarray
    clean_labels: np.ndarray
    seed: int

    def __post_init__(self):
        if not (len(self.inputs) == len(self.noisy_labels) == len(self.clean_labels)):
            raise ValueError("inputs and labels must have the same length")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def noise(self) -> np.ndarray:
        return self.noisy_labels - self.clean_labels

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.noisy_labels[idx], self.clean_labels[idx], self.seed)


def generate_data(target: Polynomial, count: int, covariance_diagonal, seed: int = 0) -> Dataset:
    """x ~ N(0, diag(cov)), y = target(x) + N(0, 1)."""
    cov = np.broadcast_to(np.asarray(covariance_diagonal, dtype=float), (target.dim,))
    if not np.all(cov > 0):
        raise ValueError("covariance diagonal must be strictly positive")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((count, target.dim)) * np.sqrt(cov)
    eps = rng.standard_normal(count)
    clean = evaluate(target, X)
    return Dataset(X, clean + eps, clean, seed)


def split(ds: Dataset, train_count: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < train_count < len(ds):
        raise ValueError(f"train_count must lie in (0, {len(ds)})")
    perm = np.random.default_rng(seed).permutation(len(ds))
    return ds.subset(np.sort(perm[:train_count])), ds.subset(np.sort(perm[train_count:]))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr_init: float = 1e-4
    lr_max: float = 1e-3
    clip_norm: float = 3.0
    warmup_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_init <= self.lr_max:
            raise ValueError("need 0 < lr_init <= lr_max")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if not 0 < self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in (0, 1)")


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    """Index of the step where the schedule peaks."""
    if total_steps <= 1:
        return 0
    return max(1, int(round(warmup_fraction * (total_steps - 1))))


def one_cycle_lr(step: int, total_steps: int, lr_init: float, lr_max: float, warmup_fraction: float) -> float:
    """Linear ramp lr_init -> lr_max, then linear anneal back to lr_init at the last step."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    peak = warmup_steps(total_steps, warmup_fraction)
    if total_steps == 1:
        return lr_init
    if step <= peak:
        return lr_init + (lr_max - lr_init) * step / peak
    return lr_max - (lr_max - lr_init) * (step - peak) / (total_steps - 1 - peak)


def clip_gradients(g, clip_norm: float):
    """Rescale so the global L2 norm over every gradient entry is at most ``clip_norm``."""
    if not clip_norm > 0:
        raise ValueError("clip_norm must be positive")
    norm = g.norm()
    if norm > clip_norm:
        return g.scaled(clip_norm / norm)
    return g


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse_noisy: float
    test_mse_clean: float
    lr: float
    wall_time: float


@dataclass
class RunHistory:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def train_mse(self) -> np.ndarray:
        return np.array([r.train_mse_noisy for r in self.records])

    def test_mse(self) -> np.ndarray:
        return np.array([r.test_mse_clean for r in self.records])

    def convergence_epoch(self, tol: float = CONVERGENCE_TOL) -> int | None:
        """First epoch whose train MSE moved by less than ``tol`` from the previous epoch."""
        mse = self.train_mse()
        for i in range(1, len(mse)):
            if abs(mse[i] - mse[i - 1]) < tol:
                return self.records[i].epoch
        return None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "test_mse", "lr", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_mse_noisy), repr(r.test_mse_clean), repr(r.lr), f"{r.wall_time:.3f}"])

    @classmethod
    def from_csv(cls, path) -> "RunHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([
            EpochRecord(int(r["epoch"]), float(r["train_mse"]), float(r["test_mse"]), float(r["lr"]), float(r["seconds"]))
            for r in rows
        ])

    def summary(self) -> dict:
        last = self.records[-1] if self.records else None
        return {
            "epochs": len(self.records),
            "train_mse_noisy": last.train_mse_noisy if last else None,
            "test_mse_clean": last.test_mse_clean if last else None,
            "convergence_epoch": self.convergence_epoch(),
            "wall_time": last.wall_time if last else 0.0,
        }


@dataclass(frozen=True, eq=False)
class MlpModel:
    spec: MlpSpec
    params: MlpParams


def init_attention_model(d: int, q: int, covariance_diagonal, seed: int = 0, n: int | None = None) -> TransformerModel:
    """Trainable model: unit-sphere rows of F, zero readout and bias.

    The blocks are sized for an assumed input radius 3*sqrt(max(cov) * d).
    """
    n = dim_homogeneous(d, q) if n is None else n
    cov = np.broadcast_to(np.asarray(covariance_diagonal, dtype=float), (d,))
    bound = 3.0 * math.sqrt(float(cov.max()) * d)
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((n, d))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    return TransformerModel(F, make_blocks(n, q, bound), np.zeros((n, q)), 0.0, bound)


@singledispatch
def model_predict(model, X) -> np.ndarray:
    raise TypeError(f"unsupported model type {type(model).__name__}")


@model_predict.register
def _(model: TransformerModel, X) -> np.ndarray:
    return predict(model, X)


@model_predict.register
def _(model: MlpModel, X) -> np.ndarray:
    return mlp_predict(model.spec, model.params, X)


@singledispatch
def model_gradients(model, X, y):
    raise TypeError(f"unsupported model type {type(model).__name__}")


@model_gradients.register
def _(model: TransformerModel, X, y):
    return backward(model, X, y)


@model_gradients.register
def _(model: MlpModel, X, y):
    return mlp_backward(model.spec, model.params, X, y)


@singledispatch
def sgd_step(model, grads, lr: float):
    raise TypeError(f"unsupported model type {type(model).__name__}")


@sgd_step.register
def _(model: TransformerModel, grads: GradientSet, lr: float):
    return model.with_params(F=model.F - lr * grads.dF, beta=model.beta - lr * grads.dbeta, bias=model.bias - lr * grads.db)


@sgd_step.register
def _(model: MlpModel, grads: MlpParams, lr: float):
    params = MlpParams(
        [w - lr * g for w, g in zip(model.params.weights, grads.weights)],
        [b - lr * g for b, g in zip(model.params.biases, grads.biases)],
    )
    return MlpModel(model.spec, params)


def mse(a, b) -> float:
    diff = np.asarray(a) - np.asarray(b)
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite results trip the divergence guard
        return float(np.mean(diff * diff))


def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size)


def train(model, train_ds: Dataset, test_ds: Dataset, cfg: TrainConfig,
          callback: Callable[[EpochRecord], None] | None = None):
    """Clipped one-cycle SGD on the trainable parameters. Returns ``(model, history)``.

    Train MSE is measured on noisy labels, test MSE on clean labels, both on
    the full split after each epoch.
    """
    if cfg.batch_size > len(train_ds):
        raise ValueError("batch_size exceeds training set size")
    rng = np.random.default_rng(cfg.seed)
    per_epoch = steps_per_epoch(len(train_ds), cfg.batch_size)
    total = cfg.epochs * per_epoch
    history = RunHistory()
    step = 0
    start = time.perf_counter()
    X, y = train_ds.inputs, train_ds.noisy_labels
    lr = cfg.lr_init
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_ds))
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            grads, _ = model_gradients(model, X[idx], y[idx])
            grads = clip_gradients(grads, cfg.clip_norm)
            lr = one_cycle_lr(step, total, cfg.lr_init, cfg.lr_max, cfg.warmup_fraction)
            model = sgd_step(model, grads, lr)
            step += 1
        rec = EpochRecord(
            epoch,
            mse(model_predict(model, X), y),
            mse(model_predict(model, test_ds.inputs), test_ds.clean_labels),
            lr,
            time.perf_counter() - start,
        )
        if not (math.isfinite(rec.train_mse_noisy) and math.isfinite(rec.test_mse_clean)):
            raise TrainingDiverged(f"non-finite MSE at epoch {epoch}: train={rec.train_mse_noisy}, test={rec.test_mse_clean}", history)
        history.records.append(rec)
        if callback is not None:
            callback(rec)
    return model, history


def history_rows(history: RunHistory) -> list[dict]:
    return [asdict(r) for r in history.records]
