"""Fully-connected ReLU baselines (shallow-wide and deep-narrow)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

_WIDTH = {"f1": [2, 10, 1], "f2": [10, 4368, 1]}
_DEPTH = {"f1": [2, 4, 4, 4, 1], "f2": [10] + [120] * 6 + [1]}


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or widths[-1] != 1 or min(widths) < 1:
            raise ValueError(f"invalid layer widths {widths}")
        object.__setattr__(self, "widths", widths)

    @property
    def d(self) -> int:
        return self.widths[0]

    @property
    def hidden_layers(self) -> int:
        return len(self.widths) - 2


def _target_key(target) -> str:
    key = str(target).rstrip("*").lower()
    if key not in _WIDTH:
        raise ValueError(f"baseline architectures are defined for f1 and f2 only, got {target!r}")
    return key


def nn_width_spec(target) -> MlpSpec:
    return MlpSpec(tuple(_WIDTH[_target_key(target)]))


def nn_depth_spec(target) -> MlpSpec:
    return MlpSpec(tuple(_DEPTH[_target_key(target)]))


def param_count(spec: MlpSpec) -> int:
    w = spec.widths
    return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))


@dataclass
class MlpParams:
    weights: list  # W_l with shape (out, in)
    biases: list

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def scaled(self, factor: float) -> "MlpParams":
        return MlpParams([w * factor for w in self.weights], [b * factor for b in self.biases])

    def to_dict(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}


# Gradients share the parameter container layout.
MlpGradients = MlpParams


def init_params(spec: MlpSpec, seed: int = 0) -> MlpParams:
    """He-normal weights (variance 2/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    w = spec.widths
    weights = [rng.standard_normal((w[i + 1], w[i])) * np.sqrt(2.0 / w[i]) for i in range(len(w) - 1)]
    biases = [np.zeros(w[i + 1]) for i in range(len(w) - 1)]
    return MlpParams(weights, biases)


def _check(spec: MlpSpec, params: MlpParams) -> None:
    w = spec.widths
    if len(params.weights) != len(w) - 1:
        raise ValueError("parameter list does not match spec depth")
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        if W.shape != (w[i + 1], w[i]) or b.shape != (w[i + 1],):
            raise ValueError(f"layer {i} has shapes {W.shape}, {b.shape}; expected {(w[i + 1], w[i])}")


def _forward(params: MlpParams, X: np.ndarray):
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def mlp_predict(spec: MlpSpec, params: MlpParams, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check(spec, params)
    if X.shape[1] != spec.d:
        raise ValueError(f"expected inputs with {spec.d} features, got {X.shape}")
    return _forward(params, X)[-1][:, 0]


def mlp_forward(spec: MlpSpec, params: MlpParams, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.d,):
        raise ValueError(f"expected input of length {spec.d}, got shape {x.shape}")
    return float(mlp_predict(spec, params, x[None])[0])


def mlp_backward(spec: MlpSpec, params: MlpParams, X, y) -> tuple[MlpGradients, float]:
    """Gradient of the batch mean squared error; returns (gradients, mse)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(spec, params)
    acts = _forward(params, X)
    resid = acts[-1][:, 0] - y
    mse = float(np.mean(resid * resid))
    g = (2.0 * resid / len(y))[:, None]
    gw, gb = [], []
    for i in range(len(params.weights) - 1, -1, -1):
        gw.append(g.T @ acts[i])
        gb.append(g.sum(axis=0))
        if i > 0:
            g = (g @ params.weights[i]) * (acts[i] > 0)
    return MlpGradients(gw[::-1], gb[::-1]), mse


def save_params(params: MlpParams, spec: MlpSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump({"widths": list(spec.widths), **params.to_dict()}, fh)
