"""Small ReLU network used as the attribution target for Shapley analysis.

Full-batch Adam on mean squared error, inputs min-max normalized by the
original domain and targets standardized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset, DimensionError, RngStream, SearchDomain

HIDDEN = (64, 64)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpModel:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    input_domain: SearchDomain
    y_mean: float = 0.0
    y_std: float = 1.0
    loss_history: tuple[float, ...] = field(default=(), compare=False)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward_batch(self, X) -> np.ndarray:
        """Predictions in objective units for every row of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.input_domain.dim:
            raise DimensionError(f"expected {self.input_domain.dim} features, got shape {X.shape}")
        h = (np.atleast_2d(X) - self.input_domain.lower) / self.input_domain.width
        return self.y_mean + self.y_std * _forward_normalized(self.weights, self.biases, h)

    def dump(self, path) -> None:
        """Write a plain-text dump: layer sizes, then each weight matrix
        (row-major, fan_in rows) followed by its bias vector."""
        lines = [" ".join(str(s) for s in self.layer_sizes)]
        for W, b in zip(self.weights, self.biases):
            lines.extend(" ".join(repr(float(v)) for v in row) for row in W)
            lines.append(" ".join(repr(float(v)) for v in b))
        Path(path).write_text("\n".join(lines) + "\n")


def _forward_normalized(weights, biases, h: np.ndarray) -> np.ndarray:
    for W, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
    return (h @ weights[-1] + biases[-1])[:, 0]


def forward(model: MlpModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.input_domain.dim,):
        raise DimensionError(f"expected a vector of length {model.input_domain.dim}, got {x.shape}")
    return float(model.forward_batch(x[None, :])[0])


def init_params(sizes, rng: RngStream):
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return weights, biases


def train(data: Dataset, epochs: int = 500, rng: RngStream | None = None,
          learning_rate: float = 1e-3, hidden=HIDDEN) -> MlpModel:
    """Train a ``[D, *hidden, 1]`` ReLU network on ``data``."""
    if len(data) < 2:
        raise ValueError(f"need at least 2 samples to train, got {len(data)}")
    if rng is None:
        rng = RngStream(0)
    domain = data.domain
    X = (data.X - domain.lower) / domain.width
    y_raw = data.y
    y_mean = float(np.mean(y_raw))
    y_std = float(np.std(y_raw))
    if not y_std > 1e-12 * max(1.0, abs(y_mean)):
        y_std = 1.0
    y = (y_raw - y_mean) / y_std
    n = y.size

    sizes = [domain.dim, *hidden, 1]
    W, b = init_params(sizes, rng)
    params = W + b
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    n_layers = len(W)
    history = []

    for epoch in range(1, epochs + 1):
        acts = [X]
        for k in range(n_layers - 1):
            acts.append(np.maximum(acts[-1] @ W[k] + b[k], 0.0))
        pred = (acts[-1] @ W[-1] + b[-1])[:, 0]
        err = pred - y
        loss = float(np.mean(err**2))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        history.append(loss)

        grad = (2.0 / n) * err[:, None]
        gW = [None] * n_layers
        gb = [None] * n_layers
        for k in range(n_layers - 1, -1, -1):
            gW[k] = acts[k].T @ grad
            gb[k] = grad.sum(axis=0)
            if k:
                grad = (grad @ W[k].T) * (acts[k] > 0)

        c1 = 1.0 - beta1**epoch
        c2 = 1.0 - beta2**epoch
        for i, g in enumerate(gW + gb):
            m[i] = beta1 * m[i] + (1 - beta1) * g
            v[i] = beta2 * v[i] + (1 - beta2) * g * g
            params[i] -= learning_rate * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)

    # loss of the final weights, so history[-1] describes the returned model
    h = X
    for k in range(n_layers - 1):
        h = np.maximum(h @ W[k] + b[k], 0.0)
    history.append(float(np.mean(((h @ W[-1] + b[-1])[:, 0] - y) ** 2)))

    return MlpModel(
        weights=tuple(w.copy() for w in W),
        biases=tuple(bb.copy() for bb in b),
        input_domain=domain,
        y_mean=y_mean,
        y_std=y_std,
        loss_history=tuple(history),
    )
