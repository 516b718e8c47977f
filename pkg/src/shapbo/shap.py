"""Exact interventional Shapley values by full coalition enumeration."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Dataset, RngStream

MAX_FEATURES = 16
BACKGROUND_SIZE = 64


class TooManyFeaturesError(ValueError):
    """Exact enumeration was requested for more features than supported."""


class Side(enum.Enum):
    ALL_RIGHT_POSITIVE = "AllRightPositive"
    ALL_LEFT_POSITIVE = "AllLeftPositive"
    MIXED = "Mixed"


@dataclass(frozen=True)
class ShapReport:
    base_value: float
    values: np.ndarray
    feature_order: tuple[int, ...]
    sample_inputs: np.ndarray
    feature_names: tuple[str, ...] = ()

    @property
    def mean_abs(self) -> np.ndarray:
        return np.mean(np.abs(self.values), axis=0)

    def row_of(self, x) -> int:
        """Index of the explained sample equal to ``x``."""
        hits = np.flatnonzero(np.all(self.sample_inputs == np.asarray(x, dtype=float), axis=1))
        if hits.size == 0:
            raise KeyError("design vector is not among the explained samples")
        return int(hits[0])

    def to_csv(self, path) -> None:
        names = self.feature_names or tuple(f"x{j}" for j in range(self.values.shape[1]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "feature", "value", "shap"])
            for i, (x, phi) in enumerate(zip(self.sample_inputs, self.values)):
                for j, name in enumerate(names):
                    w.writerow([i, name, repr(float(x[j])), repr(float(phi[j]))])


def _coalition_weights(D: int) -> np.ndarray:
    # weight of a coalition of size s not containing the feature
    return np.array([math.factorial(s) * math.factorial(D - s - 1) / math.factorial(D)
                     for s in range(D)])


def _masks(D: int) -> np.ndarray:
    ids = np.arange(2**D)
    return ((ids[:, None] >> np.arange(D)) & 1).astype(bool)


def _as_batch_fn(model_fn) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model_fn, "forward_batch"):
        return model_fn.forward_batch
    return lambda Z: np.array([model_fn(z) for z in Z], dtype=float)


def coalition_values(batch_fn, x: np.ndarray, background: np.ndarray) -> np.ndarray:
    """v(S) for every coalition S, indexed by the bitmask of S."""
    D = x.size
    masks = _masks(D)
    B = background.shape[0]
    Z = np.where(masks[:, None, :], x[None, None, :], background[None, :, :])
    out = np.asarray(batch_fn(Z.reshape(-1, D)), dtype=float)
    return out.reshape(2**D, B).mean(axis=1)


def shapley_from_values(v: np.ndarray, D: int) -> np.ndarray:
    weights = _coalition_weights(D)
    ids = np.arange(2**D)
    sizes = np.array([bin(i).count("1") for i in range(2**D)])
    phi = np.empty(D)
    for j in range(D):
        without = ids[(ids >> j) & 1 == 0]
        phi[j] = np.sum(weights[sizes[without]] * (v[without | (1 << j)] - v[without]))
    return phi


def _check(x, background):
    x = np.asarray(x, dtype=float)
    background = np.atleast_2d(np.asarray(background, dtype=float))
    D = x.size
    if D > MAX_FEATURES:
        raise TooManyFeaturesError(
            f"exact Shapley enumeration supports at most {MAX_FEATURES} features, got {D}"
        )
    if background.shape[0] == 0:
        raise ValueError("background must contain at least one point")
    if background.shape[1] != D:
        raise ValueError(f"background has {background.shape[1]} features, x has {D}")
    return x, background


def exact_shapley(model_fn, x, background) -> np.ndarray:
    """Shapley value of each feature of ``x`` under the interventional game.

    ``model_fn`` maps a design vector to a scalar; objects exposing
    ``forward_batch`` are evaluated in one vectorized call.
    """
    x, background = _check(x, background)
    v = coalition_values(_as_batch_fn(model_fn), x, background)
    return shapley_from_values(v, x.size)


def explain_dataset(model, data: Dataset, rng: RngStream,
                    background_size: int = BACKGROUND_SIZE) -> ShapReport:
    """Explain every sample of ``data`` against a seeded background subsample."""
    n = len(data)
    if n == 0:
        raise ValueError("cannot explain an empty dataset")
    X = data.X
    idx = rng.choice(n, min(background_size, n), replace=False)
    background = X[np.sort(idx)]
    batch_fn = _as_batch_fn(model)
    D = X.shape[1]
    _check(X[0], background)

    values = np.empty((n, D))
    base = None
    for i, x in enumerate(X):
        v = coalition_values(batch_fn, x, background)
        base = v[0]
        values[i] = shapley_from_values(v, D)
    order = tuple(int(j) for j in np.argsort(-np.mean(np.abs(values), axis=0), kind="stable"))
    return ShapReport(
        base_value=float(base),
        values=values,
        feature_order=order,
        sample_inputs=X,
        feature_names=tuple(data.domain.names),
    )


def rank_features(report: ShapReport, k: int) -> list[int]:
    D = report.values.shape[1]
    if not 1 <= k <= D:
        raise ValueError(f"k must lie in [1, {D}], got {k}")
    order = np.argsort(-report.mean_abs, kind="stable")
    return [int(j) for j in order[:k]]


def one_sided_positivity(report: ShapReport, feature: int, best_x: Sequence[float]) -> Side:
    """Whether every attribution strictly right (or left) of the incumbent is positive."""
    xs = report.sample_inputs[:, feature]
    phi = report.values[:, feature]
    pivot = float(np.asarray(best_x, dtype=float)[feature])
    right = xs > pivot
    left = xs < pivot
    right_ok = bool(right.any() and np.all(phi[right] > 0))
    left_ok = bool(left.any() and np.all(phi[left] > 0))
    if right_ok and not left_ok:
        return Side.ALL_RIGHT_POSITIVE
    if left_ok and not right_ok:
        return Side.ALL_LEFT_POSITIVE
    return Side.MIXED
