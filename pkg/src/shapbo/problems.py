"""Benchmark objectives.

``synthetic-pu`` scores a ten-parameter two-layer void coating: a closed-form
absorption spectrum (broadband slab term plus one Lorentzian resonance per
void layer) is aggregated with low-frequency-weighted absorption minus a
manufacturability penalty.  It is a deterministic stand-in for an FEM
surrogate, not a physical model.

``toy2d`` is a rugged 2D landscape: a linear trend plus twelve Gaussian bumps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import SearchDomain, contains
from .refine import SLAB_COUPLING, CouplingRule

N_FREQ = 1000
FREQUENCIES = 10.0 * np.arange(1, N_FREQ + 1)

DESIGN_NAMES = ("r1", "r2", "D1", "D2", "B1", "B2", "B3", "B4", "h", "t")

PENALTY_PER_MM = 0.02
MIN_GAP_MM = 10.0


def absorption_weights(n: int = N_FREQ) -> np.ndarray:
    """Linearly decaying weights (n + 1 - i) / n for i = 1..n."""
    return (n + 1 - np.arange(1, n + 1)) / n


def weighted_absorption(spectrum, penalty: float = 0.0) -> float:
    """Weighted absorption sum minus the penalty."""
    a = np.asarray(spectrum, dtype=float)
    n = a.size
    if penalty < 0:
        raise ValueError(f"penalty must be non-negative, got {penalty}")
    # integer numerators keep e.g. the all-ones sum exact
    numerators = (n + 1 - np.arange(1, n + 1)).astype(float)
    return float(numerators @ a) / n - penalty


def acoustic_domain() -> SearchDomain:
    lower = [2, 2, 10, 10, 10, 10, 10, 10, 30, 30]
    upper = [15, 15, 80, 80, 80, 80, 80, 80, 100, 100]
    return SearchDomain(DESIGN_NAMES, np.array(lower, float), np.array(upper, float))


@dataclass(frozen=True)
class AcousticDesign:
    r1: float
    r2: float
    D1: float
    D2: float
    B1: float
    B2: float
    B3: float
    B4: float
    h: float
    t: float

    @classmethod
    def from_vector(cls, x) -> "AcousticDesign":
        x = np.asarray(x, dtype=float)
        if x.shape != (len(DESIGN_NAMES),):
            raise ValueError(f"expected {len(DESIGN_NAMES)} design variables, got shape {x.shape}")
        return cls(*(float(v) for v in x))

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in DESIGN_NAMES])


def _logistic(z: float) -> float:
    return 1.0 / (1.0 + np.exp(-z))


def _lorentzian(f: np.ndarray, center: float, width: float) -> np.ndarray:
    return width**2 / ((f - center) ** 2 + width**2)


def synthetic_absorber(design: AcousticDesign, frequencies=None) -> np.ndarray:
    """Absorption coefficient at 10, 20, ..., 10000 Hz (or at ``frequencies``)."""
    d = design
    f = FREQUENCIES if frequencies is None else np.asarray(frequencies, dtype=float)
    base = 0.15 + 0.25 * (1.0 - np.exp(-f / 4000.0)) * (d.h / 100.0)
    c1 = 8000.0 / (1.0 + 0.6 * d.r1)
    c2 = 8000.0 / (1.0 + 0.6 * d.r2)
    w1 = 300.0 + 20.0 * d.D1
    w2 = 300.0 + 20.0 * d.D2
    a1 = 0.35 * _logistic(0.08 * (d.D1 - 45.0)) - 0.1 * ((d.B1 - d.B3) / 70.0) ** 2
    a2 = 0.35 * _logistic(-0.08 * (d.D2 - 45.0)) - 0.1 * ((d.B2 - d.B4) / 70.0) ** 2
    a = base + a1 * _lorentzian(f, c1, w1) + a2 * _lorentzian(f, c2, w2)
    return np.clip(a, 0.0, 1.0)


def constraint_shortfalls(design: AcousticDesign) -> dict[str, float]:
    """Positive shortfall (mm) of every manufacturability constraint.

    B1 and B3 place the voids of layer 1, B2 and B4 those of layer 2.
    """
    d = design
    radius = {1: d.r1, 2: d.r2}
    out = {"slab": max(0.0, 2.0 * (d.r1 + d.r2) + 30.0 - d.h)}
    for j, D in ((1, d.D1), (2, d.D2)):
        out[f"edge_D{j}"] = max(0.0, MIN_GAP_MM - (D - radius[j]))
        out[f"width_D{j}"] = max(0.0, (D + radius[j]) - (d.t - MIN_GAP_MM))
    for k, B in ((1, d.B1), (2, d.B2), (3, d.B3), (4, d.B4)):
        layer = 1 if k in (1, 3) else 2
        out[f"edge_B{k}"] = max(0.0, MIN_GAP_MM - (B - radius[layer]))
    return out


def manufacturability_penalty(design: AcousticDesign) -> float:
    return PENALTY_PER_MM * sum(constraint_shortfalls(design).values())


def synthetic_pu(x) -> float:
    design = AcousticDesign.from_vector(x)
    return weighted_absorption(synthetic_absorber(design), manufacturability_penalty(design))


# (amplitude, x center, y center); PCG64 seed 42, amplitudes drawn first, then x, then y
TOY2D_BUMPS = np.array([
    (0.8417692339891742, 3.1473930403629904, 3.7527257368319282),
    (0.6072149078264366, 3.9524272597187347, 1.125874185333854),
    (0.9010185439379677, 2.24536389472299, 2.350244516771654),
    (0.7881576203415547, 1.2725742480314959, 0.4471169460425295),
    (0.36592414352135466, 2.7456315415712567, 0.9443027143039653),
    (0.982935646145729, 0.537177652468789, 3.323720289591046),
    (0.8327977913932469, 3.9743402739666194, 3.601429701585177),
    (0.8502450136938675, 3.092489796049292, 4.603793795953945),
    (0.3896795428728821, 3.6613948303841823, 1.7162141116216838),
    (0.615270156526897, 1.8453668565844077, 1.91706867715691),
    (0.5595586169628068, 4.618141109777064, 2.3630011507411357),
    (0.9487354921940212, 4.269045045949889, 1.1026211158792856),
])
TOY2D_BUMP_WIDTH = 0.18


def toy2d_domain() -> SearchDomain:
    return SearchDomain(("x", "y"), np.array([0.0, 0.0]), np.array([5.0, 5.0]))


def toy2d_grid(x, y):
    """Vectorized toy2d without the domain check."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = 0.3 * x - 0.2 * y
    for amp, px, py in TOY2D_BUMPS:
        out = out + amp * np.exp(-((x - px) ** 2 + (y - py) ** 2) / (2.0 * TOY2D_BUMP_WIDTH**2))
    return out


def toy2d(x: float, y: float) -> float:
    if not (0.0 <= x <= 5.0 and 0.0 <= y <= 5.0):
        raise ValueError(f"toy2d is defined on [0, 5]^2, got ({x}, {y})")
    return float(toy2d_grid(x, y))


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    domain: SearchDomain
    evaluator: Callable[[np.ndarray], float]
    coupling: CouplingRule | None = None

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if not contains(self.domain, x):
            raise ValueError(f"{self.name}: design {x} is outside the domain")
        return float(self.evaluator(x))


def _toy2d_vec(x) -> float:
    return toy2d(float(x[0]), float(x[1]))


OBJECTIVES = {
    "toy2d": lambda: ObjectiveSpec("toy2d", toy2d_domain(), _toy2d_vec),
    "synthetic-pu": lambda: ObjectiveSpec("synthetic-pu", acoustic_domain(), synthetic_pu,
                                          coupling=SLAB_COUPLING),
}


def get_objective(name: str) -> ObjectiveSpec:
    try:
        return OBJECTIVES[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(OBJECTIVES)}") from None
