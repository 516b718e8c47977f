"""Search-domain tightening: SHAP-guided bounds, geometric coupling, trust region."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import EvaluatedSample, SearchDomain, contains
from .shap import ShapReport, Side, one_sided_positivity, rank_features


class BoundSide(enum.Enum):
    LOWER = "Lower"
    UPPER = "Upper"


class Reason(enum.Enum):
    SHAP_RIGHT_POSITIVE = "ShapRightPositive"
    SHAP_LEFT_POSITIVE = "ShapLeftPositive"
    GEOMETRIC_COUPLING = "GeometricCoupling"
    TRUST_REGION = "TrustRegion"
    INCUMBENT_CONTAINMENT = "IncumbentContainment"


@dataclass(frozen=True)
class RefinementEvent:
    iteration: int
    feature: int
    side: BoundSide
    old_bound: float
    new_bound: float
    reason: Reason

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "feature": self.feature,
            "side": self.side.value,
            "old_bound": self.old_bound,
            "new_bound": self.new_bound,
            "reason": self.reason.value,
        }


def _round_out(value: float, grid: float | None, side: BoundSide) -> float:
    if not grid:
        return value
    q = value / grid
    # tolerate representation error so 9.000000000000002 stays on the 9 grid line
    if side is BoundSide.LOWER:
        return math.floor(q + 1e-9) * grid
    return math.ceil(q - 1e-9) * grid


def shap_refine(domain: SearchDomain, report: ShapReport, best: EvaluatedSample,
                margin: float = 0.1, top_k: int = 6, grid: float | None = None,
                iteration: int = 0) -> tuple[SearchDomain, list[RefinementEvent]]:
    """Tighten bounds of the top-ranked features whose attribution at the
    incumbent is positive and whose attribution is positive on a whole side.

    With ``grid`` set, new lower bounds are rounded down and new upper bounds
    up to multiples of ``grid``.  Bounds never leave the incoming domain, and
    the incumbent always stays inside the result.
    """
    if not 0.0 < margin < 1.0:
        raise ValueError(f"margin must lie in (0, 1), got {margin}")
    if grid is not None and not grid > 0:
        raise ValueError(f"grid must be positive, got {grid}")
    bx = best.x
    if not contains(domain, bx):
        raise ValueError("the incumbent must lie inside the domain being refined")
    row = report.values[report.row_of(bx)]
    lower = domain.lower.copy()
    upper = domain.upper.copy()
    events: list[RefinementEvent] = []
    k = min(top_k, domain.dim)

    for j in rank_features(report, k):
        if not row[j] > 0:
            continue
        verdict = one_sided_positivity(report, j, bx)
        value = float(bx[j])
        if verdict is Side.ALL_RIGHT_POSITIVE:
            side, reason = BoundSide.LOWER, Reason.SHAP_RIGHT_POSITIVE
            proposed = _round_out(value * (1.0 - margin), grid, side)
        elif verdict is Side.ALL_LEFT_POSITIVE:
            side, reason = BoundSide.UPPER, Reason.SHAP_LEFT_POSITIVE
            proposed = _round_out(value * (1.0 + margin), grid, side)
        else:
            continue

        if side is BoundSide.LOWER:
            new = max(lower[j], proposed)
            if new > value:
                # multiplicative margin points the wrong way for negative values
                new = max(domain.lower[j], _round_out(value - margin * abs(value), grid, side))
                reason = Reason.INCUMBENT_CONTAINMENT
            if new != lower[j]:
                events.append(RefinementEvent(iteration, j, side, float(lower[j]), float(new), reason))
                lower[j] = new
        else:
            new = min(upper[j], proposed)
            if new < value:
                new = min(domain.upper[j], _round_out(value + margin * abs(value), grid, side))
                reason = Reason.INCUMBENT_CONTAINMENT
            if new != upper[j]:
                events.append(RefinementEvent(iteration, j, side, float(upper[j]), float(new), reason))
                upper[j] = new

    if not np.all(lower < upper):
        # a zero-width interval (incumbent at 0 with the margin collapsing) keeps its old bounds
        bad = ~(lower < upper)
        lower[bad], upper[bad] = domain.lower[bad], domain.upper[bad]
        events = [e for e in events if not bad[e.feature]]
    return domain.replace(lower=lower, upper=upper), events


@dataclass(frozen=True)
class CouplingRule:
    """Raise ``target``'s lower bound to ``offset + factor * min(lower of sources)``."""

    target: str
    sources: tuple[str, ...]
    offset: float
    factor: float


# minimum slab thickness for the two void layers
SLAB_COUPLING = CouplingRule(target="h", sources=("r1", "r2"), offset=30.0, factor=4.0)


def apply_geometric_coupling(domain: SearchDomain, rule: CouplingRule = SLAB_COUPLING,
                             iteration: int = 0) -> tuple[SearchDomain, list[RefinementEvent]]:
    t = domain.index(rule.target)
    src = [domain.index(s) for s in rule.sources]
    candidate = min(rule.offset + rule.factor * domain.lower[j] for j in src)
    old = float(domain.lower[t])
    if not candidate > old:
        return domain, []
    if not candidate < domain.upper[t]:
        raise ValueError(
            f"coupling would raise the lower bound of {rule.target} to {candidate}, "
            f"at or above its upper bound {domain.upper[t]}"
        )
    lower = domain.lower.copy()
    lower[t] = candidate
    event = RefinementEvent(iteration, t, BoundSide.LOWER, old, float(candidate),
                            Reason.GEOMETRIC_COUPLING)
    return domain.replace(lower=lower), [event]


def trust_region_reduce(domain: SearchDomain, original: SearchDomain, best: EvaluatedSample,
                        gamma: float = 0.7, min_width_frac: float = 0.05) -> SearchDomain:
    """Contract the box around the incumbent.

    Each half-width becomes ``max(gamma * current, min_width_frac * original
    width / 2)``; the box is centered on the incumbent and then shifted, not
    shrunk, to fit inside the current domain (or the original one when the
    incumbent lies outside the current domain), so successive boxes nest.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if not 0.0 < min_width_frac <= 1.0:
        raise ValueError(f"min_width_frac must lie in (0, 1], got {min_width_frac}")
    if not domain.is_subset_of(original):
        raise ValueError("domain must be a subset of the original domain")
    if not contains(original, best.x):
        raise ValueError("the incumbent must lie inside the original domain")
    box = domain if contains(domain, best.x) else original

    half = np.maximum(gamma * domain.width / 2.0, min_width_frac * original.width / 2.0)
    half = np.minimum(half, box.width / 2.0)
    lo = best.x - half
    hi = best.x + half
    shift_up = np.maximum(box.lower - lo, 0.0)
    shift_down = np.maximum(hi - box.upper, 0.0)
    lo = lo + shift_up - shift_down
    hi = hi + shift_up - shift_down
    lo = np.clip(lo, box.lower, box.upper)
    hi = np.clip(hi, box.lower, box.upper)
    # the shift is at most one half-width, so only rounding can push the incumbent out
    lo = np.minimum(lo, best.x)
    hi = np.maximum(hi, best.x)

    return SearchDomain(domain.names, lo, hi)


def domain_change_events(old: SearchDomain, new: SearchDomain, reason: Reason,
                         iteration: int = 0) -> list[RefinementEvent]:
    events = []
    for j in range(old.dim):
        if new.lower[j] != old.lower[j]:
            events.append(RefinementEvent(iteration, j, BoundSide.LOWER, float(old.lower[j]),
                                          float(new.lower[j]), reason))
        if new.upper[j] != old.upper[j]:
            events.append(RefinementEvent(iteration, j, BoundSide.UPPER, float(old.upper[j]),
                                          float(new.upper[j]), reason))
    return events
