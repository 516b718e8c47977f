"""Run standard, trust-region and SHAP-bounded BO; record and compare traces."""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gpr, mlp, shap
from .core import Dataset, EvaluatedSample, RngStream, SearchDomain, clip, contains, initial_design
from .problems import ObjectiveSpec, get_objective
from .refine import (
    BoundSide,
    Reason,
    RefinementEvent,
    apply_geometric_coupling,
    domain_change_events,
    shap_refine,
    trust_region_reduce,
)

log = logging.getLogger(__name__)

DEFAULT_REFINE_AT = (100, 150, 200, 250, 300, 350)

# child stream indices under a run's root seed
_INIT, _GP, _ACQ, _MLP, _SHAP = range(5)


class Protocol(enum.Enum):
    STANDARD = "standard"
    TRUST_REGION = "trust-region"
    SHAP = "shap"


class SurrogateFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    protocol: Protocol
    budget: int = 400
    n_init: int | None = None  # None means 10 x dimension
    refine_iterations: tuple[int, ...] = DEFAULT_REFINE_AT
    margin: float = 0.1
    top_k: int = 6
    trust_gamma: float = 0.7
    mlp_epochs: int = 500
    seed: int = 0
    train_filtering: bool = False
    grid: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "refine_iterations", tuple(int(i) for i in self.refine_iterations))

    def resolved(self, dim: int) -> "ProtocolConfig":
        cfg = self if self.n_init is not None else dataclasses.replace(self, n_init=10 * dim)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.n_init is None or self.n_init < 1:
            raise ValueError(f"n_init must be a positive integer, got {self.n_init}")
        if not self.n_init < self.budget:
            raise ValueError(f"n_init ({self.n_init}) must be smaller than budget ({self.budget})")
        if not 0 < self.margin < 1:
            raise ValueError(f"margin must lie in (0, 1), got {self.margin}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be positive, got {self.top_k}")
        if self.protocol is Protocol.STANDARD:
            return
        r = self.refine_iterations
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError(f"refine_iterations must be strictly increasing, got {r}")
        if r and not (self.n_init <= r[0] and r[-1] < self.budget):
            raise ValueError(
                f"refine_iterations {r} must lie in [n_init={self.n_init}, budget={self.budget})"
            )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["protocol"] = self.protocol.value
        d["refine_iterations"] = list(self.refine_iterations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        return cls(**d)


@dataclass
class RunTrace:
    config: ProtocolConfig
    problem: str
    samples: list[EvaluatedSample]
    best_curve: np.ndarray
    domain_snapshots: dict[int, SearchDomain]
    refinement_events: list[RefinementEvent] = field(default_factory=list)
    fit_failures: list[dict] = field(default_factory=list)

    @property
    def final_best(self) -> float:
        return float(self.best_curve[-1])

    def domain_at(self, index: int) -> SearchDomain:
        """Domain in force when the sample with 0-based ``index`` was chosen."""
        key = max(k for k in self.domain_snapshots if k <= index)
        return self.domain_snapshots[key]

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "config": self.config.to_dict(),
            "samples": {
                "x": [s.x.tolist() for s in self.samples],
                "y": [s.y for s in self.samples],
            },
            "best_curve": self.best_curve.tolist(),
            "snapshots": {str(k): d.to_dict() for k, d in sorted(self.domain_snapshots.items())},
            "events": [e.to_dict() for e in self.refinement_events],
            "fit_failures": self.fit_failures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunTrace":
        samples = [EvaluatedSample(np.array(x), y) for x, y in zip(d["samples"]["x"], d["samples"]["y"])]
        events = [
            RefinementEvent(e["iteration"], e["feature"], BoundSide(e["side"]), e["old_bound"],
                            e["new_bound"], Reason(e["reason"]))
            for e in d["events"]
        ]
        return cls(
            config=ProtocolConfig.from_dict(d["config"]),
            problem=d["problem"],
            samples=samples,
            best_curve=np.array(d["best_curve"], dtype=float),
            domain_snapshots={int(k): SearchDomain.from_dict(v) for k, v in d["snapshots"].items()},
            refinement_events=events,
            fit_failures=d.get("fit_failures", []),
        )

    def save(self, path) -> None:
        # json writes floats with repr, which round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "RunTrace":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _fit_with_retry(train: Dataset, rng: RngStream, t: int, failures: list) -> gpr.GprModel:
    for attempt in range(2):
        try:
            return gpr.fit(train, rng.child(_GP, t, attempt))
        except gpr.ModelFitError as exc:
            failures.append({"iteration": t, "attempt": attempt, "error": str(exc)})
            log.warning("GP fit failed at iteration %d (attempt %d): %s", t, attempt, exc)
    raise SurrogateFailure(f"GP fit failed twice in a row at iteration {t}; last: {failures[-1]}")


def _keep_incumbent(domain: SearchDomain, x: np.ndarray, t: int):
    lower = np.minimum(domain.lower, x)
    upper = np.maximum(domain.upper, x)
    new = domain.replace(lower=lower, upper=upper)
    return new, domain_change_events(domain, new, Reason.INCUMBENT_CONTAINMENT, t)


def couple_keeping_incumbent(domain: SearchDomain, rule, x: np.ndarray, t: int):
    """Apply the coupling rule, skip it if it would empty the box, and widen
    back to the incumbent if the raised bound excluded it."""
    events: list[RefinementEvent] = []
    try:
        domain, events = apply_geometric_coupling(domain, rule, iteration=t)
    except ValueError as exc:
        # SHAP pulled the target's upper bound below the coupled lower bound
        log.warning("iteration %d: coupling skipped: %s", t, exc)
    if not contains(domain, x):
        domain, ev = _keep_incumbent(domain, x, t)
        events = events + ev
    return domain, events


def shap_report_for(data: Dataset, config: ProtocolConfig, rng: RngStream, t: int) -> shap.ShapReport:
    model = mlp.train(data, epochs=config.mlp_epochs, rng=rng.child(_MLP, t))
    return shap.explain_dataset(model, data, rng.child(_SHAP, t))


def refine_domain(objective: ObjectiveSpec, config: ProtocolConfig, data: Dataset,
                  domain: SearchDomain, rng: RngStream, t: int):
    """One scheduled domain update; returns the new domain and its events."""
    best = data.best()
    if config.protocol is Protocol.TRUST_REGION:
        new = trust_region_reduce(domain, data.domain, best, gamma=config.trust_gamma)
        return new, domain_change_events(domain, new, Reason.TRUST_REGION, t)

    report = shap_report_for(data, config, rng, t)
    events: list[RefinementEvent] = []
    if not contains(domain, best.x):
        domain, ev = _keep_incumbent(domain, best.x, t)
        events += ev
    domain, ev = shap_refine(domain, report, best, margin=config.margin, top_k=config.top_k,
                             grid=config.grid, iteration=t)
    events += ev
    if objective.coupling is not None:
        domain, ev = couple_keeping_incumbent(domain, objective.coupling, best.x, t)
        events += ev
    return domain, events


def run_protocol(objective: ObjectiveSpec, config: ProtocolConfig) -> RunTrace:
    original = objective.domain
    config = config.resolved(original.dim)
    rng = RngStream(config.seed)
    data = Dataset(original)
    domain = original
    snapshots = {0: original}
    events: list[RefinementEvent] = []
    failures: list[dict] = []
    schedule = set() if config.protocol is Protocol.STANDARD else set(config.refine_iterations)

    for x in initial_design(original, config.n_init, rng.child(_INIT)):
        data.add(x, objective(x))

    while len(data) < config.budget:
        t = len(data)
        if t in schedule:
            new, ev = refine_domain(objective, config, data, domain, rng, t)
            events += ev
            if new != domain:
                snapshots[t] = new
                domain = new
            log.info("iteration %d: %d bound changes", t, len(ev))

        train = data
        if config.train_filtering:
            inside = data.subset(domain)
            if len(inside) >= 2:
                train = inside
        model = _fit_with_retry(train, rng, t, failures)
        x = gpr.argmax_acquisition(model, domain, data.best().y, rng.child(_ACQ, t))
        x = clip(domain, x)
        data.add(x, objective(x))

    return RunTrace(
        config=config,
        problem=objective.name,
        samples=list(data.samples),
        best_curve=np.maximum.accumulate(data.y),
        domain_snapshots=snapshots,
        refinement_events=events,
        fit_failures=failures,
    )


def iterations_to_reference(trace, reference: float) -> int | None:
    """1-based evaluation count at which the best-so-far first reaches ``reference``."""
    curve = trace.best_curve if isinstance(trace, RunTrace) else np.asarray(trace, dtype=float)
    hits = np.flatnonzero(curve >= reference)
    return int(hits[0]) + 1 if hits.size else None


@dataclass
class ConvergenceStats:
    mean: np.ndarray
    std: np.ndarray
    final_best: np.ndarray
    iterations_to_reference: list = field(default_factory=list)


def aggregate(traces: Sequence[RunTrace], reference: float | None = None) -> ConvergenceStats:
    if not traces:
        raise ValueError("need at least one trace")
    lengths = {len(t.best_curve) for t in traces}
    if len(lengths) != 1:
        raise ValueError(f"traces have mixed budgets: {sorted(lengths)}")
    curves = np.vstack([t.best_curve for t in traces])
    itr = [] if reference is None else [iterations_to_reference(t, reference) for t in traces]
    return ConvergenceStats(
        mean=curves.mean(axis=0),
        std=curves.std(axis=0),
        final_best=curves[:, -1].copy(),
        iterations_to_reference=itr,
    )


def _run_job(args) -> RunTrace:
    objective, config = args
    return run_protocol(objective, config)


def run_many(objective: ObjectiveSpec, configs: Sequence[ProtocolConfig], seeds: Sequence[int],
             n_jobs: int = 1) -> list[list[RunTrace]]:
    """Traces indexed ``[config][seed]``; each job owns its seeded stream."""
    jobs = [(objective, dataclasses.replace(c, seed=int(s))) for c in configs for s in seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            flat = list(pool.map(_run_job, jobs))
    else:
        flat = [_run_job(j) for j in jobs]
    k = len(seeds)
    return [flat[i * k:(i + 1) * k] for i in range(len(configs))]


SUMMARY_COLUMNS = ("protocol", "n_seeds", "mean_final_best", "std_final_best", "reference",
                   "mean_iterations_to_reference", "fraction_reaching_reference")


def summarize(configs: Sequence[ProtocolConfig], traces: Sequence[Sequence[RunTrace]]) -> list[dict]:
    standard = [i for i, c in enumerate(configs) if c.protocol is Protocol.STANDARD]
    if not standard:
        raise ValueError("a StandardBO configuration is needed to define the reference")
    reference = float(np.mean([t.final_best for t in traces[standard[0]]]))
    rows = []
    for cfg, group in zip(configs, traces):
        stats = aggregate(group, reference)
        reached = [i for i in stats.iterations_to_reference if i is not None]
        rows.append({
            "protocol": cfg.protocol.value,
            "n_seeds": len(group),
            "mean_final_best": float(np.mean(stats.final_best)),
            "std_final_best": float(np.std(stats.final_best)),
            "reference": reference,
            "mean_iterations_to_reference": float(np.mean(reached)) if reached else None,
            "fraction_reaching_reference": len(reached) / len(group),
        })
    return rows


def compare_protocols(objective: ObjectiveSpec, configs: Sequence[ProtocolConfig],
                      seeds: Sequence[int], n_jobs: int = 1):
    """Run every config on every seed; returns (summary rows, traces)."""
    if len(configs) < 2:
        raise ValueError("compare at least two protocols")
    if len(seeds) < 2:
        raise ValueError("compare over at least two seeds")
    traces = run_many(objective, configs, seeds, n_jobs)
    return summarize(configs, traces), traces


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_summary_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])


def write_convergence_csv(groups: dict[str, Sequence[RunTrace]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "protocol", "mean_best", "std_best"])
        for name, group in groups.items():
            stats = aggregate(group)
            for i, (m, s) in enumerate(zip(stats.mean, stats.std), start=1):
                w.writerow([i, name, repr(float(m)), repr(float(s))])


def default_objective(name: str) -> ObjectiveSpec:
    return get_objective(name)
