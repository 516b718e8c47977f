"""End-to-end acceptance checks.

Each test prints one ``[PASS]``/``[FAIL]`` line (visible even under output
capture) and then asserts the same condition.
"""

import dataclasses
import heapq
import os
import time

import numpy as np
import pytest

from shapbo import gpr, mlp, shap
from shapbo.core import Dataset, EvaluatedSample, RngStream, SearchDomain, contains
from shapbo.harness import (
    ProtocolConfig,
    couple_keeping_incumbent,
    iterations_to_reference,
    run_many,
    run_protocol,
)
from shapbo.problems import weighted_absorption, absorption_weights, get_objective, acoustic_domain
from shapbo.refine import SLAB_COUPLING, shap_refine, trust_region_reduce
from shapbo.shap import ShapReport

TOY2D_GRID_MAX = 2.1591917718938127


@pytest.fixture
def verdict(capsys):
    def report(criterion, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion} ({title}): {detail}")
        assert ok, detail
    return report


def _random_mlp(rng, D=10):
    weights, biases = mlp.init_params([D, 64, 64, 1], rng)
    biases = [rng.normal(b.shape) * 0.1 for b in biases]
    return weights, biases


def test_criterion_1_shapley_axioms(verdict):
    D = 10
    unit = SearchDomain.from_bounds([(0, 1)] * D)
    rng = RngStream(2024)
    worst_eff = worst_dummy = worst_lin = 0.0
    start = time.perf_counter()
    for i in range(50):
        r = rng.child(i)
        weights, biases = _random_mlp(r.child(0), D)
        dummy = int(r.choice(D, 1, replace=False)[0])
        weights[0][dummy, :] = 0.0
        model = mlp.MlpModel(tuple(weights), tuple(biases), unit)
        x = r.uniform(0, 1, D)
        background = r.uniform(0, 1, (int(r.choice(np.arange(1, 65), 1)[0]), D))
        phi = shap.exact_shapley(model, x, background)
        base = float(np.mean(model.forward_batch(background)))
        worst_eff = max(worst_eff, abs(base + phi.sum() - mlp.forward(model, x)))
        worst_dummy = max(worst_dummy, abs(phi[dummy]))

        w = r.normal((D, 1))
        linear = mlp.MlpModel((w,), (np.array([0.3]),), unit)
        expected = w[:, 0] * (x - background.mean(axis=0))
        worst_lin = max(worst_lin, float(np.max(np.abs(shap.exact_shapley(linear, x, background) - expected))))
    elapsed = time.perf_counter() - start
    ok = worst_eff <= 1e-8 and worst_dummy <= 1e-12 and worst_lin <= 1e-10 and elapsed < 60
    verdict(1, "Shapley axioms", ok,
            f"efficiency {worst_eff:.2e} (<=1e-8), dummy {worst_dummy:.2e} (<=1e-12), "
            f"linear {worst_lin:.2e} (<=1e-10), {elapsed:.1f}s (<60s)")


def test_criterion_2_weighted_objective(verdict):
    w = absorption_weights(1000)
    total = weighted_absorption(np.ones(1000), 0.0)
    ok = total == 500.5 and w[0] == 1.0 and w[999] == 0.001
    verdict(2, "weighted objective arithmetic", ok,
            f"all-ones sum {total!r}, w1 {float(w[0])!r}, w1000 {float(w[999])!r}")


def _dense_lml(params, Z, y, jitter):
    n = len(y)
    K = np.array([[gpr.kernel(a, b, params) for b in Z] for a in Z])
    K = K + (params.noise_variance + jitter) * np.eye(n)
    _, logdet = np.linalg.slogdet(K)
    return float(-0.5 * y @ np.linalg.inv(K) @ y - 0.5 * logdet - 0.5 * n * np.log(2 * np.pi))


def test_criterion_3_gpr(verdict):
    gen = np.random.default_rng(99)
    worst_interp = 0.0
    noisy = []  # datasets where maximum likelihood prefers a noise model
    worst_quiet = 0.0
    for i in range(20):
        D = 1 + i % 2
        domain = SearchDomain.from_bounds([(-2.0, 3.0)] * D)
        X = gen.uniform(-2, 3, (int(gen.integers(5, 13)), D))
        freq = gen.uniform(0.5, 2.0, D)
        y = np.sin(X @ freq) + 0.3 * np.sum(X, axis=1)
        ds = Dataset(domain)
        for x, v in zip(X, y):
            ds.add(x, v)
        model = gpr.fit(ds, RngStream(i))
        err = float(np.max(np.abs(model.predict_many(X)[0] - y)))
        worst_interp = max(worst_interp, err)
        if model.params.noise_variance > 1e-8:
            noisy.append(i)
        else:
            worst_quiet = max(worst_quiet, err)

    worst_lml = 0.0
    for i in range(5):
        domain = SearchDomain.from_bounds([(0, 1), (0, 1)])
        ds = Dataset(domain)
        for x in gen.uniform(0, 1, (5, 2)):
            ds.add(x, float(gen.normal()))
        model = gpr.fit(ds, RngStream(100 + i))
        oracle = _dense_lml(model.params, model.train_inputs, model.train_targets, model.jitter)
        worst_lml = max(worst_lml, abs(model.log_marginal_likelihood - oracle))

    ei = gpr.expected_improvement(1.0, 1.0, 0.0)
    ok = worst_interp <= 1e-6 and worst_lml <= 1e-8 and abs(ei - 1.083316) <= 1e-4
    verdict(3, "GP regression", ok,
            f"interpolation {worst_interp:.2e} (<=1e-6; fitted noise > 1e-8 on datasets {noisy}, "
            f"worst {worst_quiet:.2e} on the rest), LML vs dense {worst_lml:.2e} (<=1e-8), "
            f"EI(1,1,0) = {ei:.6f}")


def test_criterion_4_bound_arithmetic(verdict):
    d = acoustic_domain()
    best_x = d.lower + d.width / 2
    best_x[0], best_x[1] = 7.0, 10.0
    X = np.tile(best_x, (5, 1))
    X[:, 0] = [3.0, 7.0, 9.0, 12.0, 14.0]
    X[:, 1] = [4.0, 10.0, 11.0, 13.0, 15.0]
    phi = np.zeros((5, 10))
    phi[:, 0] = [-0.5, 0.2, 0.4, 0.7, 0.9]
    phi[:, 1] = [-0.6, 0.3, 0.5, 0.8, 1.0]
    report = ShapReport(0.0, phi, (1, 0, 2, 3, 4, 5, 6, 7, 8, 9), X, d.names)
    best = EvaluatedSample(best_x, 1.0)
    plain, _ = shap_refine(d, report, best)
    rounded, _ = shap_refine(d, report, best, grid=1.0)
    coupled, _ = couple_keeping_incumbent(rounded, SLAB_COUPLING, best_x, 100)
    r2, r1, h = (float(v) for v in (plain.lower[1], rounded.lower[0], coupled.lower[d.index("h")]))
    ok = r2 == 9.0 and rounded.lower[1] == 9.0 and r1 == 6.0 and h == 54.0
    verdict(4, "bound arithmetic", ok, f"r2 lower {r2!r}, r1 lower (1 mm grid) {r1!r}, h lower {h!r}")


def _fuzz_report(gen, domain, best_x, n):
    X = domain.lower + gen.uniform(size=(n, domain.dim)) * domain.width
    X[int(gen.integers(n))] = best_x
    phi = gen.normal(size=(n, domain.dim))
    for j in range(domain.dim):
        # roughly half the features get a clean one-sided pattern
        if gen.uniform() < 0.5:
            sign = 1 if gen.uniform() < 0.5 else -1
            phi[:, j] = np.where(sign * (X[:, j] - best_x[j]) > 0, np.abs(phi[:, j]), -np.abs(phi[:, j]))
            phi[X[:, j] == best_x[j], j] = abs(gen.normal()) + 1e-3
    order = tuple(int(j) for j in np.argsort(-np.abs(phi).mean(0), kind="stable"))
    return ShapReport(0.0, phi, order, X, domain.names)


def test_criterion_5_domain_safety(verdict):
    gen = np.random.default_rng(5)
    violations = 0
    for call in range(500):
        kind = call % 3
        if kind == 2:
            original = acoustic_domain()
        else:
            D = int(gen.integers(1, 11))
            lo = gen.uniform(-50, 50, D)
            original = SearchDomain.from_bounds(np.column_stack([lo, lo + gen.uniform(0.1, 100, D)]))
        # a random sub-box as the current domain
        a = original.lower + gen.uniform(0, 0.4, original.dim) * original.width
        b = original.upper - gen.uniform(0, 0.4, original.dim) * original.width
        current = original.replace(lower=a, upper=b)
        best_x = current.lower + gen.uniform(size=current.dim) * current.width
        if gen.uniform() < 0.1:
            best_x = np.where(gen.uniform(size=current.dim) < 0.5, current.lower, current.upper)
        best = EvaluatedSample(best_x, 0.0)
        if kind == 0:
            new = trust_region_reduce(current, original, best, gamma=float(gen.uniform(0.05, 1.0)))
        else:
            report = _fuzz_report(gen, current, best_x, int(gen.integers(2, 40)))
            grid = None if gen.uniform() < 0.5 else float(gen.choice([0.1, 1.0, 5.0]))
            new, _ = shap_refine(current, report, best, margin=float(gen.uniform(0.01, 0.9)),
                                 top_k=int(gen.integers(1, 11)), grid=grid)
            if kind == 2:
                new, _ = couple_keeping_incumbent(new, SLAB_COUPLING, best_x, call)
        if not (new.is_subset_of(original) and contains(new, best_x)):
            violations += 1
    verdict(5, "domain safety", violations == 0, f"{violations} violations in 500 fuzzed refinements")


@pytest.mark.slow
def test_criterion_6_determinism(verdict):
    toy = get_objective("toy2d")
    pu = get_objective("synthetic-pu")
    runs = [
        (toy, ProtocolConfig("shap", budget=400, seed=7, mlp_epochs=200)),
        (pu, ProtocolConfig("trust-region", budget=130, n_init=100, refine_iterations=(100, 115), seed=3)),
        (pu, ProtocolConfig("shap", budget=110, n_init=100, refine_iterations=(100,), seed=4)),
    ]
    worst = 0.0
    sizes = []
    for obj, cfg in runs:
        a = run_protocol(obj, cfg)
        b = run_protocol(obj, cfg)
        worst = max(worst, float(np.max(np.abs(a.best_curve - b.best_curve))))
        sizes.append((cfg.budget, len(a.samples), len(a.best_curve)))
    exact = all(budget == n == m for budget, n, m in sizes)
    ok = worst <= 1e-12 and exact and sizes[0][0] == 400
    verdict(6, "determinism", ok,
            f"max repeat difference {worst:.1e} (<=1e-12); budget/samples/curve {sizes}")


def _lpt_makespan(durations, workers):
    loads = [0.0] * workers
    for d in sorted(durations, reverse=True):
        heapq.heapreplace(loads, loads[0] + d)
        heapq.heapify(loads)
    return max(loads)


@pytest.mark.slow
def test_criterion_7_statistical_reproduction(verdict):
    pu = get_objective("synthetic-pu")
    base = dict(budget=200, n_init=100, refine_iterations=(100, 150))
    configs = [ProtocolConfig(p, **base) for p in ("standard", "shap", "trust-region")]
    seeds = list(range(20))
    durations = []
    traces = {}
    wall = time.perf_counter()
    n_jobs = os.cpu_count() or 1
    if n_jobs > 1:
        grouped = run_many(pu, configs, seeds, n_jobs=n_jobs)
        for cfg, group in zip(configs, grouped):
            for tr in group:
                traces[(cfg.protocol.value, tr.config.seed)] = tr
    else:
        for s in seeds:
            for cfg in configs:
                t0 = time.perf_counter()
                traces[(cfg.protocol.value, s)] = run_protocol(pu, dataclasses.replace(cfg, seed=s))
                durations.append(time.perf_counter() - t0)
    wall = time.perf_counter() - wall

    final = {p: np.array([traces[(p, s)].final_best for s in seeds])
             for p in ("standard", "shap", "trust-region")}
    med = {p: float(np.median(v)) for p, v in final.items()}
    limit = 2 * 200 // 3
    fast = sum(
        1 for s in seeds
        if (k := iterations_to_reference(traces[("shap", s)], traces[("standard", s)].final_best))
        is not None and k <= limit
    )
    a = med["shap"] >= med["standard"]
    b = fast >= 0.6 * len(seeds)
    c = med["trust-region"] >= med["standard"]
    if durations:
        est = _lpt_makespan(durations, 8)
        runtime = f"measured {wall:.0f}s on 1 core, 8-worker estimate {est:.0f}s (<=900s)"
    else:
        est = wall
        runtime = f"{wall:.0f}s on {n_jobs} workers (<=900s)"
    ok = a and b and c and est <= 900
    verdict(7, "statistical reproduction", ok,
            f"(a) median ShapBO {med['shap']:.4f} vs Standard {med['standard']:.4f} "
            f"{'ok' if a else 'FAILED'}; (b) ShapBO hit Standard's final best within {limit} evals "
            f"in {fast}/20 seeds (need 12) {'ok' if b else 'FAILED'}; "
            f"(c) median TrustRegion {med['trust-region']:.4f} {'ok' if c else 'FAILED'}; {runtime}")


@pytest.mark.slow
def test_criterion_8_toy2d_sanity(verdict):
    toy = get_objective("toy2d")
    cfg = ProtocolConfig("shap", budget=60, n_init=20, refine_iterations=(20,))
    traces = run_many(toy, [cfg], list(range(20)), n_jobs=os.cpu_count() or 1)[0]
    finals = np.array([t.final_best for t in traces])
    hits = int(np.sum(finals >= 0.95 * TOY2D_GRID_MAX))
    verdict(8, "toy2d sanity", hits >= 15,
            f"{hits}/20 seeds within 5% of the grid maximum {TOY2D_GRID_MAX:.6f} "
            f"(need 15); finals range {finals.min():.4f}..{finals.max():.4f}")
