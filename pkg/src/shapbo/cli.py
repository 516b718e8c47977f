"""Command-line entry point: ``shapbo run | compare | shap-report``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import harness
from .core import Dataset
from .harness import Protocol, ProtocolConfig, RngStream
from .problems import OBJECTIVES, get_objective


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0,4,7"`` or an inclusive range ``"0..19"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return seeds


def parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _schedule(args, budget: int) -> tuple[int, ...]:
    if args.refine_at is not None:
        return args.refine_at
    return tuple(i for i in harness.DEFAULT_REFINE_AT if i < budget)


def _base_config(args, protocol) -> ProtocolConfig:
    return ProtocolConfig(
        protocol=protocol,
        budget=args.budget,
        n_init=args.n_init,
        refine_iterations=_schedule(args, args.budget),
        margin=args.margin,
        top_k=args.top_k,
        trust_gamma=args.trust_gamma,
        mlp_epochs=args.mlp_epochs,
        train_filtering=args.train_filtering,
        grid=args.grid,
    )


def cmd_run(args) -> int:
    objective = get_objective(args.problem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _base_config(args, Protocol(args.protocol))
    traces = harness.run_many(objective, [config], args.seeds, n_jobs=args.jobs)[0]
    for tr in traces:
        tr.save(out / f"trace_{args.problem}_{args.protocol}_seed{tr.config.seed}.json")
        print(f"seed {tr.config.seed}: final best {tr.final_best!r}")
    harness.write_convergence_csv({args.protocol: traces}, out / "convergence.csv")
    return 0


def cmd_compare(args) -> int:
    objective = get_objective(args.problem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [args.base_seed + i for i in range(args.n_seeds)]
    configs = [_base_config(args, p) for p in Protocol]
    rows, traces = harness.compare_protocols(objective, configs, seeds, n_jobs=args.jobs)
    for cfg, group in zip(configs, traces):
        for tr in group:
            tr.save(out / f"trace_{args.problem}_{cfg.protocol.value}_seed{tr.config.seed}.json")
    harness.write_convergence_csv(
        {cfg.protocol.value: group for cfg, group in zip(configs, traces)}, out / "convergence.csv"
    )
    harness.write_summary_csv(rows, out / "summary.csv")
    for r in rows:
        print(f"{r['protocol']:>13}: {r['mean_final_best']:.4f} +- {r['std_final_best']:.4f}"
              f"  reached reference in {r['fraction_reaching_reference']:.0%} of seeds")
    return 0


def cmd_shap_report(args) -> int:
    """Run up to ``--at-iteration`` evaluations, then explain that dataset."""
    objective = get_objective(args.problem)
    schedule = tuple(i for i in _schedule(args, args.at_iteration) if i < args.at_iteration)
    config = _base_config(args, Protocol(args.protocol))
    config = dataclasses.replace(config, budget=args.at_iteration, refine_iterations=schedule,
                                 seed=args.seed)
    if config.n_init is None:
        config = dataclasses.replace(config, n_init=min(10 * objective.domain.dim, args.at_iteration - 1))
    trace = harness.run_protocol(objective, config)
    data = Dataset(objective.domain, trace.samples)
    report = harness.shap_report_for(data, config, RngStream(args.seed), args.at_iteration)
    report.to_csv(args.out)
    ranked = ", ".join(objective.domain.names[j] for j in report.feature_order)
    print(f"wrote {args.out}; features by mean |SHAP|: {ranked}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapbo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, budget_default=400):
        sp.add_argument("--problem", choices=sorted(OBJECTIVES), required=True)
        sp.add_argument("--budget", type=int, default=budget_default)
        sp.add_argument("--n-init", type=int, default=None, help="default: 10 x dimension")
        sp.add_argument("--refine-at", type=parse_ints, default=None,
                        help="comma-separated iterations (default 100,150,...,350 below budget)")
        sp.add_argument("--margin", type=float, default=0.1)
        sp.add_argument("--top-k", type=int, default=6)
        sp.add_argument("--trust-gamma", type=float, default=0.7)
        sp.add_argument("--mlp-epochs", type=int, default=500)
        sp.add_argument("--grid", type=float, default=None, help="round refined bounds outward")
        sp.add_argument("--train-filtering", action="store_true",
                        help="fit the GP only on samples inside the current domain")
        sp.add_argument("--jobs", type=int, default=1)

    run = sub.add_parser("run", help="run one protocol over several seeds")
    common(run)
    run.add_argument("--protocol", choices=[p.value for p in Protocol], required=True)
    run.add_argument("--seeds", type=parse_seeds, default=[0])
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run all protocols and summarize")
    common(cmp_)
    cmp_.add_argument("--n-seeds", type=int, default=20)
    cmp_.add_argument("--base-seed", type=int, default=0)
    cmp_.add_argument("--out", required=True)
    cmp_.set_defaults(func=cmd_compare)

    rep = sub.add_parser("shap-report", help="dump per-sample SHAP values as CSV")
    common(rep)
    rep.add_argument("--protocol", choices=[p.value for p in Protocol], default="standard")
    rep.add_argument("--at-iteration", type=int, required=True)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_shap_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
