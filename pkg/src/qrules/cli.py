"""Command line entry point: ``qrules <subcommand> ...``.

Exit codes: 0 success or equal, 1 not equal, 2 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, nondemolition
from .harness import Mode, compare, enumerate_outcomes, run_trials
from .rules import OBSERVER, Regime, RuleSet
from .scenario import CATALOG, ScenarioError, load, validate
from .state import ReductionError

EXIT_OK, EXIT_DIFFERENT, EXIT_ERROR = 0, 1, 2


def _emit(payload: dict | str, out: str | None) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _rules(args) -> RuleSet:
    return RuleSet(Regime(args.regime), rule4=not getattr(args, "no_rule4", False))


def cmd_run(args) -> int:
    s = load(args.scenario)
    dist = run_trials(s, _rules(args), args.trials, seed=args.seed, include_timing=args.include_timing)
    if args.csv:
        _emit(dist.to_csv(), args.out)
    else:
        _emit({"scenario": s.name, "regime": args.regime, "trials": args.trials, "seed": args.seed,
               "distribution": dist.to_json()}, args.out)
    return EXIT_OK


def cmd_enumerate(args) -> int:
    s = load(args.scenario)
    dist = enumerate_outcomes(s, _rules(args), time_slices=args.slices)
    if args.csv:
        _emit(dist.to_csv(), args.out)
    else:
        _emit({"scenario": s.name, "regime": args.regime, "slices": args.slices,
               "distribution": dist.to_json()}, args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    s = load(args.scenario)
    mode = Mode(args.mode)
    objective = RuleSet(Regime.OBJECTIVE, rule4=not args.no_rule4)
    if mode is Mode.EXACT:
        a = enumerate_outcomes(s, OBSERVER, time_slices=args.slices)
        b = enumerate_outcomes(s, objective, time_slices=args.slices)
    else:
        a = run_trials(s, OBSERVER, args.trials, seed=args.seed)
        b = run_trials(s, objective, args.trials, seed=args.seed + 1)
    verdict = compare(a, b, mode, tvd_tol=args.tvd_tol, p_threshold=args.p_threshold)
    _emit({"scenario": s.name, "verdict": verdict.to_json(),
           "observer": a.to_json(), "objective": b.to_json()}, args.out)
    return EXIT_OK if verdict.equal else EXIT_DIFFERENT


def cmd_nondemolition(args) -> int:
    force = frozenset(x for x in (args.force_reduction or "").split(",") if x)
    run = nondemolition.run_nondemolition(Regime(args.regime), seed=args.seed, force_reduction=force)
    payload = {
        "regime": args.regime,
        "record": run.record.to_json(),
        "eligibility": run.eligibility,
        "fidelity_after_B": run.fidelity_after_B,
        "events": run.events,
    }
    if args.snapshots:
        payload["snapshots"] = run.snapshots
    _emit(payload, args.out)
    return EXIT_OK


def cmd_list(args) -> int:
    for name in CATALOG:
        print(name)
    return EXIT_OK


def cmd_validate(args) -> int:
    s = load(args.file)
    diags = validate(s)
    for d in diags:
        print(d)
    bad = [d for d in diags if d.severity == "violation"]
    if not bad:
        print(f"{s.name}: ok")
    return EXIT_ERROR if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrules", description="Reduction-rule scenarios under observer and objective regimes.")
    sub = p.add_subparsers(dest="command", required=True)

    def regime(sp):
        sp.add_argument("--regime", choices=[r.value for r in Regime], required=True)

    def output(sp, csv=True):
        sp.add_argument("--out", help="write to this file instead of stdout")
        if csv:
            sp.add_argument("--csv", action="store_true", help="record,probability rows instead of JSON")

    sp = sub.add_parser("run", help="seeded Monte Carlo trials")
    sp.add_argument("scenario", help="catalog name or .rsc path")
    regime(sp)
    sp.add_argument("--trials", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--include-timing", action="store_true", help="experimental: mean time of last acquisition per record")
    sp.add_argument("--no-rule4", action="store_true", help="mutant: drop the anomalous-capture filter")
    output(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("enumerate", help="exact outcome distribution")
    sp.add_argument("scenario")
    regime(sp)
    sp.add_argument("--slices", type=int, default=64)
    sp.add_argument("--no-rule4", action="store_true")
    output(sp)
    sp.set_defaults(func=cmd_enumerate)

    sp = sub.add_parser("compare", help="observer vs objective regime")
    sp.add_argument("scenario")
    sp.add_argument("--mode", choices=[m.value for m in Mode], default="exact")
    sp.add_argument("--slices", type=int, default=64)
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tvd-tol", type=float, default=harness.EXACT_TVD_TOL)
    sp.add_argument("--p-threshold", type=float, default=harness.MC_P_THRESHOLD)
    sp.add_argument("--no-rule4", action="store_true", help="mutant: objective regime without rule 4")
    output(sp, csv=False)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("nondemolition", help="spin-pair nondemolition protocol")
    regime(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--snapshots", action="store_true", help="include per-event amplitudes")
    sp.add_argument("--force-reduction", metavar="EVENTS", help="mutant: comma list of events forced to reduce")
    output(sp, csv=False)
    sp.set_defaults(func=cmd_nondemolition)

    sp = sub.add_parser("list", help="catalog scenario names")
    sp.set_defaults(func=cmd_list)

    sp = sub.add_parser("validate", help="parse and check a .rsc file")
    sp.add_argument("file")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ReductionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
