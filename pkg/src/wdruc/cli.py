"""Command-line entry point: ``wdruc run | solve | eval | gen-samples``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .experiments import (MODELS, ExperimentConfig, ModelResult, SolverSettings, generate_samples, load_case,
                          run_comparison, solve_model)
from .affine import evaluate_ranges
from .solver import available_backends, set_default_backend
from .system import DataError, uncertainty_box
from .wasserstein import load_samples, save_samples


def _solver_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("solver")
    g.add_argument("--mip-gap", type=float)
    g.add_argument("--time-limit", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--ccg-gap", type=float)
    g.add_argument("--ccg-max-iter", type=int)
    g.add_argument("--backend", choices=("highs", "glpk"))


def _case_flags(p: argparse.ArgumentParser):
    p.add_argument("--system", help="system JSON (default: bundled 6-bus case)")
    p.add_argument("--forecast", help="forecast CSV matching --system")


def _settings(args, base: SolverSettings | None = None) -> SolverSettings:
    st = base or SolverSettings()
    over = {k: getattr(args, k) for k in ("mip_gap", "time_limit", "seed", "ccg_gap", "ccg_max_iter")
            if getattr(args, k, None) is not None}
    return replace(st, **over)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wdruc", description="Unit commitment under Wasserstein ambiguity.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a model comparison from a YAML/JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--full", action="store_true", help="use 50 seeds instead of the configured set")
    p.add_argument("--workers", type=int)
    p.add_argument("--output")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float)
    _solver_flags(p)

    p = sub.add_parser("solve", help="solve one model and emit a solution JSON")
    p.add_argument("--model", required=True, choices=MODELS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float, default=100.0)
    p.add_argument("--samples", help="sample CSV (needed by suc, ewdruc, awdruc)")
    p.add_argument("--out", help="write JSON here instead of stdout")
    _case_flags(p)
    _solver_flags(p)

    p = sub.add_parser("eval", help="evaluate a solution JSON on a scenario CSV")
    p.add_argument("--solution", required=True)
    p.add_argument("--scenarios", required=True)
    _case_flags(p)

    p = sub.add_parser("gen-samples", help="draw forecast-error samples")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-ratio", type=float, default=0.2)
    p.add_argument("--untruncated", action="store_true", help="skip truncation to the box (evaluation draws)")
    p.add_argument("--out", required=True)
    _case_flags(p)
    return ap


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.full:
        cfg.seeds = tuple(range(50))
    if args.workers:
        cfg.workers = args.workers
    if args.output:
        cfg.output = args.output
    if args.epsilon is not None:
        cfg.epsilon = args.epsilon
    if args.beta is not None:
        cfg.beta = args.beta
    if args.backend:
        cfg.backend = args.backend
    cfg.solver = _settings(args, cfg.solver)
    if cfg.backend:
        set_default_backend(cfg.backend)
    report = run_comparison(cfg)
    json.dump(report.aggregates(), sys.stdout, indent=1, sort_keys=True)
    print()
    failed = [r for r in report.rows if str(r["status"]).startswith("error")]
    return 1 if failed and len(failed) == len(report.rows) else 0


def cmd_solve(args) -> int:
    system, forecast = load_case(args.system, args.forecast)
    wf = forecast.aligned(system)
    box = uncertainty_box(system, forecast)
    samples = None
    if args.model in ("suc", "ewdruc", "awdruc"):
        if not args.samples:
            raise DataError(f"--samples is required for {args.model}")
        samples = load_samples(args.samples, system, box)
    if args.model in ("ewdruc", "awdruc") and args.epsilon is None:
        raise DataError(f"--epsilon is required for {args.model}")
    res = solve_model(args.model, system, wf, box, samples, args.epsilon, args.beta, _settings(args))
    doc = res.to_dict()
    doc.update(system=args.system, forecast=args.forecast, beta=args.beta if args.epsilon is not None else None)
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_eval(args) -> int:
    doc = json.loads(Path(args.solution).read_text())
    system, forecast = load_case(args.system or doc.get("system"), args.forecast or doc.get("forecast"))
    wf = forecast.aligned(system)
    scen = load_samples(args.scenarios, system)
    res = ModelResult.from_dict(doc)
    ev = evaluate_ranges(res, system, wf, scen.values)
    per = ev.pop("per_scenario")
    ev["max_cost"] = float(np.max(per))
    print(json.dumps(ev, indent=1))
    return 0


def cmd_gen_samples(args) -> int:
    system, forecast = load_case(args.system, args.forecast)
    wf = forecast.aligned(system)
    box = None if args.untruncated else uncertainty_box(system, forecast)
    ids = tuple(u.id for u in system.reg_units)
    s = generate_samples(wf, args.sigma_ratio, args.count, args.seed, box, ids)
    save_samples(args.out, s)
    return 0


COMMANDS = {"run": cmd_run, "solve": cmd_solve, "eval": cmd_eval, "gen-samples": cmd_gen_samples}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "backend", None):
        if args.backend not in available_backends():
            print(f"error: backend {args.backend} is not installed", file=sys.stderr)
            return 2
        set_default_backend(args.backend)
    try:
        return COMMANDS[args.command](args)
    except (DataError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
