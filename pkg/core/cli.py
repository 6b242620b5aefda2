#!/usr/bin/env python3
"""
LiftGuard command-line interface.
Loads a model, lifts it over its schedule and runs the analysis, synthesis,
simulation and UAS commands. Exit codes: 0 success, 1 error, 2 vulnerable
or not identifiable under --strict.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .config import get_log_level
from .detect import analyze_detectability, compute_thresholds
from .errors import LiftGuardError, SynthesisError
from .identify import check_identifiable
from .model import LiftedPlant, NominalModel, SensorSchedule, ball_noise, lift, simulate
from .serialization import (
    identifiability_to_dict,
    load_model,
    load_plan,
    load_schedule,
    plan_to_dict,
    plant_to_dict,
    report_to_dict,
    save_plan,
    thresholds_to_dict,
    write_json,
    write_subspace_csv,
    write_trace_csv,
)
from .subspace import controllable_subspace
from .synth import synthesize
from .uas_fixture import run_all

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2

COMMANDS = ("lift", "detectability", "identifiability", "synth", "simulate", "thresholds", "uas-demo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liftguard",
        description="Detectability, attack synthesis and mode identification for lifted multi-rate plants.",
    )
    parser.add_argument("command", choices=COMMANDS, help="what to run")
    parser.add_argument("--model", help="model JSON file (required except for uas-demo)")
    parser.add_argument("--schedule", help="schedule JSON file; overrides the model's schedule")
    parser.add_argument("--mode", help="attack mode id (default: every mode for detectability)")
    parser.add_argument("--modes", help="comma-separated mode ids for identifiability (default: all)")
    parser.add_argument("--horizon", type=int, default=None,
                        help="frames to simulate (default 100) or threshold truncation horizon")
    parser.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    parser.add_argument("--tol", type=float, default=None, help="residual tolerance override")
    parser.add_argument("--out", help="output directory (default: print JSON to stdout)")
    parser.add_argument("--strict", action="store_true",
                        help="exit 2 when a mode is vulnerable or the modes are not identifiable")
    parser.add_argument("--plan", help="attack plan JSON for simulate")
    parser.add_argument("--target", type=float, default=10.0, help="target severity for synth (default 10)")
    parser.add_argument("--budget", type=float, default=1e-3, help="stealth budget on |y| for synth (default 1e-3)")
    parser.add_argument("--noise", type=float, default=0.0,
                        help="noise bound |w_k| (default 0 for simulate, 1 for thresholds and uas-demo)")
    parser.add_argument("--runs", type=int, default=100, help="noise-only runs in uas-demo (default 100)")
    parser.add_argument("--dump-subspaces", action="store_true",
                        help="write V, C and V* bases as CSV next to the detectability report")
    parser.add_argument("--log-level", default=None, help="log level (default: $LIFTGUARD_LOG or WARNING)")
    return parser


def _load_plant(args) -> LiftedPlant:
    if not args.model:
        raise LiftGuardError(f"{args.command} needs --model")
    model, schedule = load_model(args.model)
    if args.schedule:
        schedule = load_schedule(args.schedule)
    if schedule is None:
        schedule = _single_rate(model)
    return lift(model, schedule)


def _single_rate(model: NominalModel) -> SensorSchedule:
    return SensorSchedule(1, {s.name: (0,) for s in model.sensors})


def _emit(args, name: str, data: Dict):
    if args.out:
        write_json(Path(args.out) / name, data)
    else:
        print(json.dumps(data, indent=2, sort_keys=True))


def cmd_lift(args) -> int:
    plant = _load_plant(args)
    _emit(args, "lifted.json", plant_to_dict(plant))
    return EXIT_OK


def cmd_detectability(args) -> int:
    plant = _load_plant(args)
    modes = [args.mode] if args.mode else plant.mode_ids
    reports = []
    for mode in modes:
        report = analyze_detectability(plant, mode, tol=args.tol)
        reports.append(report_to_dict(report))
        if args.dump_subspaces and args.out:
            folder = Path(args.out) / f"subspaces_{mode}"
            ch = plant.channels(mode)
            write_subspace_csv(folder / "v.csv", report.v)
            write_subspace_csv(folder / "controllable.csv", controllable_subspace(ch.a, ch.b))
            write_subspace_csv(folder / "v_star.csv", report.v_star)
    _emit(args, "detectability.json", {"reports": reports})
    vulnerable = [r["mode"] for r in reports if r["verdict"] == "vulnerable"]
    if vulnerable:
        logger.warning(f"vulnerable modes: {vulnerable}")
    return EXIT_FLAGGED if args.strict and vulnerable else EXIT_OK


def cmd_identifiability(args) -> int:
    plant = _load_plant(args)
    modes = [q.strip() for q in args.modes.split(",") if q.strip()] if args.modes else None
    report = check_identifiable(plant, modes, tol=args.tol)
    _emit(args, "identifiability.json", identifiability_to_dict(report))
    return EXIT_FLAGGED if args.strict and not report.identifiable else EXIT_OK


def cmd_synth(args) -> int:
    if not args.mode:
        raise LiftGuardError("synth needs --mode")
    plant = _load_plant(args)
    report = analyze_detectability(plant, args.mode, tol=args.tol, with_bound=False)
    if not report.vulnerable:
        raise SynthesisError(f"mode {args.mode} is detectable; no stealthy severe attack exists")
    plan = synthesize(plant, report, target_severity=args.target, epsilon_budget=args.budget)
    if args.out:
        save_plan(Path(args.out) / "plan.json", plan)
    else:
        print(json.dumps(plan_to_dict(plan), indent=2, sort_keys=True))
    return EXIT_OK


def certificate_gap(plan, trace) -> Dict[str, float]:
    """Largest relative gap between simulated and certified severities, and the peak output."""
    gap = 0.0
    for k in range(trace.horizon):
        predicted = plan.predicted_severity(k)
        if predicted is None:
            continue
        scale = max(1.0, float(np.linalg.norm(predicted)))
        gap = max(gap, float(np.linalg.norm(trace.z[k] - predicted)) / scale)
    return {"severity_gap": gap, "max_output_norm": float(trace.y_norms.max()) if trace.horizon else 0.0,
            "stealth_bound": plan.certificate.stealth_bound}


def cmd_simulate(args) -> int:
    plant = _load_plant(args)
    horizon = 100 if args.horizon is None else args.horizon
    plan = load_plan(args.plan) if args.plan else None
    mode = args.mode or (plan.mode if plan is not None else None)
    noise = None
    if args.noise > 0:
        noise = ball_noise(np.random.default_rng(args.seed), horizon, plant.n_noise, args.noise)
    trace = simulate(plant, mode, attack=plan, noise=noise, horizon=horizon)
    summary = {"mode": mode, "horizon": horizon, "max_severity_norm": float(trace.z_norms.max()) if horizon else 0.0}
    if plan is not None:
        summary.update(certificate_gap(plan, trace))
    if args.out:
        write_trace_csv(Path(args.out) / "trace.csv", trace, plant.output_labels, plant.severity_labels)
    _emit(args, "simulation.json", summary)
    return EXIT_OK


def cmd_thresholds(args) -> int:
    if not args.mode:
        raise LiftGuardError("thresholds needs --mode")
    plant = _load_plant(args)
    noise = args.noise if args.noise > 0 else 1.0
    thresholds = compute_thresholds(plant, args.mode, horizon=args.horizon, noise_bound=noise)
    _emit(args, "thresholds.json", thresholds_to_dict(thresholds))
    return EXIT_OK


def cmd_uas_demo(args) -> int:
    out = args.out or "uas_results"
    noise = args.noise if args.noise > 0 else 1.0
    summary = run_all(out, seed=args.seed, noise_bound=noise, runs=args.runs, progress=True)
    print(f"UAS experiments written to {out}")
    for name, result in summary.items():
        if "final_estimate" in result:
            print(f"  {name}: estimate {result['final_estimate']}")
    return EXIT_OK


HANDLERS = {
    "lift": cmd_lift,
    "detectability": cmd_detectability,
    "identifiability": cmd_identifiability,
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "thresholds": cmd_thresholds,
    "uas-demo": cmd_uas_demo,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        level = get_log_level(args.log_level)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except LiftGuardError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
