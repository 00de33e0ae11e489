"""Command-line entry point: ``run``, ``check`` and ``sweep``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .exceptions import QuadMpcError
from .harness import emit, prepare, run_scenario
from .scenario import VARIANTS, builtin_names, builtin_scenario, load_scenario

log = logging.getLogger("quadmpc")


def _load(spec: str):
    path = Path(spec)
    if path.is_file():
        return load_scenario(path)
    if spec in builtin_names():
        return builtin_scenario(spec)
    raise QuadMpcError(f"scenario {spec!r} is neither a file nor a builtin ({', '.join(builtin_names())})")


def _print_summary(result) -> None:
    rm = ", ".join(f"{v:.4f}" for v in result.rmse)
    print(f"{result.scenario.name} [{result.scenario.variant}] rmse = [{rm}] m")
    print(f"  solve time mean {result.solve_ms_mean:.2f} ms, max {result.solve_ms_max:.2f} ms")
    v = result.violations
    print(
        f"  a_d bound violations {v['ad_bound']}, thrust {v['thrust']}, clamps {v['thrust_clamp']}, "
        f"empty intervals {v['interval_empty']}, fallbacks {result.counters['fallback']}"
    )


def cmd_run(args) -> int:
    scn = _load(args.scenario)
    if args.variant:
        scn = scn.with_variant(args.variant)
    if args.seed is not None:
        scn = scn.with_seed(args.seed)
    if args.duration is not None:
        scn = dataclasses.replace(scn, duration=args.duration)
    result = run_scenario(scn, timing=args.timing)
    paths = emit(result, args.out)
    _print_summary(result)
    for kind, p in paths.items():
        print(f"  wrote {kind}: {p}")
    return 0


def cmd_check(args) -> int:
    scn = _load(args.scenario)
    if args.variant:
        scn = scn.with_variant(args.variant)
    setup = prepare(scn)
    report = {
        "scenario": scn.name,
        "variant": scn.variant,
        "t_bar_range": list(setup.t_bar_range),
        "delta_range": [float(setup.schedule.min()), float(setup.schedule.max())],
        "feasibility_margin": setup.feasibility_margin,
        "axes": [
            {
                "axis": a,
                "kappa": c.kappa,
                "lambda": c.lambda_coeff,
                "theta": c.theta_coeff,
                "delta_star": c.delta_star,
                "l_u": c.l_u,
            }
            for a, c in zip("xyz", setup.certs)
        ],
    }
    print(json.dumps(report, indent=2))
    return 0


def _sweep_one(job):
    path, out, variant = job
    scn = load_scenario(path)
    if variant:
        scn = scn.with_variant(variant)
    result = run_scenario(scn)
    emit(result, out)
    return scn.name, scn.variant, [float(v) for v in result.rmse]


def cmd_sweep(args) -> int:
    paths = sorted(Path(args.scenarios).glob("*.cfg"))
    if not paths:
        print(f"no .cfg files in {args.scenarios}", file=sys.stderr)
        return 2
    variants = VARIANTS if args.both else (args.variant or None,)
    jobs = [(p, args.out, v) for p in paths for v in variants]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    for name, variant, rm in results:
        print(f"{name:20s} {variant}  rmse = [{', '.join(f'{v:.4f}' for v in rm)}]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadmpc", description="Cascade MPC quadcopter scenario runner")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario and write CSV/JSON")
    run.add_argument("--scenario", required=True, help="scenario file or builtin name")
    run.add_argument("--out", required=True)
    run.add_argument("--variant", choices=VARIANTS)
    run.add_argument("--seed", type=int)
    run.add_argument("--duration", type=float, help="override sim.duration (s)")
    run.add_argument("--timing", action="store_true", help="log per-step solve time (breaks byte-identical output)")
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("check", help="reference feasibility and certificates only")
    check.add_argument("--scenario", required=True)
    check.add_argument("--variant", choices=VARIANTS)
    check.set_defaults(func=cmd_check)

    sweep = sub.add_parser("sweep", help="run every .cfg file in a directory")
    sweep.add_argument("--scenarios", required=True)
    sweep.add_argument("--out", default="sweep_out")
    sweep.add_argument("--variant", choices=VARIANTS)
    sweep.add_argument("--both", action="store_true", help="run both variants")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except QuadMpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
