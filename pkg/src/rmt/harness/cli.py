"""Command-line entry point ``rmt``.

Exit codes: 0 success, 2 usage or config error, 3 experiment error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

from rmt.contamination import read_dataset
from rmt.core import RngStream
from rmt.errors import ArgumentError, ConfigError, ExperimentError, PreconditionError, RMTError
from rmt.harness.config import Constants, PhaseGrid, Tester, load_config, load_phase
from rmt.harness.experiments import (
    CALIBRATION_COLUMNS,
    REPLAY_COLUMNS,
    calibrate,
    replay,
    run_power_experiment,
    write_csv,
)
from rmt.harness.phase import phase_svg, sweep_phase_diagram
from rmt.lower_bounds import (
    HuberLBConfig,
    LowDegreeConfig,
    MomentMode,
    ObliviousLBConfig,
    huber_chi2_estimate,
    identity_check_suite,
    lowdegree_norm_bound,
    oblivious_chi2_estimate,
)

EXIT_OK, EXIT_CONFIG, EXIT_EXPERIMENT = 0, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, help="output file (default: stdout)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmt", description="Robust mean testing experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("power", help="Monte Carlo size and power")
    _common(p)
    p.add_argument("--replay", type=Path, help="run the tester once on a stored binary dataset")
    p.add_argument("--tester", choices=[t.value for t in Tester])
    p.add_argument("--alpha", type=float, help="alpha for --replay")
    p.add_argument("--trials", type=int)

    p = sub.add_parser("phase", help="phase diagram CSV and SVG")
    _common(p)
    p.add_argument("--d", type=int)
    p.add_argument("--no-meta", action="store_true", help="omit the timestamp comment in the SVG")

    for name, helptext in (("chi2-huber", "Huber chi-square second moment"), ("chi2-oblivious", "oblivious chi-square second moment")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--d", type=int, required=True)
        p.add_argument("--eps", type=float, required=True)
        p.add_argument("--alpha", type=float, required=True)
        p.add_argument("--n", type=int, help="default: 0.01 times the rate at which the bound applies")
        p.add_argument("--draws", type=int, default=100_000)
        if name == "chi2-oblivious":
            p.add_argument("--beta", type=float)

    p = sub.add_parser("lowdeg", help="low-degree norm bound")
    _common(p)
    for flag, kind in (("--n", int), ("--d", int), ("--eps", float), ("--alpha", float), ("--degree", int)):
        p.add_argument(flag, type=kind, required=True)
    p.add_argument("--mode", choices=[m.value for m in MomentMode], default=MomentMode.EXACT.value)

    p = sub.add_parser("identity-check", help="determinant factoring identity on random draws")
    _common(p)
    p.add_argument("--draws", type=int, default=10_000)

    p = sub.add_parser("calibrate", help="desk-calibrate tester constants")
    _common(p)
    p.add_argument("--trials", type=int, default=50)
    return parser


def _emit(args, rows: list[dict], columns: Sequence[str]) -> None:
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        text = write_csv(rows, columns)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def _cmd_power(args) -> int:
    if args.replay is not None:
        cfg = load_config(args.config) if args.config else None
        tester = Tester(args.tester) if args.tester else (cfg.tester if cfg else Tester.ADAPTIVE_SPECTRAL)
        constants = cfg.constants if cfg else Constants()
        if args.alpha is None:
            if cfg is None:
                raise ConfigError("--replay needs --alpha or a config")
            alpha = cfg.grid[0].alpha
        else:
            alpha = args.alpha
        try:
            labeled = read_dataset(args.replay)
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {args.replay}: {exc.strerror}") from None
        except ArgumentError as exc:
            raise ConfigError(f"{args.replay}: {exc}") from None
        row = replay(tester, labeled, alpha, constants, _seed(args, cfg.seed if cfg else 0))
        _emit(args, [row], REPLAY_COLUMNS)
        return EXIT_OK
    if args.config is None:
        raise ConfigError("power needs --config (or --replay)")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    if args.tester is not None:
        cfg = replace(cfg, tester=Tester(args.tester))
    report = run_power_experiment(cfg, threads=args.threads)
    if args.format == "json":
        text = report.to_json() + "\n"
    else:
        text = report.to_csv()
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    return EXIT_OK


def _cmd_phase(args) -> int:
    grid = load_phase(args.config) if args.config else PhaseGrid()
    if args.d is not None:
        grid = replace(grid, d=args.d)
    rows = sweep_phase_diagram(grid)
    _emit(args, [asdict(r) for r in rows], ("eps", "alpha", "feasible", "dominant", "oblivious", "required_samples_oblivious", "adaptive", "separation"))
    if args.out is not None:
        args.out.with_suffix(".svg").write_text(phase_svg(rows, grid, meta=not args.no_meta))
    return EXIT_OK


def _chi2_row(args, est, n: int, extra: dict) -> dict:
    flags = "diverged" if est.diverged else ("pass" if est.passes() else "fail")
    row = {"d": args.d, "n": n, "eps": args.eps, "alpha": args.alpha, **extra, "estimate": est.estimate, "stderr": est.stderr, "draws": est.draws, "flags": flags}
    return row


def _cmd_chi2_huber(args) -> int:
    n = args.n if args.n is not None else max(1, round(0.01 * args.d * args.eps**3 / args.alpha**4))
    cfg = HuberLBConfig(n=n, d=args.d, eps=args.eps, alpha=args.alpha, trials=args.draws)
    est = huber_chi2_estimate(cfg, RngStream(_seed(args)).split("chi2-huber"))
    _emit(args, [_chi2_row(args, est, n, {})], ("d", "n", "eps", "alpha", "estimate", "stderr", "draws", "flags"))
    return EXIT_OK


def _cmd_chi2_oblivious(args) -> int:
    if args.n is not None:
        n = args.n
    else:
        d, e, a = args.d, args.eps, args.alpha
        n = max(1, round(0.01 * min(d ** (2 / 3) * e ** (2 / 3) / a ** (8 / 3), d * e / a**2)))
    cfg = ObliviousLBConfig(n=n, d=args.d, eps=args.eps, alpha=args.alpha, beta=args.beta, trials=args.draws)
    est = oblivious_chi2_estimate(cfg, RngStream(_seed(args)).split("chi2-oblivious"))
    row = _chi2_row(args, est, n, {"beta": est.extra.get("beta", math.nan)})
    _emit(args, [row], ("d", "n", "eps", "alpha", "beta", "estimate", "stderr", "draws", "flags"))
    return EXIT_OK


def _cmd_lowdeg(args) -> int:
    cfg = LowDegreeConfig(n=args.n, d=args.d, eps=args.eps, alpha=args.alpha, D=args.degree)
    value = lowdegree_norm_bound(cfg, MomentMode(args.mode))
    row = {"n": args.n, "d": args.d, "eps": args.eps, "alpha": args.alpha, "degree": args.degree, "mode": args.mode, "bound": value}
    _emit(args, [row], ("n", "d", "eps", "alpha", "degree", "mode", "bound"))
    return EXIT_OK


def _cmd_identity(args) -> int:
    passed, worst = identity_check_suite(args.draws, RngStream(_seed(args)).split("identity"))
    _emit(args, [{"draws": args.draws, "passed": passed, "max_rel_error": worst}], ("draws", "passed", "max_rel_error"))
    return EXIT_OK if passed == args.draws else EXIT_EXPERIMENT


def _cmd_calibrate(args) -> int:
    if args.config is None:
        raise ConfigError("calibrate needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    _emit(args, calibrate(cfg, trials=args.trials), CALIBRATION_COLUMNS)
    return EXIT_OK


COMMANDS = {
    "power": _cmd_power,
    "phase": _cmd_phase,
    "chi2-huber": _cmd_chi2_huber,
    "chi2-oblivious": _cmd_chi2_oblivious,
    "lowdeg": _cmd_lowdeg,
    "identity-check": _cmd_identity,
    "calibrate": _cmd_calibrate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ArgumentError, PreconditionError) as exc:
        print(f"rmt: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentError, RMTError) as exc:
        print(f"rmt: experiment error: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT


if __name__ == "__main__":
    sys.exit(main())
