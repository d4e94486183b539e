from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .bounds import energy_identity_residual
from .config import RunConfig, describe, model_from_config, parse_config, phi_from_config
from .experiments import (
    ModelValidationError,
    SWEEP_PARAMS,
    bounds_fields,
    default_phi_set,
    report_fields,
    run_decomposition,
    run_dependence,
    run_pullback,
    run_regularity,
    run_simulation,
    run_sweep,
    validated,
)
from .logging import attach_file_logging, configure_logging, detach_file_logging
from .model import LowpassForcing, ModelSpec, validate_model
from .report import trajectory_columns, write_report_file, write_svg, write_trajectory_csv
from .solver import SystemKind, Trajectory

log = logging.getLogger("attractorlab.cli")

EXIT_PASS = 0
EXIT_FAULT = 1
EXIT_FAILED = 2

DEFAULT_TAUS = "-5,-10,-20,-40"
DEFAULT_SIZES = "1e-2,5e-3,2.5e-3"
DEFAULT_SVG_COLUMNS = "ht_norm_sq,delay_sup_sq,bound_R0_sq"

LIST_FLAGS = ("--taus", "--values", "--sizes")
# keys that change scheduling only; left out of report.txt
RUN_INVARIANT_KEYS = ("workers",)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_FAULT; EXIT_FAILED is reserved for failed verdicts."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FAULT, f"{self.prog}: error: {message}\n")


@dataclass
class Outcome:
    title: str
    fields: dict[str, Any]
    verdicts: dict[str, bool]
    trajectory: Trajectory | None = None
    bound: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)


def _floats(raw: str, flag: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{flag} expects comma-separated numbers, got {raw!r}") from exc


def _is_number_list(token: str) -> bool:
    try:
        [float(part) for part in token.split(",")]
    except ValueError:
        return False
    return True


def _join_list_flags(argv: list[str]) -> list[str]:
    """Glue ``--taus -5,-10`` into ``--taus=-5,-10`` so argparse does not read the value as an option."""
    joined: list[str] = []
    index = 0
    while index < len(argv):
        token = argv[index]
        if token in LIST_FLAGS and index + 1 < len(argv):
            value = argv[index + 1]
            if value.startswith("-") and _is_number_list(value):
                joined.append(f"{token}={value}")
                index += 2
                continue
        joined.append(token)
        index += 1
    return joined


def _validation_verdicts(spec: ModelSpec) -> dict[str, bool]:
    if spec.skip_validation:
        return {}
    return {f"hypothesis.{name}": passed for name, passed in validate_model(spec).as_dict().items()}


def _simulate(args, cfg: RunConfig, spec: ModelSpec) -> Outcome:
    phi = phi_from_config(cfg, spec.basis)
    report = run_simulation(spec, phi, cfg.tau, cfg.t_end, cfg.dt)
    return Outcome(
        title="simulate",
        fields=bounds_fields(report.bounds),
        verdicts=report.verdicts,
        trajectory=report.trajectory,
        bound=report.bounds.r0_sq,
    )


def _verify_bounds(args, cfg: RunConfig, spec: ModelSpec) -> Outcome:
    verdicts = _validation_verdicts(spec)
    if not all(verdicts.values()):
        return Outcome(title="verify-bounds", fields={}, verdicts=verdicts)
    phi = phi_from_config(cfg, spec.basis)
    report = run_simulation(spec, phi, cfg.tau, cfg.t_end, cfg.dt)
    traj = report.trajectory
    fields = bounds_fields(report.bounds)
    fields["energy_identity_residual"] = energy_identity_residual(traj, traj.times[0], traj.times[-1])
    verdicts.update(report.verdicts)
    return Outcome(
        title="verify-bounds",
        fields=fields,
        verdicts=verdicts,
        trajectory=traj,
        bound=report.bounds.r0_sq,
    )


def _decompose(args, cfg: RunConfig, spec: ModelSpec) -> Outcome:
    validated(spec)
    phi = phi_from_config(cfg, spec.basis)
    report = run_decomposition(spec, phi, cfg.tau, cfg.t_end - cfg.tau, cfg.sigma, cfg.dt, cfg.transient)
    return Outcome(
        title="decompose",
        fields=report_fields(report),
        verdicts=report.verdicts,
        trajectory=report.trajectories[SystemKind.FULL],
    )


def _pullback(args, cfg: RunConfig, spec: ModelSpec) -> Outcome:
    validated(spec)
    t_star = cfg.t_star if args.t_star is None else args.t_star
    taus = _floats(args.taus or DEFAULT_TAUS, "--taus")
    report = run_pullback(spec, t_star, taus, default_phi_set(cfg, spec), cfg.dt, cfg.workers)
    return Outcome(
        title="pullback",
        fields=report_fields(report),
        verdicts=report.verdicts,
        trajectory=report.reference,
    )


def _regularity(args, cfg: RunConfig, spec: ModelSpec) -> Outcome:
    validated(spec)
    phi = phi_from_config(cfg, spec.basis)
    htilde = LowpassForcing(spec.forcing, args.cutoff)
    report = run_regularity(spec, phi, cfg.tau, cfg.t_end - cfg.tau, htilde, dt=cfg.dt, transient=cfg.transient)
    return Outcome(
        title="regularity",
        fields=report_fields(report),
        verdicts=report.verdicts,
        trajectory=report.trajectories[SystemKind.FULL],
    )


def _depend(args, cfg: RunConfig, spec: ModelSpec) -> Outcome:
    validated(spec)
    phi = phi_from_config(cfg, spec.basis)
    sizes = _floats(args.sizes or DEFAULT_SIZES, "--sizes")
    t_star = cfg.t_end if args.t_star is None else args.t_star
    report = run_dependence(spec, phi, sizes, cfg.tau, t_star, cfg.seed, cfg.dt, cfg.workers)
    return Outcome(
        title="depend",
        fields=report_fields(report),
        verdicts=report.verdicts,
        trajectory=report.base,
    )


def _sweep(args, cfg: RunConfig, spec: ModelSpec) -> Outcome:
    if not args.param or not args.values:
        raise ValueError("sweep needs --param and --values")
    report = run_sweep(cfg, args.param, _floats(args.values, "--values"), cfg.workers)
    return Outcome(title=f"sweep {args.param}", fields=report_fields(report), verdicts=report.verdicts)


COMMANDS: dict[str, Callable[[argparse.Namespace, RunConfig, ModelSpec], Outcome]] = {
    "simulate": _simulate,
    "decompose": _decompose,
    "pullback": _pullback,
    "regularity": _regularity,
    "depend": _depend,
    "sweep": _sweep,
    "verify-bounds": _verify_bounds,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="key = value config file (defaults when omitted)")
    common.add_argument("--out", default=None, help="output directory (default: $ATTRACTORLAB_OUT or ./out)")
    common.add_argument("--svg", nargs="?", const=DEFAULT_SVG_COLUMNS, default=None, help="write plot.svg of these columns")
    common.add_argument("--log-scale", action="store_true", help="logarithmic y axis for --svg")
    common.add_argument("--workers", type=int, default=None, help="override the workers key")
    common.add_argument("--verbose", action="store_true")

    parser = _Parser(prog="attractorlab")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate the full system and write its time series")
    sub.add_parser("verify-bounds", parents=[common], help="check hypotheses, absorbing bound and energy identity")
    sub.add_parser("decompose", parents=[common], help="split u into decaying and compact parts")
    pullback = sub.add_parser("pullback", parents=[common], help="diameters at t* as the start time recedes")
    pullback.add_argument("--taus", default=None, help=f"comma-separated, strictly decreasing (default {DEFAULT_TAUS})")
    pullback.add_argument("--t-star", type=float, default=None)
    regularity = sub.add_parser("regularity", parents=[common], help="H1_t bounds through the forcing split")
    regularity.add_argument("--cutoff", type=float, default=None, help="lowpass eigenvalue cutoff for the smooth forcing")
    depend = sub.add_parser("depend", parents=[common], help="continuous dependence on the initial history")
    depend.add_argument("--sizes", default=None, help=f"perturbation sizes (default {DEFAULT_SIZES})")
    depend.add_argument("--t-star", type=float, default=None)
    sweep = sub.add_parser("sweep", parents=[common], help="rerun the standard checks over one parameter")
    sweep.add_argument("--param", choices=SWEEP_PARAMS, default=None)
    sweep.add_argument("--values", default=None, help="comma-separated values")
    return parser


def resolve_out_dir(flag: str | None) -> Path:
    return Path(flag or os.getenv("ATTRACTORLAB_OUT") or "out")


def _write_outputs(out: Path, outcome: Outcome, cfg: RunConfig, args) -> None:
    fields: dict[str, Any] = {
        f"config.{key}": value for key, value in describe(cfg).items() if key not in RUN_INVARIANT_KEYS
    }
    fields.update(outcome.fields)
    if outcome.trajectory is not None:
        write_trajectory_csv(out / "trajectory.csv", outcome.trajectory, outcome.bound)
        if args.svg:
            columns = [name.strip() for name in args.svg.split(",") if name.strip()]
            write_svg(
                out / "plot.svg",
                trajectory_columns(outcome.trajectory, outcome.bound),
                columns,
                log_scale=args.log_scale,
                title=outcome.title,
            )
    elif args.svg:
        outcome.notes.append("no trajectory for this command; --svg ignored")
    write_report_file(out / "report.txt", outcome.title, fields, outcome.verdicts, [*cfg.notes, *outcome.notes])


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_join_list_flags(argv))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_FAULT
    configure_logging(args.verbose)

    out = resolve_out_dir(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        handler = attach_file_logging(out / "run.log")
    except OSError as exc:
        print(f"error: cannot use output directory {out}: {exc}", file=sys.stderr)
        return EXIT_FAULT

    try:
        cfg = parse_config(args.config)
        if args.workers is not None:
            cfg = replace(cfg, workers=max(1, args.workers))
        spec = model_from_config(cfg)
        log.info("%s: n=%s kmax=%s dt=%s tau=%s t_end=%s", args.command, cfg.n, cfg.kmax, cfg.dt, cfg.tau, cfg.t_end)
        try:
            outcome = COMMANDS[args.command](args, cfg, spec)
        except ModelValidationError as exc:
            verdicts = {f"hypothesis.{check.name}": check.passed for check in exc.report.checks}
            notes = [f"{check.name}: {check.witness}" for check in exc.report.failures]
            outcome = Outcome(title=args.command, fields={}, verdicts=verdicts, notes=notes)
        _write_outputs(out, outcome, cfg, args)
    except Exception as exc:
        log.debug("fault", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT
    finally:
        detach_file_logging(handler)

    passed = all(outcome.verdicts.values())
    log.info("%s finished: %s", args.command, "pass" if passed else "fail")
    return EXIT_PASS if passed else EXIT_FAILED


if __name__ == "__main__":
    raise SystemExit(main())
