"""
Command-line entry point: ``pmsm-injection <command> [options]``.

Commands: ``simulate``, ``estimate``, ``identify`` and ``averaging-check``.
Exit status is 0 on success, 1 for usage or configuration errors and 2 for
numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import fileio
from .averaging import averaging_check
from .estimator import EstimationError
from .identification import IdentificationError, SweepConfig, fitted_curves, identify_full, points_to_columns
from .injection import InjectionConfig, WaveformTable
from .magnetics import ModelValidityError, MotorParams
from .pipeline import estimate_trace
from .scenarios import SCENARIOS, build_scenario
from .simulation import Profile, run_scenario

log = logging.getLogger("pmsm_injection")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u_tilde(text: str) -> tuple[float, float]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'U' or 'U_GAMMA,U_DELTA' volts, got {text!r}") from None
    if len(values) == 1:
        return (values[0], 0.0)
    if len(values) == 2:
        return (values[0], values[1])
    raise argparse.ArgumentTypeError(f"expected one or two components, got {text!r}")


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _non_negative(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value >= 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmsm-injection", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, scenario=False, u_default="15"):
        p.add_argument("--motor", default="ipm", help="preset name (ipm, spm) or motor config file")
        p.add_argument("--omega-inj", type=_positive, default=500.0, metavar="HZ",
                       help="injection frequency in Hz (default 500)")
        p.add_argument("--u-tilde", type=_u_tilde, default=None, metavar="VOLTS",
                       help=f"injection amplitude, 'U' or 'U_GAMMA,U_DELTA' (default {u_default})")
        p.add_argument("--waveform", default="square",
                       help="square, sine, or a two-column sigma,f CSV file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if scenario:
            p.add_argument("--scenario", default="load-step",
                           help=f"built-in name ({', '.join(SCENARIOS)}) or profile config file")
            p.add_argument("--time-scale", type=_positive, default=None,
                           help="stretch factor for the slow phases of built-in scenarios")

    p = sub.add_parser("simulate", help="simulate a scenario and write trace.csv")
    common(p, scenario=True)
    p.add_argument("--noise-std", type=_non_negative, default=0.0, metavar="AMPS",
                   help="white noise added to the sampled currents")
    p.add_argument("--seed", type=_seed, default=0, help="noise seed (unsigned 64-bit)")

    p = sub.add_parser("estimate", help="demodulate a trace and estimate the rotor angle")
    common(p)
    p.add_argument("trace", type=Path, help="trace CSV written by 'simulate'")
    p.add_argument("--no-saturation", action="store_true",
                   help="drop the saturation terms from the estimator's model")
    p.add_argument("--no-trend", action="store_true",
                   help="plain demodulation without the drift correction")
    p.add_argument("--from", dest="t_from", type=float, default=0.0, metavar="SECONDS",
                   help="start of the interval used for the error summary")

    p = sub.add_parser("identify", help="locked-rotor identification of a plant")
    common(p, u_default="15 V for salient machines, 14 V otherwise")
    p.add_argument("--no-refine", action="store_true",
                   help="report the raw first-order fit without bias refinement")
    p.add_argument("--workers", type=int, default=1, help="parallel sweep simulations")

    p = sub.add_parser("averaging-check", help="compare injected runs at Omega and 2 Omega")
    common(p, scenario=True)
    return parser


def _injection(args, default_u: tuple[float, float] | None = (15.0, 0.0)) -> InjectionConfig:
    if args.waveform in ("square", "sine"):
        waveform = args.waveform
    else:
        try:
            waveform = WaveformTable.from_csv(args.waveform)
        except OSError as exc:
            raise UsageError(f"cannot read waveform table {args.waveform}: {exc.strerror}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    u = args.u_tilde if args.u_tilde is not None else default_u
    return InjectionConfig(omega_inj=2 * math.pi * args.omega_inj, u_tilde=u or (0.0, 0.0),
                           waveform=waveform)


def _motor(args) -> MotorParams:
    return fileio.load_motor(args.motor)


def _scenario(args, p: MotorParams) -> tuple[Profile, float]:
    """Profile and the start of its scored interval."""
    if args.scenario in SCENARIOS:
        return build_scenario(args.scenario, p, args.time_scale), SCENARIOS[args.scenario].evaluate_from
    if not Path(args.scenario).exists():
        raise UsageError(f"unknown scenario {args.scenario!r}: not a built-in name "
                         f"({', '.join(SCENARIOS)}) and no such file")
    if args.time_scale is not None:
        log.warning("--time-scale applies to built-in scenarios only; ignored")
    return fileio.load_profile(args.scenario), 0.0


def cmd_simulate(args) -> int:
    p = _motor(args)
    cfg = _injection(args)
    profile, _ = _scenario(args, p)
    log.info("simulating %s for %.3g s", profile.name, profile.duration)
    trace = run_scenario(profile, cfg, p, noise_std=args.noise_std, seed=args.seed)
    fileio.write_trace(args.out / "trace.csv", trace)
    fileio.atomic_write(args.out / "scenario.cfg", fileio.profile_to_kv(profile))
    fileio.atomic_write(args.out / "motor.cfg", fileio.motor_to_kv(p))
    print(f"wrote {args.out / 'trace.csv'} ({len(trace)} samples, {profile.name})")
    return EXIT_OK


ESTIMATE_COLUMNS = ("i_bar_g", "i_bar_d", "i_tilde_g", "i_tilde_d", "theta_hat", "residual", "ambiguity")


def cmd_estimate(args) -> int:
    p = _motor(args)
    cfg = _injection(args)
    trace = fileio.read_trace(args.trace)
    out = args.out / "estimates.csv"
    result = estimate_trace(trace, cfg, p, saturation=not args.no_saturation, trend=not args.no_trend)
    n0 = len(trace) - len(result.demod)
    columns = {k: v[n0:] for k, v in trace.columns().items()}
    d, s = result.demod, result.series
    columns.update(zip(ESTIMATE_COLUMNS, (d.i_bar[0], d.i_bar[1], d.i_tilde[0], d.i_tilde[1],
                                          s.theta_hat, s.residual, s.ambiguity)))
    fileio.write_csv(out, columns)
    summary = result.summary(args.t_from)
    print(f"wrote {out} ({summary['samples']} estimates)")
    if summary["samples"]:
        model = "linear" if args.no_saturation else "saturated"
        print(f"max |theta_hat - theta| = {summary['max_deg']:.3f} deg, "
              f"mean = {summary['mean_deg']:.3f} deg ({model} model, t >= {args.t_from:g} s, "
              f"ambiguous {100 * summary['ambiguous']:.1f} %)")
    return EXIT_OK


def cmd_identify(args) -> int:
    p = _motor(args)
    u = None if args.u_tilde is None else math.hypot(*args.u_tilde)
    cfg = _injection(args, default_u=None)
    sweep = SweepConfig(u_tilde=u, injection=cfg, refine=not args.no_refine, workers=max(1, args.workers))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report, points = identify_full(p, sweep)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    fileio.atomic_write(args.out / "id_report.cfg", fileio.dump_kv(report.to_mapping()))
    fileio.write_csv(args.out / "id_points.csv", points_to_columns(points))
    fileio.write_csv(args.out / "id_curves.csv", fitted_curves(points, report, p))
    norm = report.normalized()
    print(f"Ld = {report.Ld * 1e3:.4f} mH, Lq = {report.Lq * 1e3:.4f} mH")
    for key in ("a30", "a12", "a40", "a22", "a04"):
        print(f"{key}_norm = {norm[key]:.5f}")
    print(f"a12 estimates: {norm['a12_cross']:.5f} (d-excited), {norm['a12_q']:.5f} (q-excited)")
    print(f"wrote {args.out / 'id_report.cfg'}")
    return EXIT_OK


def cmd_averaging_check(args) -> int:
    p = _motor(args)
    cfg = _injection(args)
    profile, t_from = _scenario(args, p)
    report = averaging_check(p, profile, cfg, t_from=t_from)
    fileio.atomic_write(args.out / "averaging.cfg", fileio.dump_kv(report.to_mapping()))
    print(f"theta deviation: {report.theta_dev[0]:.4g} rad at Omega, "
          f"{report.theta_dev[1]:.4g} rad at 2 Omega, ratio {report.theta_ratio:.3f}")
    print(f"flux remainder ratio {report.residual_ratio:.3f}")
    print(f"flux ripple {report.ripple_amplitude:.5g} Wb vs {report.ripple_expected:.5g} Wb expected "
          f"({100 * report.ripple_error:.2f} % off)")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "identify": cmd_identify,
    "averaging-check": cmd_averaging_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, fileio.ConfigError, KeyError, ValueError) as exc:
        if isinstance(exc, (ModelValidityError, EstimationError)):
            print(f"error: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IdentificationError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
