"""Command-line entry point: ``cicontrol run|sweep|sweep2d|surfaces|pulse``.

Exit codes: 0 success, 1 configuration error, 2 numerical abort (for sweeps:
at least one cell failed).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    RunFailure,
    SweepSpec,
    default_workers,
    export_surfaces,
    load_config,
    run_single,
    sweep,
    write_pulse_spectrum,
    write_pulse_trace,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _values(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty value list")
    return vals


def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--config", type=Path, help="TOML file with dotted keys overriding the packaged defaults")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override one configuration entry (repeatable)")
    p.add_argument("--out", type=Path, required=True, help=out_help)


def _axis(p: argparse.ArgumentParser, suffix: str = ""):
    p.add_argument("--from", dest=f"start{suffix}", type=float)
    p.add_argument("--to", dest=f"stop{suffix}", type=float)
    p.add_argument("--steps", dest=f"steps{suffix}", type=int)
    p.add_argument("--values", dest=f"values{suffix}", type=_values, help="comma-separated values (instead of --from/--to/--steps)")


def _axis_values(args, suffix: str, what: str) -> tuple:
    explicit = getattr(args, f"values{suffix}")
    rng = [getattr(args, f"{k}{suffix}") for k in ("start", "stop", "steps")]
    if explicit is not None:
        if any(v is not None for v in rng):
            raise ConfigError(f"{what}: give either --values or --from/--to/--steps, not both")
        return explicit
    if any(v is None for v in rng):
        raise ConfigError(f"{what}: --from, --to and --steps are all required without --values")
    return SweepSpec.linspace(*rng)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cicontrol", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="single propagation with manifest, frames and pulse trace")
    _common(p, "output directory")

    p = sub.add_parser("sweep", help="one-dimensional parameter sweep")
    _common(p, "output directory (one cell_NNNN directory per value plus sweep.csv)")
    p.add_argument("--param", required=True, help="configuration path, e.g. pulse.eta, model.gap or bath.lambda")
    _axis(p)
    p.add_argument("--workers", type=int, default=default_workers())

    p = sub.add_parser("sweep2d", help="two-dimensional parameter sweep")
    _common(p, "output directory")
    p.add_argument("--param-a", required=True)
    p.add_argument("--values", dest="values_a", type=_values, required=True, help="comma-separated values of the first axis")
    p.add_argument("--param-b", required=True)
    p.add_argument("--from", dest="start_b", type=float)
    p.add_argument("--to", dest="stop_b", type=float)
    p.add_argument("--steps", dest="steps_b", type=int)
    p.add_argument("--values-b", dest="values_b", type=_values)
    p.add_argument("--workers", type=int, default=default_workers())

    p = sub.add_parser("surfaces", help="adiabatic surfaces at Q_c = 0 as CSV")
    _common(p, "output CSV file")

    p = sub.add_parser("pulse", help="pulse field trace, plus <stem>_spectrum.csv")
    _common(p, "output CSV file")
    return parser


def _progress_logger(cfg):
    step = max(1.0, round((cfg.heom.t_end - cfg.t_start) / 20))
    marks = {"next": cfg.t_start + step}

    def progress(t):
        if t >= marks["next"]:
            logging.info("t = %.0f fs", t)
            marks["next"] += step

    return progress


def _run(args, cfg) -> int:
    progress = _progress_logger(cfg) if args.verbose else None

    try:
        res = run_single(cfg, args.out, progress=progress)
    except RunFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    y = res.manifest["yield"]
    print(f"yield {y['yield']:.6f} (pop_c {y['pop_c']:.6g}, pop_d {y['pop_d']:.6g}); wrote {args.out}")
    return EXIT_OK


def _sweep(args, cfg, spec) -> int:
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    res = sweep(cfg, spec, args.out, workers=args.workers)
    for row in res.rows:
        axes = " ".join(f"{a}={row[a]:g}" for a in spec.axes)
        print(f"{axes} yield={row['yield']:.6f} {row['status']}")
    print(f"wrote {Path(args.out) / 'sweep.csv'}")
    return EXIT_NUMERICAL if res.failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "run":
            return _run(args, cfg)
        if args.command == "sweep":
            return _sweep(args, cfg, SweepSpec(args.param, _axis_values(args, "", "--param")))
        if args.command == "sweep2d":
            spec = SweepSpec(args.param_a, args.values_a, args.param_b, _axis_values(args, "_b", "--param-b"))
            return _sweep(args, cfg, spec)
        if args.command == "surfaces":
            export_surfaces(cfg, args.out)
        elif args.command == "pulse":
            out = Path(args.out)
            write_pulse_trace(cfg, out)
            write_pulse_spectrum(cfg, out.with_name(out.stem + "_spectrum.csv"))
        print(f"wrote {args.out}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
