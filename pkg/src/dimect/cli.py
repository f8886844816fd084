"""Command-line front end.

Every subcommand parses its flags, calls the library and writes results
atomically. Exit status: 0 on success, 1 when the library rejects the
inputs, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import difflib
import logging
import os
import sys
from pathlib import Path

from . import dimensions, pipeline
from .errors import DimectError
from .forward import (
    DEFAULT_PI2_RANGE,
    DEFAULT_PI3_RANGE,
    DEFAULT_SIGMA_REF,
    FGrid,
    PlateSpec,
    DEFAULT_PROBE,
    atomic_write,
    compute_f_grid,
    make_axis,
)
from .inversion import BLIND_THRESHOLD, region_table

CONFIG_DIR_ENV = "DIMECT_CONFIG_DIR"

log = logging.getLogger("dimect")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that suggests the closest flag for a misspelt one.

    Prefix abbreviations are off: a truncated flag is an error, not a guess.
    """

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def parse_args(self, args=None, namespace=None):
        ns, extras = self.parse_known_args(args, namespace)
        if extras:
            known = sorted(_all_options(self))
            hints = []
            for tok in extras:
                flag = tok.split("=", 1)[0]
                close = difflib.get_close_matches(flag, known, n=1) if flag.startswith("-") else []
                hints.append(f"{tok} (did you mean {close[0]}?)" if close else tok)
            self.error("unrecognized arguments: " + " ".join(hints))
        return ns


def _all_options(parser: argparse.ArgumentParser) -> set[str]:
    out = set(parser._option_string_actions)
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                out |= _all_options(sub)
    return out


def resolve_input(path: str | None) -> Path | None:
    """An existing input path, looked up in $DIMECT_CONFIG_DIR when relative."""
    if path is None:
        return None
    p = Path(path)
    if p.exists():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base and not p.is_absolute() and (Path(base) / p).exists():
        return Path(base) / p
    raise UsageError(f"input file not found: {path}")


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    return lo, hi


def _truth(text: str) -> PlateSpec:
    try:
        sigma, dh = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected SIGMA,DH in SI units, got {text!r}") from None
    return PlateSpec(sigma, dh)


def _probe(args):
    if getattr(args, "probe", None):
        return pipeline.load_probe(resolve_input(args.probe))
    if getattr(args, "config", None):
        return pipeline.load_config(resolve_input(args.config)).probe
    return DEFAULT_PROBE


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _write_dir(out: str, files: dict[str, str | bytes]) -> None:
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        atomic_write(d / name, data)


# ------------------------------------------------------------- commands

def cmd_pi_groups(args) -> int:
    if args.system:
        system, pres = dimensions.load_system(resolve_input(args.system))
    elif args.builtin == "rlc":
        system, pres = dimensions.rlc_system(), dimensions.RLC_RECIPROCAL_PRESENTATION
    else:
        system, pres = dimensions.ect_system(), dimensions.ECT_SKIN_DEPTH_PRESENTATION
    if args.canonical:
        pres = {}
    groups = dimensions.derive_pi_groups(system, pres)
    _emit(dimensions.format_groups(system, groups) + "\n", args.out)
    return 0


def _grid_params(args, cfg):
    params = dict(cfg.grid_params) if cfg else {
        "pi2_range": DEFAULT_PI2_RANGE, "pi3_range": DEFAULT_PI3_RANGE, "n2": 200, "n3": 200,
        "spacing": "log", "sigma_ref": DEFAULT_SIGMA_REF,
    }
    for key in ("pi2_range", "pi3_range", "n2", "n3", "spacing", "sigma_ref"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    return params


def cmd_grid_build(args) -> int:
    cfg = pipeline.load_config(resolve_input(args.config)) if args.config else None
    probe = cfg.probe if cfg else _probe(args)
    grid = compute_f_grid(probe, threads=args.threads, rtol=args.tolerance, **_grid_params(args, cfg))
    atomic_write(args.out, grid.to_bytes())
    if args.csv:
        atomic_write(args.csv, grid.to_csv())
    print(f"wrote {grid.shape[0]}x{grid.shape[1]} grid for probe {grid.probe_tag} to {args.out}")
    return 0


def cmd_regions(args) -> int:
    cfg = pipeline.load_config(resolve_input(args.config)) if args.config else None
    params = _grid_params(args, cfg)
    k = args.k if args.k is not None else (cfg.k if cfg else 10.0)
    blind = args.blind_threshold if args.blind_threshold is not None else (
        cfg.blind_threshold if cfg else BLIND_THRESHOLD)
    p2 = make_axis(*params["pi2_range"], params["n2"], params["spacing"])
    p3 = make_axis(*params["pi3_range"], params["n3"], params["spacing"])
    table = region_table(p2, p3, k, blind)
    lines = ["pi2,pi3,label"]
    for a, row in zip(p2.tolist(), table):
        lines += [f"{a!r},{b!r},{lab}" for b, lab in zip(p3.tolist(), row)]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_synth(args) -> int:
    cfg = pipeline.load_config(resolve_input(args.config)) if args.config else None
    probe = cfg.probe if cfg else _probe(args)
    plates = cfg.plates if cfg else pipeline.REFERENCE_PLATES
    if args.sigma is not None or args.dh is not None:
        if args.sigma is None or args.dh is None:
            raise UsageError("--sigma and --dh go together")
        plate, plate_id = PlateSpec(args.sigma, args.dh), args.plate
    else:
        plate_id = args.plate or (cfg.plate_id if cfg else None)
        if plate_id not in plates:
            raise UsageError(f"unknown plate {plate_id!r}; choose from {', '.join(sorted(plates))}")
        plate = plates[plate_id]
    noise = cfg.noise if cfg else pipeline.NoiseModel()
    if args.rho is not None or args.floor is not None:
        noise = pipeline.NoiseModel(
            noise.rho if args.rho is None else args.rho,
            noise.floor if args.floor is None else args.floor,
            noise.gain,
        )
    freqs = pipeline.FREQUENCY_PRESETS[args.preset] if args.preset else (
        cfg.frequencies_hz if cfg else pipeline.FREQUENCY_PRESETS["fig5"])
    repeats = args.repeats or (cfg.repeats if cfg else 20)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    records = pipeline.synthesize_measurements(probe, plate, freqs, repeats, noise, seed, plate_id)
    _emit(pipeline.measurements_csv(records), args.out)
    return 0


def _outputs(report: pipeline.MeritReport, grid, probe, measurements, calibration) -> dict[str, str]:
    return {
        "report.json": report.to_json(),
        "merit.csv": report.merit_csv(),
        "estimates.csv": report.estimates_csv(),
        "level_curves.csv": pipeline.level_curves_csv(grid, probe, measurements, calibration),
    }


def cmd_estimate(args) -> int:
    probe = _probe(args)
    grid = FGrid.load(resolve_input(args.grid))
    records = pipeline.read_measurements(resolve_input(args.measurements))
    if args.plate:
        records = [m for m in records if m.plate_id == args.plate]
        if not records:
            raise UsageError(f"no measurements for plate {args.plate!r}")
    calibration = (pipeline.CalibrationTable.read_csv(resolve_input(args.calibration))
                   if args.calibration else None)
    if grid.probe_tag != probe.tag:
        raise DimectError(f"grid was built for probe shape {grid.probe_tag}, not {probe.tag}")
    estimates = pipeline.estimate_all(records, probe, grid, calibration=calibration, threads=args.threads)
    report = pipeline.merit_report(records, estimates, args.truth, calibration)
    if args.out:
        _write_dir(args.out, _outputs(report, grid, probe, records, calibration))
    sys.stdout.write(report.render())
    return 0


def cmd_report(args) -> int:
    cfg = pipeline.load_config(resolve_input(args.config))
    if args.preset:
        cfg.frequencies_hz = pipeline.FREQUENCY_PRESETS[args.preset]
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads:
        cfg.threads = args.threads
    if args.truth is not None:
        cfg.truth = args.truth
    grid = pipeline.prepare_grid(cfg)
    target, reference = pipeline.gather_measurements(cfg)
    calibration = pipeline.prepare_calibration(cfg, reference, grid)
    estimates = pipeline.estimate_all(target, cfg.probe, grid, calibration=calibration, threads=cfg.threads,
                                      k=cfg.k, blind_threshold=cfg.blind_threshold)
    report = pipeline.merit_report(target, estimates, cfg.truth, calibration)
    if args.out:
        files = _outputs(report, grid, cfg.probe, target, calibration)
        files["measurements.csv"] = pipeline.measurements_csv(target + reference)
        if calibration is not None:
            files["calibration.csv"] = calibration.to_csv()
        _write_dir(args.out, files)
    sys.stdout.write(report.render())
    return 0


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dimect", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pi-groups", help="derive the pi groups of a dimensional system")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--system", help="TOML system definition")
    src.add_argument("--builtin", choices=("rlc", "ect"), help="use a bundled system")
    p.add_argument("--canonical", action="store_true", help="skip presentation transforms")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_pi_groups)

    def grid_flags(q):
        q.add_argument("--pi2-range", dest="pi2_range", type=_range, help="LO,HI of the pi2 axis")
        q.add_argument("--pi3-range", dest="pi3_range", type=_range, help="LO,HI of the pi3 axis")
        q.add_argument("--n2", type=int, help="pi2 samples")
        q.add_argument("--n3", type=int, help="pi3 samples")
        q.add_argument("--spacing", choices=("log", "linear"), help="axis spacing")

    g = sub.add_parser("grid", help="F-grid operations")
    gsub = g.add_subparsers(dest="grid_command", required=True, parser_class=_Parser)
    b = gsub.add_parser("build", help="tabulate F(pi2, pi3) for a probe")
    b.add_argument("--config", help="run config; its [probe] and [grid] sections are used")
    b.add_argument("--probe", help="TOML file with a [probe] section (mm); default: bundled probe")
    grid_flags(b)
    b.add_argument("--sigma-ref", dest="sigma_ref", type=float, help="conductivity used to reach each pi2 (S/m)")
    b.add_argument("--threads", type=int, help="worker threads (result does not depend on it)")
    b.add_argument("--tolerance", type=float, default=1e-9, help="relative quadrature tolerance")
    b.add_argument("--out", required=True, help="binary grid file to write")
    b.add_argument("--csv", help="also write the grid as CSV")
    b.set_defaults(func=cmd_grid_build)

    r = sub.add_parser("regions", help="tabulate operating-region labels as CSV")
    r.add_argument("--config", help="run config supplying grid ranges, k and blind threshold")
    grid_flags(r)
    r.add_argument("--k", type=float, help="region separation constant (default 10)")
    r.add_argument("--blind-threshold", dest="blind_threshold", type=float,
                   help="pi2*pi3 above which thickness is unobservable (default 3)")
    r.add_argument("--out", help="CSV file (default stdout)")
    r.set_defaults(func=cmd_regions)

    s = sub.add_parser("synth", help="synthesize noisy measurements")
    s.add_argument("--config", help="run config")
    s.add_argument("--probe", help="TOML file with a [probe] section (mm)")
    s.add_argument("--plate", help="plate id (a-f or from the config)")
    s.add_argument("--sigma", type=float, help="conductivity in S/m (with --dh)")
    s.add_argument("--dh", type=float, help="thickness in m (with --sigma)")
    s.add_argument("--preset", choices=sorted(pipeline.FREQUENCY_PRESETS), help="frequency set")
    s.add_argument("--repeats", type=int, help="repeats per frequency")
    s.add_argument("--seed", type=int, help="random seed")
    s.add_argument("--rho", type=float, help="relative noise per component")
    s.add_argument("--floor", type=float, help="absolute noise per component (ohm)")
    s.add_argument("--out", help="measurement CSV (default stdout)")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("estimate", help="estimate conductivity and thickness from measurements")
    e.add_argument("--grid", required=True, help="binary grid file")
    e.add_argument("--probe", help="TOML file with a [probe] section (mm)")
    e.add_argument("--config", help="run config supplying the probe")
    e.add_argument("--measurements", required=True, help="measurement CSV")
    e.add_argument("--calibration", help="calibration CSV")
    e.add_argument("--plate", help="only use rows with this plate id")
    e.add_argument("--truth", type=_truth, help="known SIGMA,DH (S/m, m) to score against")
    e.add_argument("--threads", type=int, help="worker threads")
    e.add_argument("--out", help="directory for report.json and CSV outputs")
    e.set_defaults(func=cmd_estimate)

    p = sub.add_parser("report", help="run the full procedure described by a config")
    p.add_argument("--config", required=True, help="run config")
    p.add_argument("--preset", choices=sorted(pipeline.FREQUENCY_PRESETS), help="frequency set override")
    p.add_argument("--seed", type=int, help="random seed override")
    p.add_argument("--truth", type=_truth, help="known SIGMA,DH (S/m, m) to score against")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--out", help="output directory for report.json and CSV outputs")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dimect: error: {exc}", file=sys.stderr)
        return 2
    except DimectError as exc:
        print(f"dimect: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
