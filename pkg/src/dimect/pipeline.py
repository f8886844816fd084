"""End-to-end estimation procedure.

Phase 1 prepares the F grid and the calibration table, phase 2 estimates
(sigma, dh) for every measurement, phase 3 averages the per-frequency
results and scores them against known values when those are available.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, EstimationInfeasibleError, InputError
from .forward import (
    DEFAULT_PI2_RANGE,
    DEFAULT_PI3_RANGE,
    DEFAULT_SIGMA_REF,
    FGrid,
    PlateSpec,
    ProbeGeometry,
    compute_f_grid,
    mutual_impedance_delta,
    to_pi1,
)
from .inversion import (
    BLIND_THRESHOLD,
    FUNCTIONALS,
    EstimateRecord,
    IntersectionPoint,
    estimate_single_frequency,
    fuse_multi_frequency,
    level_curves,
    map_curve_to_physical,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

FREQUENCY_PRESETS: dict[str, tuple[float, ...]] = {
    "fig4": (1650.0,),
    "fig5": (650.0, 1150.0, 1650.0, 2150.0, 2650.0),
    "sweep": tuple(float(f) for f in range(300, 3001, 50)),
}

# reference plates with known conductivity (S/m) and thickness (m)
REFERENCE_PLATES: dict[str, PlateSpec] = {
    "a": PlateSpec(17.66e6, 2.03e-3),
    "b": PlateSpec(58.50e6, 0.98e-3),
    "c": PlateSpec(28.23e6, 1.97e-3),
    "d": PlateSpec(35.27e6, 1.03e-3),
    "e": PlateSpec(35.44e6, 2.93e-3),
    "f": PlateSpec(35.91e6, 3.98e-3),
}


# ------------------------------------------------------------ measurements

def hertz(omega: float) -> float:
    """Frequency of an angular frequency, rounded to 12 significant digits
    so that values entered in hertz print back unchanged."""
    return float(f"{omega / TWO_PI:.12g}")


@dataclass(frozen=True)
class MeasurementRecord:
    omega: float
    dz: complex
    repeat_index: int = 1
    plate_id: str | None = None

    def __post_init__(self):
        if not self.omega > 0:
            raise DomainError("omega must be positive")
        if self.repeat_index < 1:
            raise InputError("repeat index starts at 1")

    @property
    def frequency_hz(self) -> float:
        return hertz(self.omega)


@dataclass(frozen=True)
class NoiseModel:
    """dz * gain * (1 + e_m) + e_a with complex Gaussian e_m and e_a.

    ``rho`` and ``floor`` are the per-component standard deviations of the
    relative and absolute terms; ``gain`` mimics an uncalibrated instrument.
    """

    rho: float = 0.005
    floor: float = 1e-6
    gain: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.rho < 0 or self.floor < 0:
            raise DomainError("noise parameters must be non-negative")
        if self.gain == 0:
            raise DomainError("instrument gain cannot be zero")


NOISELESS = NoiseModel(0.0, 0.0)


def synthesize_measurements(
    probe: ProbeGeometry,
    plate: PlateSpec,
    frequencies,
    repeats: int = 1,
    noise: NoiseModel = NOISELESS,
    seed=0,
    plate_id: str | None = None,
) -> list[MeasurementRecord]:
    """Forward-model impedances with noise, ordered by frequency then repeat.

    ``frequencies`` are in hertz. The same seed always yields the same
    records.
    """
    if repeats < 1:
        raise InputError("need at least one repeat")
    freqs = [float(f) for f in frequencies]
    if not freqs or any(not f > 0 for f in freqs):
        raise InputError("frequencies must be a non-empty list of positive values")
    rng = np.random.default_rng(seed)
    out = []
    for f in freqs:
        omega = TWO_PI * f
        dz = mutual_impedance_delta(probe, plate, omega) * complex(noise.gain)
        draws = rng.standard_normal((repeats, 4))
        for r in range(repeats):
            em = noise.rho * complex(draws[r, 0], draws[r, 1])
            ea = noise.floor * complex(draws[r, 2], draws[r, 3])
            out.append(MeasurementRecord(omega, dz * (1 + em) + ea, r + 1, plate_id))
    return out


MEASUREMENT_HEADER = ("frequency_hz", "re_ohm", "im_ohm", "repeat", "plate_id")
CALIBRATION_HEADER = ("frequency_hz", "re_c", "im_c")


def _check_header(rows_source, header, what):
    text = Path(rows_source).read_text(encoding="utf-8")
    first = text.splitlines()[0].strip() if text.strip() else ""
    if tuple(h.strip() for h in first.split(",")) != header:
        raise InputError(f"{what} header must be {','.join(header)}, got {first!r}")
    return list(csv.DictReader(io.StringIO(text)))


def read_measurements(path) -> list[MeasurementRecord]:
    rows = _check_header(path, MEASUREMENT_HEADER, "measurement CSV")
    out = []
    for n, row in enumerate(rows, start=2):
        try:
            out.append(MeasurementRecord(
                TWO_PI * float(row["frequency_hz"]),
                complex(float(row["re_ohm"]), float(row["im_ohm"])),
                int(row["repeat"]),
                row["plate_id"] or None,
            ))
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: line {n}: {exc}") from exc
    return out


def measurements_csv(records) -> str:
    lines = [",".join(MEASUREMENT_HEADER)]
    for m in records:
        lines.append(f"{m.frequency_hz!r},{m.dz.real!r},{m.dz.imag!r},{m.repeat_index},{m.plate_id or ''}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------- calibration

@dataclass(frozen=True, eq=False)
class CalibrationTable:
    """Complex factor c(omega), linear in omega on Re and Im, held constant
    beyond the first and last entries."""

    omegas: np.ndarray
    factors: np.ndarray

    def __post_init__(self):
        w = np.array(self.omegas, dtype=float).ravel()
        c = np.array(self.factors, dtype=complex).ravel()
        if len(w) < 1 or len(w) != len(c):
            raise InputError("calibration needs matching, non-empty omega and factor lists")
        if np.any(np.diff(w) <= 0):
            raise InputError("calibration omegas must be strictly increasing")
        if not np.all(np.isfinite(c)):
            raise InputError("calibration factors must be finite")
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "factors", c)

    @classmethod
    def identity(cls) -> "CalibrationTable":
        return cls([1.0], [1.0])

    def __call__(self, omega) -> complex:
        re = np.interp(omega, self.omegas, self.factors.real)
        im = np.interp(omega, self.omegas, self.factors.imag)
        return complex(re, im)

    def extrapolates(self, omega: float) -> bool:
        return len(self.omegas) > 1 and not self.omegas[0] <= omega <= self.omegas[-1]

    def to_csv(self) -> str:
        lines = [",".join(CALIBRATION_HEADER)]
        for w, c in zip(self.omegas.tolist(), self.factors.tolist()):
            lines.append(f"{hertz(w)!r},{c.real!r},{c.imag!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def read_csv(cls, path) -> "CalibrationTable":
        rows = _check_header(path, CALIBRATION_HEADER, "calibration CSV")
        rows.sort(key=lambda r: float(r["frequency_hz"]))
        return cls(
            [TWO_PI * float(r["frequency_hz"]) for r in rows],
            [complex(float(r["re_c"]), float(r["im_c"])) for r in rows],
        )


def apply_calibration(table: CalibrationTable, m: MeasurementRecord) -> MeasurementRecord:
    """The record with its impedance multiplied by c(omega)."""
    return replace(m, dz=m.dz * table(m.omega))


def fit_calibration(reference_plates, probe: ProbeGeometry, grid: FGrid | None = None) -> CalibrationTable:
    """Per-frequency mean over plates of model / measured impedance.

    ``reference_plates`` is a list of ``(PlateSpec, records)``. Repeats of a
    plate at one frequency are averaged before forming its ratio; only
    frequencies every plate was measured at enter the table.
    """
    reference_plates = list(reference_plates)
    if not reference_plates:
        raise InputError("calibration needs at least one reference plate")
    if grid is not None and grid.probe_tag != probe.tag:
        raise InputError("grid and probe describe different shapes")
    per_plate = []
    for plate, records in reference_plates:
        by_omega: dict[float, list[complex]] = {}
        for m in records:
            by_omega.setdefault(m.omega, []).append(m.dz)
        per_plate.append((plate, by_omega))
    shared = sorted(set.intersection(*(set(b) for _, b in per_plate)))
    if not shared:
        raise InputError("reference plates share no frequency")
    omegas, factors = [], []
    for w in shared:
        ratios = []
        for plate, by_omega in per_plate:
            measured = complex(np.mean(by_omega[w]))
            model = mutual_impedance_delta(probe, plate, w)
            if abs(measured) <= 1e-12 * abs(model):
                log.warning("skipping a reference sample at %.6g Hz: measured impedance is zero", w / TWO_PI)
                continue
            ratios.append(model / measured)
        if ratios:
            omegas.append(w)
            factors.append(complex(np.mean(ratios)))
    if not omegas:
        raise InputError("no usable reference measurement")
    return CalibrationTable(omegas, factors)


# ------------------------------------------------------------------ merit

def relative_error_percent(estimate: float, truth: float) -> float:
    return abs(estimate - truth) / truth * 100.0


def _std(values) -> float:
    x = np.asarray(values, dtype=float)
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


@dataclass(frozen=True)
class FrequencyMerit:
    frequency_hz: float
    omega: float
    n_repeats: int
    n_accepted: int
    regions: dict
    sigma_mean: float | None = None
    dh_mean: float | None = None
    sigma_std: float | None = None
    dh_std: float | None = None
    eps_sigma: float | None = None
    eps_dh: float | None = None
    std_eps_sigma: float | None = None
    std_eps_dh: float | None = None
    used: bool = False
    calibration_extrapolated: bool = False

    @property
    def n_discarded(self) -> int:
        return self.n_repeats - self.n_accepted


@dataclass(frozen=True)
class MeritReport:
    per_frequency: tuple[FrequencyMerit, ...]
    sigma: float
    dh: float
    std_sigma: float
    std_dh: float
    truth_sigma: float | None = None
    truth_dh: float | None = None
    eps_sigma: float | None = None
    eps_dh: float | None = None
    std_eps_sigma: float | None = None
    std_eps_dh: float | None = None
    estimates: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "final": {
                "sigma": self.sigma, "dh": self.dh, "std_sigma": self.std_sigma, "std_dh": self.std_dh,
                "eps_sigma": self.eps_sigma, "eps_dh": self.eps_dh,
                "std_eps_sigma": self.std_eps_sigma, "std_eps_dh": self.std_eps_dh,
            },
            "truth": None if self.truth_sigma is None else {"sigma": self.truth_sigma, "dh": self.truth_dh},
            "per_frequency": [
                {
                    "frequency_hz": f.frequency_hz, "n_repeats": f.n_repeats, "n_accepted": f.n_accepted,
                    "n_discarded": f.n_discarded, "regions": dict(sorted(f.regions.items())),
                    "sigma_mean": f.sigma_mean, "dh_mean": f.dh_mean,
                    "sigma_std": f.sigma_std, "dh_std": f.dh_std,
                    "eps_sigma": f.eps_sigma, "eps_dh": f.eps_dh,
                    "std_eps_sigma": f.std_eps_sigma, "std_eps_dh": f.std_eps_dh,
                    "used": f.used, "calibration_extrapolated": f.calibration_extrapolated,
                }
                for f in self.per_frequency
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def merit_csv(self) -> str:
        """One row per frequency: error and spread against frequency."""
        cols = ("frequency_hz", "n_accepted", "sigma_mean", "dh_mean", "eps_sigma", "eps_dh",
                "std_eps_sigma", "std_eps_dh", "used")
        lines = [",".join(cols)]
        for f in self.per_frequency:
            lines.append(",".join("" if getattr(f, c) is None else repr(getattr(f, c)) for c in cols))
        return "\n".join(lines) + "\n"

    def estimates_csv(self) -> str:
        cols = "frequency_hz,repeat,pi2,pi3,residual,region,accepted,sigma_hat,dh_hat,note"
        lines = [cols]
        for m, r in self.estimates:
            p = r.point
            lines.append(",".join([
                repr(m.frequency_hz), str(m.repeat_index),
                "" if p is None else repr(p.pi2), "" if p is None else repr(p.pi3),
                "" if p is None else repr(p.residual), "" if r.region is None else r.region.label,
                str(r.accepted).lower(),
                "" if r.sigma_hat is None else repr(r.sigma_hat), "" if r.dh_hat is None else repr(r.dh_hat),
                r.note,
            ]))
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        """Plain-text summary table."""
        out = [f"{'f [Hz]':>9} {'acc':>5} {'sigma [MS/m]':>13} {'dh [mm]':>9} {'eps_s %':>8} {'eps_h %':>8}"]
        for f in self.per_frequency:
            s = "-" if f.sigma_mean is None else f"{f.sigma_mean / 1e6:.3f}"
            h = "-" if f.dh_mean is None else f"{f.dh_mean * 1e3:.4f}"
            es = "-" if f.eps_sigma is None else f"{f.eps_sigma:.3f}"
            eh = "-" if f.eps_dh is None else f"{f.eps_dh:.3f}"
            mark = "" if f.used else "  (not used)"
            out.append(f"{f.frequency_hz:9.1f} {f.n_accepted:>2}/{f.n_repeats:<2} {s:>13} {h:>9} {es:>8} {eh:>8}{mark}")
        out.append(f"final: sigma = {self.sigma / 1e6:.4f} MS/m (std {self.std_sigma / 1e6:.4f}), "
                   f"dh = {self.dh * 1e3:.4f} mm (std {self.std_dh * 1e3:.4f})")
        if self.eps_sigma is not None:
            out.append(f"errors: eps_sigma = {self.eps_sigma:.3f} % (std {self.std_eps_sigma:.3f}), "
                       f"eps_dh = {self.eps_dh:.3f} % (std {self.std_eps_dh:.3f})")
        return "\n".join(out) + "\n"


def merit_report(measurements, estimates, truth: PlateSpec | None = None, calibration=None) -> MeritReport:
    """Figures of merit from per-repeat estimates (estimate, then average).

    Frequencies where no repeat landed in a feasible region are reported
    but left out of the final average; outlying frequencies are removed by
    the MAD rule before averaging.
    """
    groups: dict[float, list[tuple[MeasurementRecord, EstimateRecord]]] = {}
    for m, r in zip(measurements, estimates):
        groups.setdefault(m.omega, []).append((m, r))

    per_freq, summaries = [], []
    for omega in sorted(groups):
        items = groups[omega]
        acc = [r for _, r in items if r.accepted]
        regions = Counter(r.region.label if r.region else "none" for _, r in items)
        extrapolated = bool(calibration is not None and calibration.extrapolates(omega))
        base = dict(frequency_hz=hertz(omega), omega=omega, n_repeats=len(items), n_accepted=len(acc),
                    regions=dict(regions), calibration_extrapolated=extrapolated)
        if not acc:
            per_freq.append(FrequencyMerit(**base))
            continue
        s = np.array([r.sigma_hat for r in acc])
        h = np.array([r.dh_hat for r in acc])
        fm = dict(base, sigma_mean=float(s.mean()), dh_mean=float(h.mean()), sigma_std=_std(s), dh_std=_std(h))
        if truth is not None:
            es = [relative_error_percent(v, truth.sigma) for v in s]
            eh = [relative_error_percent(v, truth.dh) for v in h]
            fm.update(
                eps_sigma=relative_error_percent(fm["sigma_mean"], truth.sigma),
                eps_dh=relative_error_percent(fm["dh_mean"], truth.dh),
                std_eps_sigma=_std(es), std_eps_dh=_std(eh),
            )
        per_freq.append(FrequencyMerit(**fm))
        label = Counter(r.region.label for r in acc).most_common(1)[0][0]
        point = IntersectionPoint(
            float(np.mean([r.point.pi2 for r in acc])), float(np.mean([r.point.pi3 for r in acc])),
            max(r.point.residual for r in acc), frozenset().union(*(r.point.contributing for r in acc)),
        )
        region = next(r.region for r in acc if r.region.label == label)
        summaries.append(EstimateRecord(omega, point, region, fm["sigma_mean"], fm["dh_mean"], True))

    if not summaries:
        regions = {f"{f.frequency_hz:g} Hz": sorted(f.regions) for f in per_freq}
        raise EstimationInfeasibleError(
            "every frequency was discarded; regions per frequency: "
            + "; ".join(f"{k}: {','.join(v)}" for k, v in regions.items()),
            sorted({lab for f in per_freq for lab in f.regions}),
        )
    fused = fuse_multi_frequency(summaries)
    kept = {r.omega for r in fused.kept}
    per_freq = [replace(f, used=f.omega in kept) for f in per_freq]

    report = dict(sigma=fused.sigma, dh=fused.dh, std_sigma=fused.sigma_std, std_dh=fused.dh_std)
    if truth is not None:
        used = [f for f in per_freq if f.used]
        report.update(
            truth_sigma=truth.sigma, truth_dh=truth.dh,
            eps_sigma=relative_error_percent(fused.sigma, truth.sigma),
            eps_dh=relative_error_percent(fused.dh, truth.dh),
            std_eps_sigma=_std([f.eps_sigma for f in used]),
            std_eps_dh=_std([f.eps_dh for f in used]),
        )
    return MeritReport(tuple(per_freq), estimates=tuple(zip(measurements, estimates)), **report)


def estimate_all(measurements, probe: ProbeGeometry, grid: FGrid, *, calibration: CalibrationTable | None = None,
                 threads: int | None = None, k: float = 10.0,
                 blind_threshold: float = BLIND_THRESHOLD) -> list[EstimateRecord]:
    """Single-frequency estimates for every record, in input order."""
    for name in FUNCTIONALS:
        grid.functional(name)  # fill the cache before any worker reads it
    calibrated = [apply_calibration(calibration, m) if calibration else m for m in measurements]

    def one(m: MeasurementRecord) -> EstimateRecord:
        return estimate_single_frequency(m.dz, m.omega, probe, grid, k=k, blind_threshold=blind_threshold)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, calibrated))
    return [one(m) for m in calibrated]


# ------------------------------------------------------------------ config

@dataclass
class ProcedureConfig:
    """Everything a run needs, in SI units."""

    probe: ProbeGeometry
    grid: FGrid | None = None
    grid_file: Path | None = None
    grid_params: dict = field(default_factory=dict)
    k: float = 10.0
    blind_threshold: float = BLIND_THRESHOLD
    calibration: CalibrationTable | None = None
    calibration_file: Path | None = None
    reference_plates: tuple[str, ...] = ()
    noise: NoiseModel = field(default_factory=NoiseModel)
    repeats: int = 20
    seed: int = 0
    measurements: list | None = None
    measurement_file: Path | None = None
    plate_id: str | None = None
    frequencies_hz: tuple[float, ...] = FREQUENCY_PRESETS["fig5"]
    plates: dict = field(default_factory=lambda: dict(REFERENCE_PLATES))
    truth: PlateSpec | None = None
    threads: int | None = None


def _mm(section: dict, key: str) -> float:
    if key not in section:
        raise InputError(f"probe entry {key!r} is missing")
    return float(section[key]) / 1000


def _probe_from(p: dict) -> ProbeGeometry:
    return ProbeGeometry(
        r1=_mm(p, "r1"), r2=_mm(p, "r2"), h1=_mm(p, "h1"), h2=_mm(p, "h2"), d=_mm(p, "d"),
        N1=int(p.get("N1", 1)), N2=int(p.get("N2", 1)), l0=_mm(p, "l0"),
    )


def load_probe(path) -> ProbeGeometry:
    """Probe geometry from the [probe] section of a TOML file (millimetres)."""
    try:
        doc = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: not valid TOML: {exc}") from exc
    if "probe" not in doc:
        raise InputError(f"{path}: no [probe] section")
    return _probe_from(doc["probe"])


def parse_config(text: str, base: Path | None = None) -> ProcedureConfig:
    """Read a TOML run description. Lengths are millimetres, conductivities S/m."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"config is not valid TOML: {exc}") from exc
    base = base or Path(".")
    known = {"probe", "grid", "calibration", "noise", "plates", "measurements"}
    unknown = set(doc) - known
    if unknown:
        raise InputError(f"unknown config section(s): {', '.join(sorted(unknown))}")

    p = doc.get("probe")
    if p is None:
        raise InputError("config needs a [probe] section")
    probe = _probe_from(p)

    g = doc.get("grid", {})
    grid_params = {
        "pi2_range": tuple(g.get("pi2_range", DEFAULT_PI2_RANGE)),
        "pi3_range": tuple(g.get("pi3_range", DEFAULT_PI3_RANGE)),
        "n2": int(g.get("n2", 200)), "n3": int(g.get("n3", 200)),
        "spacing": g.get("spacing", "log"), "sigma_ref": float(g.get("sigma_ref", DEFAULT_SIGMA_REF)),
    }

    plates = dict(REFERENCE_PLATES)
    for name, spec in doc.get("plates", {}).items():
        try:
            plates[name] = PlateSpec(float(spec["sigma"]), float(spec["dh"]) / 1000)
        except KeyError as exc:
            raise InputError(f"plate {name!r} needs sigma (S/m) and dh (mm)") from exc

    c = doc.get("calibration", {})
    refs = tuple(c.get("reference_plates", ()))
    for r in refs:
        if r not in plates:
            raise InputError(f"unknown reference plate {r!r}")

    n = doc.get("noise", {})
    gain = n.get("gain", [1.0, 0.0])
    noise = NoiseModel(float(n.get("rho", 0.005)), float(n.get("floor", 1e-6)), complex(gain[0], gain[1]))

    m = doc.get("measurements", {})
    if "frequencies_hz" in m:
        freqs = tuple(float(f) for f in m["frequencies_hz"])
    else:
        preset = m.get("preset", "fig5")
        if preset not in FREQUENCY_PRESETS:
            raise InputError(f"unknown frequency preset {preset!r}")
        freqs = FREQUENCY_PRESETS[preset]
    plate_id = m.get("plate")
    if plate_id is not None and "file" not in m and plate_id not in plates:
        raise InputError(f"unknown plate {plate_id!r}")

    return ProcedureConfig(
        probe=probe,
        grid_file=base / g["file"] if "file" in g else None,
        grid_params=grid_params,
        k=float(g.get("k", 10.0)),
        blind_threshold=float(g.get("blind_threshold", BLIND_THRESHOLD)),
        calibration_file=base / c["file"] if "file" in c else None,
        reference_plates=refs,
        noise=noise,
        repeats=int(n.get("repeats", 20)),
        seed=int(n.get("seed", 0)),
        measurement_file=base / m["file"] if "file" in m else None,
        plate_id=plate_id,
        frequencies_hz=freqs,
        plates=plates,
        truth=plates.get(plate_id) if plate_id else None,
    )


def load_config(path) -> ProcedureConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


# --------------------------------------------------------------- procedure

def prepare_grid(config: ProcedureConfig) -> FGrid:
    if config.grid is not None:
        grid = config.grid
    elif config.grid_file is not None and config.grid_file.exists():
        grid = FGrid.load(config.grid_file)
    else:
        grid = compute_f_grid(config.probe, threads=config.threads, **config.grid_params)
    if grid.probe_tag != config.probe.tag:
        raise InputError(f"grid was built for probe shape {grid.probe_tag}, not {config.probe.tag}")
    return grid


def gather_measurements(config: ProcedureConfig) -> tuple[list[MeasurementRecord], list[MeasurementRecord]]:
    """Measurements of the plate under test and of the reference plates."""
    if config.measurements is not None:
        rows = list(config.measurements)
    elif config.measurement_file is not None:
        rows = read_measurements(config.measurement_file)
    else:
        if config.plate_id is None:
            raise InputError("no measurement source: give a file or a plate to synthesize")
        plate = config.plates[config.plate_id]
        rows = synthesize_measurements(config.probe, plate, config.frequencies_hz, config.repeats,
                                       config.noise, config.seed, config.plate_id)
        for n, ref in enumerate(config.reference_plates, start=1):
            rows += synthesize_measurements(config.probe, config.plates[ref], config.frequencies_hz,
                                            config.repeats, config.noise, [config.seed, n], ref)
    refs = set(config.reference_plates)
    target = [m for m in rows if m.plate_id not in refs]
    if config.plate_id is not None and any(m.plate_id for m in target):
        target = [m for m in target if m.plate_id == config.plate_id]
    reference = [m for m in rows if m.plate_id in refs]
    if not target:
        raise InputError("no measurements of the plate under test")
    return target, reference


def prepare_calibration(config: ProcedureConfig, reference, grid: FGrid) -> CalibrationTable | None:
    if config.calibration is not None:
        return config.calibration
    if config.calibration_file is not None:
        return CalibrationTable.read_csv(config.calibration_file)
    if config.reference_plates:
        data = [(config.plates[r], [m for m in reference if m.plate_id == r]) for r in config.reference_plates]
        return fit_calibration(data, config.probe, grid)
    return None


def run_procedure(config: ProcedureConfig) -> MeritReport:
    """Calibrate, estimate every measurement, fuse, and score."""
    grid = prepare_grid(config)
    target, reference = gather_measurements(config)
    calibration = prepare_calibration(config, reference, grid)
    estimates = estimate_all(target, config.probe, grid, calibration=calibration, threads=config.threads,
                             k=config.k, blind_threshold=config.blind_threshold)
    return merit_report(target, estimates, config.truth, calibration)


# ------------------------------------------------------------- plot data

def level_curves_csv(grid: FGrid, probe: ProbeGeometry, measurements,
                     calibration: CalibrationTable | None = None) -> str:
    """Level curves of the first repeat at each frequency, in both planes."""
    lines = ["frequency_hz,functional,branch,pi2,pi3,sigma,dh"]
    seen = set()
    for m in measurements:
        if m.omega in seen:
            continue
        seen.add(m.omega)
        dz = m.dz * calibration(m.omega) if calibration else m.dz
        pi1 = to_pi1(dz, m.omega, probe)
        if pi1 == 0:
            continue
        for curve in level_curves(grid, pi1, m.omega):
            phys = map_curve_to_physical(curve, m.omega, probe.D)
            for b, (seg, ph) in enumerate(zip(curve.segments, phys)):
                for (p2, p3), (s, h) in zip(seg.tolist(), ph.tolist()):
                    lines.append(f"{m.frequency_hz!r},{curve.functional},{b},{p2!r},{p3!r},{s!r},{h!r}")
    return "\n".join(lines) + "\n"
