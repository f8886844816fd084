"""Level-curve inversion of the F map.

A measured impedance fixes one complex value of F. Each real functional of
that value (Re, Im, Abs, Phase) draws a level curve over the (pi2, pi3)
plane; where the curves cross, F takes the measured value. The crossing is
mapped back to conductivity and thickness through the pi definitions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .contours import iso_lines
from .errors import DomainError, EstimationInfeasibleError, InputError
from .forward import (
    FGrid,
    ProbeGeometry,
    dh_from_pi3,
    pi2_of,
    pi3_of,
    sigma_from_pi2,
    to_pi1,
)

log = logging.getLogger(__name__)

FUNCTIONALS = ("Re", "Im", "Abs", "Phase")
_EVAL = {"Re": np.real, "Im": np.imag, "Abs": np.abs, "Phase": np.angle}

FEASIBLE = frozenset("deh")
BLIND_THRESHOLD = 3.0
CLUSTER_RADIUS = 1.0


def functional_value(name: str, z) -> float:
    """Re, Im, Abs or Phase of a complex number."""
    if name not in _EVAL:
        raise InputError(f"unknown functional {name!r}; expected one of {', '.join(FUNCTIONALS)}")
    return float(_EVAL[name](z))


# ------------------------------------------------------------------ curves

@dataclass(frozen=True, eq=False)
class LevelCurve:
    """Locus where a real functional of F equals ``level``.

    ``segments`` are polylines in the (pi2, pi3) plane. ``lattice`` holds the
    same polylines in fractional grid coordinates; distances measured there
    are in grid cells. Curves built by hand without a grid use the plane
    coordinates for both.
    """

    functional: str
    level: float
    segments: tuple[np.ndarray, ...]
    omega: float | None = None
    lattice: tuple[np.ndarray, ...] | None = None
    degenerate: bool = False
    grid: FGrid | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.functional not in FUNCTIONALS:
            raise InputError(f"unknown functional {self.functional!r}")
        segs = tuple(np.asarray(s, dtype=float).reshape(-1, 2) for s in self.segments)
        if any(len(s) < 2 for s in segs):
            raise InputError("every polyline needs at least two vertices")
        object.__setattr__(self, "segments", segs)
        lat = segs if self.lattice is None else tuple(np.asarray(s, dtype=float) for s in self.lattice)
        object.__setattr__(self, "lattice", lat)

    @property
    def empty(self) -> bool:
        return not self.segments

    def edges(self) -> np.ndarray:
        """All straight pieces in lattice coordinates, shape (m, 2, 2)."""
        if not self.lattice:
            return np.zeros((0, 2, 2))
        return np.concatenate([np.stack([s[:-1], s[1:]], axis=1) for s in self.lattice])


def extract_level_curve(grid: FGrid, functional: str, level: float, omega: float | None = None) -> LevelCurve:
    """Marching-squares contour of one functional of F at ``level``."""
    if functional not in FUNCTIONALS:
        raise InputError(f"unknown functional {functional!r}; expected one of {', '.join(FUNCTIONALS)}")
    level = float(level)
    if not math.isfinite(level):
        raise InputError("level must be finite")
    if functional == "Phase" and not -math.pi < level <= math.pi:
        raise InputError("phase level must lie in (-pi, pi]")
    f = grid.functional(functional)
    if np.ptp(f) == 0:
        return LevelCurve(functional, level, (), omega, degenerate=True, grid=grid)
    lines = iso_lines(f, level, periodic=functional == "Phase")
    lattice = tuple(line for line in lines if len(line) >= 2)
    plane = tuple(np.column_stack(grid.coords_of(line[:, 0], line[:, 1])) for line in lattice)
    return LevelCurve(functional, level, plane, omega, lattice, grid=grid)


# ------------------------------------------------------------ intersection

@dataclass(frozen=True)
class IntersectionPoint:
    pi2: float
    pi3: float
    residual: float
    contributing: frozenset
    i: float = math.nan
    j: float = math.nan

    def __post_init__(self):
        if not self.residual >= 0:
            raise InputError("residual must be non-negative")
        if len(self.contributing) < 2:
            raise InputError("an intersection needs at least two functionals")


def _candidate_pairs(a: np.ndarray, b: np.ndarray):
    """Index pairs of pieces whose bounding boxes share a hash bucket.

    Buckets are at least as large as the longest piece, so every piece
    touches at most four of them and no overlapping pair is missed.
    """
    lo = np.minimum(a.min(axis=1).min(axis=0), b.min(axis=1).min(axis=0))
    size = max(float(np.ptp(a, axis=1).max()), float(np.ptp(b, axis=1).max()), 1e-9) * (1 + 1e-9)

    def buckets(segs):
        k0 = np.floor((segs.min(axis=1) - lo) / size).astype(np.int64)
        k1 = np.floor((segs.max(axis=1) - lo) / size).astype(np.int64)
        return k0, k1

    table: dict[tuple[int, int], list[int]] = {}
    for n, (x0, y0, x1, y1) in enumerate(np.hstack(buckets(b)).tolist()):
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                table.setdefault((x, y), []).append(n)
    pairs = set()
    for n, (x0, y0, x1, y1) in enumerate(np.hstack(buckets(a)).tolist()):
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                pairs.update((n, m) for m in table.get((x, y), ()))
    if not pairs:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    ia, ib = np.array(sorted(pairs)).T
    return ia, ib


def _segment_crossings(a: np.ndarray, b: np.ndarray):
    """Crossings between every piece of ``a`` (n, 2, 2) and ``b`` (m, 2, 2).

    Returns the crossing points and the index pairs that produced them.
    """
    if len(a) == 0 or len(b) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2), dtype=int)
    ia, ib = _candidate_pairs(a, b)
    if len(ia) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2), dtype=int)
    p, r = a[ia, 0], a[ia, 1] - a[ia, 0]
    q, s = b[ib, 0], b[ib, 1] - b[ib, 0]
    cross = r[:, 0] * s[:, 1] - r[:, 1] * s[:, 0]
    qp = q - p
    scale = np.hypot(*r.T) * np.hypot(*s.T)
    ok = np.abs(cross) > 1e-12 * np.maximum(scale, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / cross
        u = (qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]) / cross
    eps = 1e-12
    ok &= (t >= -eps) & (t <= 1 + eps) & (u >= -eps) & (u <= 1 + eps)
    pts = p[ok] + t[ok, None] * r[ok]
    return pts, np.column_stack([ia[ok], ib[ok]])


def _point_segment_distance(x: np.ndarray, segs: np.ndarray) -> float:
    if len(segs) == 0:
        return math.inf
    a, b = segs[:, 0], segs[:, 1]
    d = b - a
    L2 = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(L2 > 0, np.einsum("ij,ij->i", x - a, d) / L2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * d
    return float(np.min(np.hypot(*(proj - x).T)))


def _consensus(lines: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Least-squares point closest to a set of lines given by segments."""
    d = lines[:, 1] - lines[:, 0]
    n = np.column_stack([-d[:, 1], d[:, 0]])
    n /= np.hypot(*n.T)[:, None]
    A = n.T @ n
    b = (n * np.einsum("ij,ij->i", n, lines[:, 0])[:, None]).sum(axis=0)
    if np.linalg.cond(A) > 1e10:
        return fallback
    return np.linalg.solve(A, b)


def _clusters(points: np.ndarray, radius: float) -> list[np.ndarray]:
    """Single-linkage groups of points closer than ``radius``."""
    n = len(points)
    parent = list(range(n))

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    d = np.hypot(*(points[:, None] - points[None]).transpose(2, 0, 1))
    for a, b in zip(*np.nonzero(np.triu(d <= radius, 1))):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for k in range(n):
        groups.setdefault(find(k), []).append(k)
    return [np.array(g) for g in groups.values()]


def intersect_curves(curves, radius: float = CLUSTER_RADIUS) -> list[IntersectionPoint]:
    """Cluster the pairwise crossings of level curves.

    Each cluster becomes one point: the least-squares consensus of the
    pieces that crossed there. Sorted by residual, then by pi2.
    """
    curves = [c for c in curves]
    if len({c.functional for c in curves}) < 2:
        raise InputError("need curves of at least two distinct functionals")
    omegas = {c.omega for c in curves if c.omega is not None}
    if len(omegas) > 1:
        raise InputError("curves come from different frequencies")
    grid = next((c.grid for c in curves if c.grid is not None), None)

    edges = [c.edges() for c in curves]
    pts, pieces = [], []
    for a in range(len(curves)):
        for b in range(a + 1, len(curves)):
            if curves[a].functional == curves[b].functional:
                continue
            p, idx = _segment_crossings(edges[a], edges[b])
            pts.append(p)
            pieces += [((a, int(x)), (b, int(y))) for x, y in idx]
    if not pieces:
        return []
    pts = np.concatenate(pts)

    out = []
    for members in _clusters(pts, radius):
        used = sorted({piece for k in members for piece in pieces[k]})
        lines = np.stack([edges[c][k] for c, k in used])
        x = _consensus(lines, pts[members].mean(axis=0))
        owners = sorted({c for c, _ in used})
        residual = max(_point_segment_distance(x, edges[c]) for c in owners)
        if grid is not None:
            pi2, pi3 = (float(v) for v in grid.coords_of(x[0], x[1]))
        else:
            pi2, pi3 = float(x[0]), float(x[1])
        out.append(IntersectionPoint(
            pi2, pi3, residual, frozenset(curves[c].functional for c in owners), float(x[0]), float(x[1])
        ))
    out.sort(key=lambda p: (p.residual, p.pi2))
    return out


def _bilinear(grid: FGrid, x: float, y: float):
    """F and its lattice-coordinate partials at fractional position (x, y)."""
    n2, n3 = grid.shape
    i = int(np.clip(math.floor(x), 0, n2 - 2))
    j = int(np.clip(math.floor(y), 0, n3 - 2))
    fx, fy = x - i, y - j
    v = grid.values
    f00, f10, f01, f11 = v[i, j], v[i + 1, j], v[i, j + 1], v[i + 1, j + 1]
    f = f00 * (1 - fx) * (1 - fy) + f10 * fx * (1 - fy) + f01 * (1 - fx) * fy + f11 * fx * fy
    dfx = (f10 - f00) * (1 - fy) + (f11 - f01) * fy
    dfy = (f01 - f00) * (1 - fx) + (f11 - f10) * fx
    return f, dfx, dfy


def refine_point(grid: FGrid, target: complex, i: float, j: float) -> tuple[float, float]:
    """One Newton step on the bilinear (Re, Im) equations F(i, j) = target.

    The step is kept only if it stays within one cell and lowers |F - target|.
    """
    f, fx, fy = _bilinear(grid, i, j)
    J = np.array([[fx.real, fy.real], [fx.imag, fy.imag]])
    rhs = np.array([(target - f).real, (target - f).imag])
    try:
        step = np.linalg.solve(J, rhs)
    except np.linalg.LinAlgError:
        return i, j
    if not np.all(np.isfinite(step)) or np.hypot(*step) > 1.0:
        return i, j
    ni = float(np.clip(i + step[0], 0, grid.shape[0] - 1))
    nj = float(np.clip(j + step[1], 0, grid.shape[1] - 1))
    if abs(_bilinear(grid, ni, nj)[0] - target) >= abs(f - target):
        return i, j
    return ni, nj


# ----------------------------------------------------------------- regions

@dataclass(frozen=True)
class RegionLabel:
    label: str
    retrievable: frozenset

    @property
    def feasible(self) -> bool:
        return self.label in FEASIBLE


_RETRIEVABLE = {
    **{c: frozenset({"sigma", "dh"}) for c in "deh"},
    **{c: frozenset({"sigma"}) for c in "abcfi"},
    "g": frozenset({"sigma_dh_product"}),
}


def classify_region(pi2: float, pi3: float, k: float = 10.0, blind_threshold: float = BLIND_THRESHOLD) -> RegionLabel:
    """Operating region of a (pi2, pi3) point, labelled a..i row by row.

    Rows split on pi3 (thick, intermediate, thin); columns on pi2 * pi3
    (thin compared to the skin depth, intermediate, thickness-blind).
    """
    if not (pi2 > 0 and pi3 > 0):
        raise DomainError("pi2 and pi3 must be positive")
    if not k > 1:
        raise DomainError("k must exceed 1")
    row = 0 if pi3 >= k else 2 if pi3 <= 1 / k else 1
    prod = pi2 * pi3
    col = 0 if prod <= 1 / k else 2 if prod >= blind_threshold else 1
    label = "abcdefghi"[3 * row + col]
    return RegionLabel(label, _RETRIEVABLE[label])


def region_table(pi2_values, pi3_values, k: float = 10.0, blind_threshold: float = BLIND_THRESHOLD):
    """Region labels over a lattice; ``out[i][j]`` belongs to ``pi2[i], pi3[j]``."""
    return [[classify_region(a, b, k, blind_threshold).label for b in pi3_values] for a in pi2_values]


# -------------------------------------------------------------- estimation

@dataclass(frozen=True)
class EstimateRecord:
    omega: float
    point: IntersectionPoint | None
    region: RegionLabel | None
    sigma_hat: float | None
    dh_hat: float | None
    accepted: bool
    pi1: complex = complex("nan")
    note: str = ""
    sigma_dh_product: float | None = None

    def __post_init__(self):
        if self.accepted and (self.region is None or not self.region.feasible):
            raise InputError("only records in regions d, e or h can be accepted")
        if not self.accepted and (self.sigma_hat is not None or self.dh_hat is not None):
            raise InputError("estimates exist only for accepted records")


def level_curves(grid: FGrid, pi1: complex, omega: float | None = None) -> list[LevelCurve]:
    """The four level curves of a measured dimensionless impedance."""
    return [extract_level_curve(grid, name, functional_value(name, pi1), omega) for name in FUNCTIONALS]


def estimate_single_frequency(
    dz_meas: complex,
    omega: float,
    probe: ProbeGeometry,
    grid: FGrid,
    *,
    k: float = 10.0,
    blind_threshold: float = BLIND_THRESHOLD,
) -> EstimateRecord:
    """Estimate (sigma, dh) from one measured impedance change.

    Only the measurement, the probe and the grid are read; acceptance
    depends on where the intersection lands, never on the true plate.
    """
    if grid.probe_tag != probe.tag:
        raise InputError(f"grid was built for probe shape {grid.probe_tag}, not {probe.tag}")
    omega = float(omega)
    pi1 = to_pi1(complex(dz_meas), omega, probe)
    if not (np.isfinite(pi1.real) and np.isfinite(pi1.imag)):
        raise InputError("measured impedance must be finite")
    if pi1 == 0:
        return EstimateRecord(omega, None, None, None, None, False, pi1, "degenerate: zero impedance change")

    curves = [c for c in level_curves(grid, pi1, omega) if not c.empty]
    if len({c.functional for c in curves}) < 2:
        return EstimateRecord(omega, None, None, None, None, False, pi1, "no level curves inside the grid")
    points = intersect_curves(curves)
    if not points:
        return EstimateRecord(omega, None, None, None, None, False, pi1, "level curves do not intersect")

    labelled = [(p, classify_region(p.pi2, p.pi3, k, blind_threshold)) for p in points]
    feasible = [(p, r) for p, r in labelled if r.feasible]
    if not feasible:
        p, r = labelled[0]
        product = None
        if r.label == "g":
            product = float(sigma_from_pi2(p.pi2, omega, probe.D) * dh_from_pi3(p.pi3, probe.D))
        return EstimateRecord(omega, p, r, None, None, False, pi1, f"discarded: region {r.label}", product)

    # a second well-supported crossing outside the feasible regions means F
    # takes this value twice, and the thickness cannot be trusted
    rivals = [(p, r) for p, r in labelled if not r.feasible and p.residual < CLUSTER_RADIUS]
    if rivals:
        p, r = rivals[0]
        return EstimateRecord(omega, p, r, None, None, False, pi1, f"discarded: ambiguous, also fits region {r.label}")

    point, _ = feasible[0]
    i, j = refine_point(grid, pi1, point.i, point.j)
    pi2, pi3 = (float(v) for v in grid.coords_of(i, j))
    residual = max(
        _point_segment_distance(np.array([i, j]), c.edges()) for c in curves if c.functional in point.contributing
    )
    point = IntersectionPoint(pi2, pi3, residual, point.contributing, i, j)
    region = classify_region(pi2, pi3, k, blind_threshold)
    if not region.feasible:
        # refinement pushed the point across a boundary
        return EstimateRecord(omega, point, region, None, None, False, pi1, f"discarded: region {region.label}")
    sigma = float(sigma_from_pi2(pi2, omega, probe.D))
    dh = float(dh_from_pi3(pi3, probe.D))
    return EstimateRecord(omega, point, region, sigma, dh, True, pi1)


# ------------------------------------------------------ physical mapping

def map_point_to_physical(pi2, pi3, omega, D):
    """(sigma, dh) of a (pi2, pi3) point at angular frequency ``omega``."""
    return sigma_from_pi2(pi2, omega, D), dh_from_pi3(pi3, D)


def map_physical_to_pi(sigma, dh, omega, D):
    return pi2_of(omega, sigma, D), pi3_of(dh, D)


def map_curve_to_physical(curve: LevelCurve, omega: float | None = None, D: float | None = None) -> list[np.ndarray]:
    """Polylines of a level curve in the (sigma, dh) plane."""
    omega = curve.omega if omega is None else omega
    if omega is None:
        raise InputError("the curve carries no frequency; pass omega")
    if D is None or not D > 0:
        raise InputError("probe diameter D must be positive")
    out = []
    for seg in curve.segments:
        s, h = map_point_to_physical(seg[:, 0], seg[:, 1], omega, D)
        out.append(np.column_stack([s, h]))
    return out


# ------------------------------------------------------------------ fusion

@dataclass(frozen=True)
class FusedEstimate:
    sigma: float
    dh: float
    sigma_std: float
    dh_std: float
    kept: tuple[EstimateRecord, ...]
    rejected: tuple[EstimateRecord, ...]
    residuals: dict

    @property
    def n(self) -> int:
        return len(self.kept)


MAD_FLOOR = 1e-3


def mad_outliers(values, rel_floor: float = MAD_FLOOR) -> np.ndarray:
    """Mask of values farther than 3 median absolute deviations from the median.

    The deviation scale never drops below ``rel_floor * |median|``, so
    estimates that agree to within discretisation noise are all kept.
    """
    x = np.asarray(values, dtype=float)
    med = np.median(x)
    dev = np.abs(x - med)
    scale = max(float(np.median(dev)), rel_floor * abs(float(med)))
    return dev > 3.0 * scale


def _std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def fuse_multi_frequency(records) -> FusedEstimate:
    """Average the accepted per-frequency estimates after MAD rejection.

    A record is dropped when either its conductivity or its thickness is
    an outlier.
    """
    records = list(records)
    accepted = [r for r in records if r.accepted]
    if not accepted:
        regions = sorted({r.region.label for r in records if r.region is not None})
        raise EstimationInfeasibleError(
            "no frequency produced an estimate in regions d, e or h"
            + (f" (regions seen: {', '.join(regions)})" if regions else ""),
            regions,
        )
    s = np.array([r.sigma_hat for r in accepted])
    h = np.array([r.dh_hat for r in accepted])
    out = mad_outliers(s) | mad_outliers(h)
    kept = tuple(r for r, o in zip(accepted, out) if not o)
    rejected = tuple(r for r, o in zip(accepted, out) if o)
    if rejected:
        log.info("rejected %d outlying frequencies", len(rejected))
    s, h = s[~out], h[~out]
    return FusedEstimate(
        float(s.mean()), float(h.mean()), _std(s), _std(h), kept, rejected,
        {r.omega: r.point.residual for r in accepted},
    )


# ------------------------------------------------------------- sensitivity

def thickness_sensitivity(grid: FGrid) -> np.ndarray:
    """|d|F|/d pi3 * pi3 / |F|| at every grid node."""
    mag = np.abs(grid.values)
    dlog = np.gradient(np.log(mag), np.log(grid.pi3_axis), axis=1)
    return np.abs(dlog)


def sensitivity_along_product(grid: FGrid, product: float) -> np.ndarray:
    """Thickness sensitivity on each pi3 row at pi2 = product / pi3.

    Rows whose pi2 falls outside the grid give NaN.
    """
    sens = thickness_sensitivity(grid)
    logp2 = np.log(grid.pi2_axis)
    out = np.full(len(grid.pi3_axis), np.nan)
    for j, p3 in enumerate(grid.pi3_axis):
        target = math.log(product / p3)
        if logp2[0] <= target <= logp2[-1]:
            out[j] = np.interp(target, logp2, sens[:, j])
    return out
