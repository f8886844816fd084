"""Coaxial transmit/receive probe over a nonmagnetic plate.

The mutual-impedance change is the classical axisymmetric integral over the
radial wavenumber ``kappa``::

    dZ = j w pi mu0 N1 N2 / (h1 h2 (r2 - r1)^2)
         * int_0^inf  kappa^-6 I(kappa r1, kappa r2)^2
                      (e^{-kappa z1} - e^{-kappa z2}) (e^{-kappa z3} - e^{-kappa z4})
                      Gamma(kappa) dkappa

with ``I(x1, x2) = int x J1(x) dx`` and ``Gamma`` the reflection coefficient
of a plate of thickness ``dh`` backed by air. Writing ``beta = w mu0 sigma``
and ``k1 = sqrt(kappa^2 + j beta)``::

    Gamma = -j beta (1 - e^{-2 k1 dh}) / ((kappa + k1)^2 - (k1 - kappa)^2 e^{-2 k1 dh})

which is free of overflow for thick plates and of cancellation as
``sigma -> 0``. Dividing by ``N1 N2 w D / nu0`` gives the dimensionless
impedance, a function of ``D/delta`` and ``dh/D`` once the probe shape and
lift-off ratio are fixed.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import constants, special

from .errors import DomainError, InputError, NumericalError
from .quadrature import integrate_batch

log = logging.getLogger(__name__)

MU0 = constants.mu_0
NU0 = 1.0 / MU0


@dataclass(frozen=True)
class PhysicalConstants:
    mu0: float = MU0

    @property
    def nu0(self) -> float:
        return 1.0 / self.mu0


VACUUM = PhysicalConstants()


@dataclass(frozen=True)
class ProbeGeometry:
    """Two coaxial coils of equal radii; lengths in metres.

    Coil 1 (receiver, height ``h1``) sits ``l0`` above the plate, coil 2
    (driver, height ``h2``) sits ``d`` above coil 1.
    """

    r1: float
    r2: float
    h1: float
    h2: float
    d: float
    N1: int
    N2: int
    l0: float
    theta: float = 0.0

    def __post_init__(self):
        if not 0 < self.r1 < self.r2:
            raise DomainError(f"need 0 < r1 < r2, got r1={self.r1}, r2={self.r2}")
        for name in ("h1", "h2", "d", "l0"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.N1 < 1 or self.N2 < 1:
            raise DomainError("turn counts must be at least 1")
        if self.theta != 0:
            raise DomainError("tilted probes are not supported (theta must be 0)")

    @property
    def D(self) -> float:
        return self.r2

    @property
    def t(self) -> tuple[float, float, float, float]:
        D = self.D
        return (self.r1 / D, self.h1 / D, self.h2 / D, self.d / D)

    @property
    def liftoff_ratio(self) -> float:
        return self.l0 / self.D

    @property
    def receiver_span(self) -> tuple[float, float]:
        return (self.l0, self.l0 + self.h1)

    @property
    def driver_span(self) -> tuple[float, float]:
        z3 = self.l0 + self.h1 + self.d
        return (z3, z3 + self.h2)

    @property
    def tag(self) -> str:
        """Fingerprint of the dimensionless probe description (t, l0/D)."""
        shape = self.t + (self.liftoff_ratio,)
        text = ",".join(f"{v:.12e}" for v in shape)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def scaled(self, factor: float) -> "ProbeGeometry":
        """Same shape, every length multiplied by ``factor``."""
        return replace(
            self,
            r1=self.r1 * factor,
            r2=self.r2 * factor,
            h1=self.h1 * factor,
            h2=self.h2 * factor,
            d=self.d * factor,
            l0=self.l0 * factor,
        )


DEFAULT_PROBE = ProbeGeometry(
    r1=23.60e-3, r2=23.95e-3, h1=6e-3, h2=6e-3, d=2.20e-3, N1=17, N2=17, l0=1e-3
)


@dataclass(frozen=True)
class PlateSpec:
    sigma: float
    dh: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("conductivity must be positive")
        if not self.dh > 0:
            raise DomainError("thickness must be positive")


def skin_depth(omega, sigma, mu0: float = MU0):
    """Electromagnetic skin depth sqrt(2 / (omega mu0 sigma)) in metres."""
    omega = np.asarray(omega, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(omega <= 0) or np.any(sigma <= 0):
        raise DomainError("skin depth needs positive omega and sigma")
    out = np.sqrt(2.0 / (omega * mu0 * sigma))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- coil kernel

_SERIES_CUTOFF = 2.0
_SERIES_TERMS = 24


def _series_coeffs():
    c = []
    for m in range(_SERIES_TERMS):
        c.append((-1) ** m / (2.0 ** (2 * m + 1) * math.factorial(m) * math.factorial(m + 1) * (2 * m + 3)))
    return np.array(c)


_COEFFS = _series_coeffs()


def _xj1_antiderivative(x: np.ndarray) -> np.ndarray:
    """int_0^x t J1(t) dt: power series near 0, Struve closed form elsewhere.

    Uses int t J1 = -x J0 + int J0 and int_0^x J0 = x J0 + (pi x / 2)(J1 H0 - J0 H1).
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < _SERIES_CUTOFF
    if small.any():
        xs = x[small]
        x2 = xs * xs
        acc = np.zeros_like(xs)
        for c in _COEFFS[::-1]:
            acc = acc * x2 + c
        out[small] = acc * xs ** 3
    if (~small).any():
        xl = x[~small]
        out[~small] = 0.5 * np.pi * xl * (
            special.j1(xl) * special.struve(0, xl) - special.j0(xl) * special.struve(1, xl)
        )
    return out


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_NARROW = 4.0


def _xj1_narrow(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    # two 16-point Gauss-Legendre panels; exact to rounding for widths <= 4
    out = np.zeros_like(x1)
    half = 0.25 * (x2 - x1)
    for k in range(2):
        centre = x1 + half * (2 * k + 1)
        t = centre[:, None] + half[:, None] * _GL_NODES[None, :]
        out += half * ((t * special.j1(t)) @ _GL_WEIGHTS)
    return out


def coil_radial_integral(x1, x2):
    """int_{x1}^{x2} x J1(x) dx for 0 <= x1 <= x2 (broadcasts).

    Short intervals are integrated directly to avoid cancellation between
    two nearly equal antiderivative values (thin coils).
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if np.any(x1 < 0):
        raise InputError("coil_radial_integral needs x1 >= 0")
    if np.any(x1 > x2):
        raise InputError("coil_radial_integral needs x1 <= x2")
    x1, x2 = np.broadcast_arrays(x1, x2)
    shape = x1.shape
    a, b = x1.ravel(), x2.ravel()
    out = np.empty(a.shape)
    narrow = (b - a) <= _NARROW
    if narrow.any():
        out[narrow] = _xj1_narrow(a[narrow], b[narrow])
    if (~narrow).any():
        out[~narrow] = _xj1_antiderivative(b[~narrow]) - _xj1_antiderivative(a[~narrow])
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


def _span_factor(kappa, z_lo, z_hi):
    # e^{-k z_lo} - e^{-k z_hi} without cancellation at small k
    return -np.exp(-kappa * z_lo) * np.expm1(-kappa * (z_hi - z_lo))


def geometric_kernel(kappa, r1, r2, rx_span, tx_span):
    """kappa^-6 I(kappa r1, kappa r2)^2 times both axial span factors."""
    kappa = np.asarray(kappa, dtype=float)
    radial = coil_radial_integral(kappa * r1, kappa * r2) / kappa ** 3
    return radial * radial * _span_factor(kappa, *rx_span) * _span_factor(kappa, *tx_span)


def reflection_coefficient(kappa, beta, dh):
    """Plate reflection coefficient; ``beta = omega mu0 sigma``.

    ``kappa`` has shape (m,), ``beta`` and ``dh`` shape (batch,); the result
    has shape (batch, m). ``dh = inf`` gives the half-space value.
    """
    kappa = np.asarray(kappa, dtype=float)[None, :]
    beta = np.asarray(beta, dtype=float).reshape(-1, 1)
    dh = np.asarray(dh, dtype=float).reshape(-1, 1)
    k1 = np.sqrt(kappa * kappa + 1j * beta)
    diff = 1j * beta / (k1 + kappa)  # k1 - kappa
    ssum = k1 + kappa
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.where(np.isinf(dh), 0.0, np.exp(-2.0 * k1 * np.where(np.isinf(dh), 0.0, dh)))
        one_minus_e = np.where(np.isinf(dh), 1.0, -np.expm1(-2.0 * k1 * np.where(np.isinf(dh), 0.0, dh)))
    return -1j * beta * one_minus_e / (ssum * ssum - diff * diff * e)


def halfspace_reflection_coefficient(kappa, beta):
    """Reflection coefficient of a semi-infinite conductor, (kappa - k1)/(kappa + k1)."""
    kappa = np.asarray(kappa, dtype=float)[None, :]
    beta = np.asarray(beta, dtype=float).reshape(-1, 1)
    k1 = np.sqrt(kappa * kappa + 1j * beta)
    return (kappa - k1) / (kappa + k1)


# ------------------------------------------------------------ the integral

_DECAY_NUMBER = 60.0
_J1_BOUND = 0.5819  # max |J1(x)|


@dataclass(frozen=True)
class _CoilPair:
    r1: float
    r2: float
    rx_span: tuple[float, float]
    tx_span: tuple[float, float]
    n_rx: int
    n_tx: int

    @classmethod
    def from_probe(cls, probe: ProbeGeometry) -> "_CoilPair":
        return cls(probe.r1, probe.r2, probe.receiver_span, probe.driver_span, probe.N1, probe.N2)

    def swapped(self) -> "_CoilPair":
        return _CoilPair(self.r1, self.r2, self.tx_span, self.rx_span, self.n_tx, self.n_rx)

    @property
    def prefactor(self) -> float:
        hr = self.rx_span[1] - self.rx_span[0]
        ht = self.tx_span[1] - self.tx_span[0]
        return math.pi * MU0 * self.n_rx * self.n_tx / (hr * ht * (self.r2 - self.r1) ** 2)

    @property
    def decay(self) -> float:
        return self.rx_span[0] + self.tx_span[0]

    def tail_bound(self, kmax: float) -> float:
        """Upper bound of |integrand| integrated over [kmax, inf)."""
        c = 0.5 * _J1_BOUND * (self.r2 ** 2 - self.r1 ** 2)
        s = self.decay
        return c * c * math.exp(-kmax * s) / (kmax * kmax * s)


def _kernel_integral(pair: _CoilPair, beta, dh, rtol: float) -> np.ndarray:
    """int_0^inf geometric_kernel * Gamma for each (beta, dh) pair."""
    beta, dh = np.broadcast_arrays(np.asarray(beta, dtype=float), np.asarray(dh, dtype=float))
    shape = beta.shape
    beta, dh = beta.ravel(), dh.ravel()

    kmax = _DECAY_NUMBER / pair.decay
    # panels of about half an oscillation of J1(kappa r2)
    panels = max(16, int(math.ceil(kmax * pair.r2 / math.pi)))

    def integrand(k):
        g = geometric_kernel(k, pair.r1, pair.r2, pair.rx_span, pair.tx_span)
        return reflection_coefficient(k, beta, dh) * g[None, :]

    values, errs = integrate_batch(integrand, 0.0, kmax, rtol=rtol, initial_panels=panels)
    tail = pair.tail_bound(kmax)
    scale = np.abs(values)
    nonzero = scale > 0
    if np.any(tail > rtol * scale[nonzero]):
        raise NumericalError("truncation tail exceeds tolerance", float(np.max(tail / scale[nonzero])))
    return values.reshape(shape)


def _impedance(pair: _CoilPair, sigma, dh, omega, rtol: float):
    sigma = np.asarray(sigma, dtype=float)
    dh = np.asarray(dh, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise DomainError("omega must be positive")
    if np.any(sigma < 0) or np.any(dh <= 0):
        raise DomainError("need sigma >= 0 and dh > 0")
    sigma, dh, omega = np.broadcast_arrays(sigma, dh, omega)
    integral = _kernel_integral(pair, omega * MU0 * sigma, dh, rtol)
    return 1j * omega * pair.prefactor * integral


def mutual_impedance_delta(probe: ProbeGeometry, plate: PlateSpec | None = None, omega=None, *,
                           sigma=None, dh=None, rtol: float = 1e-9):
    """Plate-minus-air mutual impedance change in ohms.

    Either pass a :class:`PlateSpec` or ``sigma``/``dh`` arrays, which are
    broadcast against ``omega`` and integrated as one batch.
    """
    if plate is not None:
        sigma, dh = plate.sigma, plate.dh
    if sigma is None or dh is None or omega is None:
        raise InputError("need a plate (or sigma and dh) and omega")
    out = _impedance(_CoilPair.from_probe(probe), sigma, dh, omega, rtol)
    return complex(out) if out.ndim == 0 else out


def to_pi1(dz, omega, probe: ProbeGeometry):
    """Dimensionless impedance dZ nu0 / (N1 N2 omega D)."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise DomainError("omega must be positive")
    out = np.asarray(dz) * NU0 / (probe.N1 * probe.N2 * omega * probe.D)
    return complex(out) if out.ndim == 0 else out


def from_pi1(pi1, omega, probe: ProbeGeometry):
    """Inverse of :func:`to_pi1`."""
    omega = np.asarray(omega, dtype=float)
    out = np.asarray(pi1) * probe.N1 * probe.N2 * omega * probe.D / NU0
    return complex(out) if out.ndim == 0 else out


def pi2_of(omega, sigma, D):
    """D / skin depth."""
    return D * np.sqrt(np.asarray(omega) * np.asarray(sigma) * MU0 / 2.0)


def pi3_of(dh, D):
    return np.asarray(dh) / D


def omega_for_pi2(pi2, sigma, D):
    """Angular frequency that puts a plate of conductivity ``sigma`` at ``pi2``."""
    return 2.0 * NU0 * (np.asarray(pi2) / D) ** 2 / np.asarray(sigma)


def sigma_from_pi2(pi2, omega, D):
    return 2.0 * NU0 / np.asarray(omega) * (np.asarray(pi2) / D) ** 2


def dh_from_pi3(pi3, D):
    return np.asarray(pi3) * D


def pi1_at(probe: ProbeGeometry, pi2, pi3, sigma_ref: float = 35e6, rtol: float = 1e-9):
    """Evaluate F(pi2, pi3) through one representative physical tuple."""
    omega = omega_for_pi2(pi2, sigma_ref, probe.D)
    dz = mutual_impedance_delta(probe, omega=omega, sigma=sigma_ref, dh=dh_from_pi3(pi3, probe.D), rtol=rtol)
    return to_pi1(dz, omega, probe)


# ----------------------------------------------------------------- F grid

GRID_MAGIC = b"DMFG"
GRID_VERSION = 1
DEFAULT_PI2_RANGE = (2.82, 28.2)
DEFAULT_PI3_RANGE = (4.2e-3, 0.42)
NARROW_PI3_RANGE = (4.2e-3, 42e-3)
DEFAULT_SIGMA_REF = 35e6


@dataclass(frozen=True, eq=False)
class FGrid:
    """F(pi2, pi3) tabulated on a rectangular lattice; ``values[i, j]``
    belongs to ``pi2_axis[i]`` and ``pi3_axis[j]``."""

    pi2_axis: np.ndarray
    pi3_axis: np.ndarray
    values: np.ndarray
    probe_tag: str
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        p2 = np.array(self.pi2_axis, dtype=float)
        p3 = np.array(self.pi3_axis, dtype=float)
        v = np.array(self.values, dtype=complex)
        if p2.ndim != 1 or p3.ndim != 1 or len(p2) < 2 or len(p3) < 2:
            raise InputError("grid axes must be 1-D with at least 2 samples")
        if np.any(np.diff(p2) <= 0) or np.any(np.diff(p3) <= 0):
            raise InputError("grid axes must be strictly increasing")
        if v.shape != (len(p2), len(p3)):
            raise InputError(f"values shape {v.shape} does not match axes")
        if not np.all(np.isfinite(v)):
            raise InputError("grid values must be finite")
        for a in (p2, p3, v):
            a.setflags(write=False)
        object.__setattr__(self, "pi2_axis", p2)
        object.__setattr__(self, "pi3_axis", p3)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def functional(self, name: str) -> np.ndarray:
        """Real field Re, Im, Abs or Phase of the tabulated values (cached)."""
        if name not in self._cache:
            fn = {"Re": np.real, "Im": np.imag, "Abs": np.abs, "Phase": np.angle}[name]
            arr = fn(self.values)
            arr.setflags(write=False)
            self._cache[name] = arr
        return self._cache[name]

    def index_of(self, pi2, pi3) -> tuple[np.ndarray, np.ndarray]:
        """Fractional lattice coordinates of (pi2, pi3)."""
        i = np.interp(pi2, self.pi2_axis, np.arange(len(self.pi2_axis)), left=np.nan, right=np.nan)
        j = np.interp(pi3, self.pi3_axis, np.arange(len(self.pi3_axis)), left=np.nan, right=np.nan)
        return i, j

    def coords_of(self, i, j) -> tuple[np.ndarray, np.ndarray]:
        """(pi2, pi3) of fractional lattice coordinates."""
        pi2 = np.interp(i, np.arange(len(self.pi2_axis)), self.pi2_axis)
        pi3 = np.interp(j, np.arange(len(self.pi3_axis)), self.pi3_axis)
        return pi2, pi3

    def cell_size(self, pi2, pi3) -> tuple[float, float]:
        """Local lattice spacing (d pi2, d pi3) around a point."""
        i, j = self.index_of(pi2, pi3)
        i0 = int(np.clip(np.floor(i), 0, len(self.pi2_axis) - 2))
        j0 = int(np.clip(np.floor(j), 0, len(self.pi3_axis) - 2))
        return (self.pi2_axis[i0 + 1] - self.pi2_axis[i0], self.pi3_axis[j0 + 1] - self.pi3_axis[j0])

    def to_bytes(self) -> bytes:
        tag = self.probe_tag.encode("ascii")
        n2, n3 = self.shape
        head = GRID_MAGIC + struct.pack("<HH", GRID_VERSION, len(tag)) + tag + struct.pack("<II", n2, n3)
        inter = np.empty((n2, n3, 2), dtype="<f8")
        inter[..., 0] = self.values.real
        inter[..., 1] = self.values.imag
        return (
            head
            + self.pi2_axis.astype("<f8").tobytes()
            + self.pi3_axis.astype("<f8").tobytes()
            + inter.tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FGrid":
        if blob[:4] != GRID_MAGIC:
            raise InputError("not an F-grid file (bad magic)")
        version, tag_len = struct.unpack_from("<HH", blob, 4)
        if version != GRID_VERSION:
            raise InputError(f"unsupported grid file version {version}")
        pos = 8
        tag = blob[pos:pos + tag_len].decode("ascii")
        pos += tag_len
        n2, n3 = struct.unpack_from("<II", blob, pos)
        pos += 8
        expected = pos + 8 * (n2 + n3 + 2 * n2 * n3)
        if len(blob) != expected:
            raise InputError(f"grid file truncated: {len(blob)} bytes, expected {expected}")
        p2 = np.frombuffer(blob, "<f8", n2, pos)
        pos += 8 * n2
        p3 = np.frombuffer(blob, "<f8", n3, pos)
        pos += 8 * n3
        inter = np.frombuffer(blob, "<f8", 2 * n2 * n3, pos).reshape(n2, n3, 2)
        return cls(p2, p3, inter[..., 0] + 1j * inter[..., 1], tag)

    def save(self, path) -> None:
        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "FGrid":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self) -> str:
        lines = ["pi2,pi3,re_f,im_f"]
        re, im = self.values.real.tolist(), self.values.imag.tolist()
        for i, p2 in enumerate(self.pi2_axis.tolist()):
            for j, p3 in enumerate(self.pi3_axis.tolist()):
                lines.append(f"{p2!r},{p3!r},{re[i][j]!r},{im[i][j]!r}")
        return "\n".join(lines) + "\n"


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary sibling file and rename, so readers never see a partial file."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def make_axis(lo: float, hi: float, n: int, spacing: str) -> np.ndarray:
    if not (0 < lo < hi):
        raise DomainError(f"axis range must satisfy 0 < lo < hi, got ({lo}, {hi})")
    if n < 2:
        raise DomainError("need at least 2 samples per axis")
    if spacing == "log":
        return np.geomspace(lo, hi, n)
    if spacing == "linear":
        return np.linspace(lo, hi, n)
    raise InputError(f"unknown spacing {spacing!r}")


def compute_f_grid(
    probe: ProbeGeometry,
    pi2_range=DEFAULT_PI2_RANGE,
    pi3_range=DEFAULT_PI3_RANGE,
    n2: int = 200,
    n3: int = 200,
    spacing: str = "log",
    sigma_ref: float = DEFAULT_SIGMA_REF,
    threads: int | None = None,
    rtol: float = 1e-9,
) -> FGrid:
    """Tabulate F by evaluating the forward model row by row.

    Each pi2 row is one quadrature batch, so the result is independent of
    how many worker threads evaluate the rows.
    """
    pi2 = make_axis(*pi2_range, n2, spacing)
    pi3 = make_axis(*pi3_range, n3, spacing)
    if not sigma_ref > 0:
        raise DomainError("reference conductivity must be positive")
    pair = _CoilPair.from_probe(probe)
    dh = dh_from_pi3(pi3, probe.D)

    def row(i: int) -> np.ndarray:
        omega = float(omega_for_pi2(pi2[i], sigma_ref, probe.D))
        try:
            dz = _impedance(pair, sigma_ref, dh, omega, rtol)
        except (NumericalError, DomainError) as exc:
            raise NumericalError(
                f"forward model failed at pi2={pi2[i]!r} (row {i}): {exc}",
                getattr(exc, "error_estimate", float("nan")),
            ) from exc
        return to_pi1(dz, omega, probe)

    workers = threads or 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, range(n2)))
    else:
        rows = [row(i) for i in range(n2)]
    grid = FGrid(pi2, pi3, np.vstack(rows), probe.tag)
    if not monotone_frequency_response(grid):
        log.warning("|dZ| is not strictly increasing with frequency on this grid")
    return grid


def monotone_frequency_response(grid: FGrid) -> bool:
    """True when |dZ| grows strictly with omega at every fixed (sigma, dh).

    At fixed sigma, dh and probe, |dZ| is proportional to pi2^2 |F|, so the
    check runs down each pi3 column.
    """
    mag = grid.pi2_axis[:, None] ** 2 * np.abs(grid.values)
    return bool(np.all(np.diff(mag, axis=0) > 0))
