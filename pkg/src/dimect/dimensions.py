"""Buckingham pi-theorem engine over an arbitrary fundamental-dimension basis.

Quantities carry exact rational exponent vectors. Given ``k`` repeating
variables, every other quantity ``q`` is turned into one dimensionless group

    pi = (prod_r  repeating_r ** alpha_r) * q

where ``alpha`` solves the ``k x k`` exact system that cancels the dimensions
of ``q``. Groups can afterwards be re-presented (powers, constant factors) to
match a preferred published form.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import rational
from .errors import ArityError, DomainError, InputError

__all__ = [
    "DimensionVector",
    "Role",
    "QuantitySpec",
    "PiGroup",
    "Presentation",
    "DimensionalSystem",
    "RepeatingSetReport",
    "check_repeating_set",
    "derive_pi_groups",
    "apply_presentation",
    "evaluate_pi_group",
    "format_group",
    "format_groups",
    "parse_system",
    "load_system",
    "rlc_system",
    "ect_system",
    "ECT_SKIN_DEPTH_PRESENTATION",
    "RLC_RECIPROCAL_PRESENTATION",
]


@dataclass(frozen=True)
class DimensionVector:
    """Exact exponents of one quantity over the active basis."""

    exponents: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "exponents", tuple(rational.as_fraction(e) for e in self.exponents)
        )

    @classmethod
    def zero(cls, k: int) -> "DimensionVector":
        return cls((Fraction(0),) * k)

    def __len__(self) -> int:
        return len(self.exponents)

    def __iter__(self):
        return iter(self.exponents)

    def __getitem__(self, i: int) -> Fraction:
        return self.exponents[i]

    def _check(self, other: "DimensionVector"):
        if len(other) != len(self):
            raise ArityError(f"basis size mismatch: {len(self)} vs {len(other)}")

    def __add__(self, other: "DimensionVector") -> "DimensionVector":
        self._check(other)
        return DimensionVector(tuple(a + b for a, b in zip(self, other)))

    def __sub__(self, other: "DimensionVector") -> "DimensionVector":
        self._check(other)
        return DimensionVector(tuple(a - b for a, b in zip(self, other)))

    def scale(self, factor) -> "DimensionVector":
        f = rational.as_fraction(factor)
        return DimensionVector(tuple(f * a for a in self))

    @property
    def is_dimensionless(self) -> bool:
        return all(a == 0 for a in self.exponents)


class Role(str, Enum):
    INDEPENDENT = "independent"
    DEPENDENT = "dependent"
    REPEATING_CANDIDATE = "repeating-candidate"


@dataclass(frozen=True)
class QuantitySpec:
    name: str
    dimension: DimensionVector
    role: Role = Role.INDEPENDENT

    def __post_init__(self):
        if not self.name or not self.name.isidentifier():
            raise InputError(f"quantity name {self.name!r} is not an identifier")
        if not isinstance(self.dimension, DimensionVector):
            object.__setattr__(self, "dimension", DimensionVector(tuple(self.dimension)))
        object.__setattr__(self, "role", Role(self.role))


@dataclass(frozen=True)
class PiGroup:
    """A dimensionless monomial ``coefficient * prod(q ** exponent)``.

    ``source`` names the non-repeating quantity the group was built around;
    ``coefficient`` is a pure number introduced by a presentation transform.
    """

    exponents: Mapping[str, Fraction]
    name: str = ""
    source: str | None = None
    coefficient: float = 1.0

    def __post_init__(self):
        clean = {k: rational.as_fraction(v) for k, v in self.exponents.items()}
        object.__setattr__(self, "exponents", {k: v for k, v in clean.items() if v != 0})

    def dimension(self, system: "DimensionalSystem") -> DimensionVector:
        total = DimensionVector.zero(system.k)
        for qname, alpha in self.exponents.items():
            total = total + system.quantity(qname).dimension.scale(alpha)
        return total

    def is_dimensionless(self, system: "DimensionalSystem") -> bool:
        return self.dimension(system).is_dimensionless


@dataclass(frozen=True)
class Presentation:
    """Re-presents a group as ``coefficient * group ** power``."""

    power: Fraction = Fraction(1)
    coefficient: float = 1.0
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "power", rational.as_fraction(self.power))
        if self.power == 0:
            raise DomainError("a zero power destroys the group")


@dataclass(frozen=True)
class DimensionalSystem:
    basis: tuple[str, ...]
    quantities: tuple[QuantitySpec, ...]
    repeating: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "basis", tuple(self.basis))
        object.__setattr__(self, "quantities", tuple(self.quantities))
        object.__setattr__(self, "repeating", tuple(self.repeating))
        names = [q.name for q in self.quantities]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise InputError(f"duplicate quantity names: {sorted(dupes)}")
        if len(set(self.basis)) != len(self.basis):
            raise InputError("duplicate basis dimension names")
        for q in self.quantities:
            if len(q.dimension) != len(self.basis):
                raise ArityError(
                    f"{q.name} has {len(q.dimension)} exponents, basis has {len(self.basis)}"
                )

    @property
    def k(self) -> int:
        return len(self.basis)

    @property
    def n(self) -> int:
        return len(self.quantities)

    @property
    def p(self) -> int:
        return self.n - self.k

    def quantity(self, name: str) -> QuantitySpec:
        for q in self.quantities:
            if q.name == name:
                return q
        raise InputError(f"unknown quantity {name!r}")

    def repeating_matrix(self) -> list[list[Fraction]]:
        """Rows are basis dimensions, columns are repeating variables."""
        cols = [self.quantity(r).dimension for r in self.repeating]
        return [[c[d] for c in cols] for d in range(self.k)]


@dataclass(frozen=True)
class RepeatingSetReport:
    ok: bool
    violations: tuple[str, ...] = ()
    determinant: Fraction = Fraction(0)
    dimensionless_combination: Mapping[str, Fraction] | None = None

    def __bool__(self) -> bool:
        return self.ok


def check_repeating_set(system: DimensionalSystem) -> RepeatingSetReport:
    """Validate the repeating variables of ``system``.

    The set is valid when the exponent matrix of the repeating variables is
    invertible over the rationals (so their monomials span the basis and no
    nontrivial product of them is dimensionless) and none of them is a
    declared dependent variable.
    """
    for name in system.repeating:
        system.quantity(name)
    if len(system.repeating) != system.k:
        raise ArityError(
            f"{len(system.repeating)} repeating variables given, basis needs {system.k}"
        )
    if len(set(system.repeating)) != len(system.repeating):
        raise InputError("repeating variables must be distinct")

    violations = []
    matrix = system.repeating_matrix()
    det = rational.determinant(matrix)
    combo = None
    if det == 0:
        kernel = rational.nullspace(matrix)[0]
        if next(a for a in kernel if a != 0) < 0:
            kernel = [-a for a in kernel]
        combo = {name: a for name, a in zip(system.repeating, kernel) if a != 0}
        violations.append(
            "singular exponent matrix: "
            + format_group(PiGroup(combo), ordering=system.repeating)
            + " is dimensionless"
        )
    dependents = [r for r in system.repeating if system.quantity(r).role is Role.DEPENDENT]
    if dependents:
        violations.append(f"dependent variables cannot repeat: {', '.join(dependents)}")
    return RepeatingSetReport(not violations, tuple(violations), det, combo)


def derive_pi_groups(
    system: DimensionalSystem,
    presentation: Mapping[str, Presentation] | None = None,
) -> list[PiGroup]:
    """Build the ``n - k`` canonical pi groups of ``system``.

    Each non-repeating quantity appears with exponent +1 in its own group.
    ``presentation`` maps a source quantity name to a transform applied after
    the canonical group is built.
    """
    report = check_repeating_set(system)
    if not report.ok:
        raise DomainError("invalid repeating set: " + "; ".join(report.violations))
    presentation = dict(presentation or {})
    matrix = system.repeating_matrix()
    groups = []
    others = [q for q in system.quantities if q.name not in system.repeating]
    for i, q in enumerate(others, start=1):
        rhs = [-e for e in q.dimension]
        alpha = rational.solve(matrix, rhs)
        exps = dict(zip(system.repeating, alpha))
        exps[q.name] = Fraction(1)
        group = PiGroup(exps, name=f"pi_{i}", source=q.name)
        assert group.is_dimensionless(system)
        if q.name in presentation:
            group = apply_presentation(group, presentation.pop(q.name))
        groups.append(group)
    if presentation:
        raise InputError(f"presentation given for unknown groups: {sorted(presentation)}")
    return groups


def apply_presentation(group: PiGroup, transform: Presentation) -> PiGroup:
    exps = {k: v * transform.power for k, v in group.exponents.items()}
    coeff = transform.coefficient * group.coefficient ** float(transform.power)
    return PiGroup(exps, name=transform.name or group.name, source=group.source, coefficient=coeff)


def _power(base, exponent: Fraction):
    if base == 0:
        if exponent < 0:
            raise DomainError("zero raised to a negative power")
        return 0.0 if exponent > 0 else 1.0
    if exponent.denominator == 1:
        return base ** int(exponent)
    if isinstance(base, complex) or base < 0:
        return cmath.exp(float(exponent) * cmath.log(base))
    return math.exp(float(exponent) * math.log(base))


def evaluate_pi_group(group: PiGroup, values: Mapping[str, object]):
    """Numerical value of ``group`` for the given SI values.

    Scalars give a scalar (complex if any factor is complex); array values,
    such as a probe shape vector, are broadcast elementwise.
    """
    missing = [q for q in group.exponents if q not in values]
    if missing:
        raise InputError(f"no value for {', '.join(missing)}")
    result = group.coefficient
    for qname, alpha in group.exponents.items():
        v = values[qname]
        if isinstance(v, (np.ndarray, list, tuple)):
            arr = np.asarray(v)
            if np.any(arr == 0) and alpha < 0:
                raise DomainError(f"{qname} has a zero entry raised to {alpha}")
            if alpha.denominator == 1:
                factor = arr.astype(np.result_type(arr, float)) ** int(alpha)
            else:
                factor = np.power(arr.astype(complex) if np.any(arr < 0) else arr, float(alpha))
        else:
            try:
                factor = _power(v, alpha)
            except ZeroDivisionError as exc:
                raise DomainError(str(exc)) from exc
        result = result * factor
    return result


def _format_exponent(e: Fraction) -> str:
    if e == 1:
        return ""
    if e.denominator == 1:
        return f"^{e.numerator}"
    return f"^({e.numerator}/{e.denominator})"


def format_group(group: PiGroup, ordering: Sequence[str] | None = None) -> str:
    """Stable text form, e.g. ``R * E^-1 * I``."""
    names = list(group.exponents)
    if ordering is not None:
        rank: dict[str, int] = {}
        for i, n in enumerate(ordering):
            rank.setdefault(n, i)
        names.sort(key=lambda n: (rank.get(n, len(rank)), n))
    body = " * ".join(f"{n}{_format_exponent(group.exponents[n])}" for n in names) or "1"
    if group.coefficient != 1.0:
        body = f"{group.coefficient!r} * {body}"
    return body


def format_groups(system: DimensionalSystem, groups: Iterable[PiGroup]) -> str:
    order = list(system.repeating) + [q.name for q in system.quantities]
    return "\n".join(f"{g.name} = {format_group(g, order)}" for g in groups)


def parse_system(text: str) -> tuple[DimensionalSystem, dict[str, Presentation]]:
    """Read a system definition written in TOML.

    Layout::

        basis = ["A", "V", "T"]
        repeating = ["R", "E", "omega"]

        [[quantity]]
        name = "R"
        dims = [-1, 1, 0]          # ints or "num/den" strings
        role = "independent"       # optional

        [presentation.C]           # optional, keyed by source quantity
        power = "-1"
        coefficient = 1.0
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"malformed system file: {exc}") from exc
    try:
        basis = doc["basis"]
        repeating = doc.get("repeating", [])
        quantities = [
            QuantitySpec(
                q["name"],
                DimensionVector(tuple(rational.as_fraction(e) for e in q["dims"])),
                q.get("role", "independent"),
            )
            for q in doc.get("quantity", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed system file: {exc}") from exc
    pres = {
        src: Presentation(
            rational.as_fraction(str(spec.get("power", 1))),
            float(spec.get("coefficient", 1.0)),
            spec.get("name"),
        )
        for src, spec in doc.get("presentation", {}).items()
    }
    return DimensionalSystem(tuple(basis), tuple(quantities), tuple(repeating)), pres


def load_system(path) -> tuple[DimensionalSystem, dict[str, Presentation]]:
    return parse_system(Path(path).read_text(encoding="utf-8"))


def _q(name, dims, role=Role.INDEPENDENT):
    return QuantitySpec(name, DimensionVector(tuple(dims)), role)


def rlc_system(repeating: Sequence[str] = ("R", "E", "omega")) -> DimensionalSystem:
    """Series RLC circuit over the basis (A, V, T); the current is dependent."""
    return DimensionalSystem(
        ("A", "V", "T"),
        (
            _q("omega", (0, 0, -1)),
            _q("E", (0, 1, 0)),
            _q("R", (-1, 1, 0)),
            _q("I", (1, 0, 0), Role.DEPENDENT),
            _q("L", (-1, 1, 1)),
            _q("C", (1, -1, 1)),
        ),
        tuple(repeating),
    )


def ect_system(repeating: Sequence[str] = ("nu0", "omega", "D")) -> DimensionalSystem:
    """Coaxial T/R probe over a plate, basis (L, T, Ohm).

    ``dZ`` stands for the mutual-impedance change per turn pair and is the
    dependent variable; ``t`` (probe shape) and ``theta`` are already
    dimensionless.
    """
    return DimensionalSystem(
        ("L", "T", "Ohm"),
        (
            _q("dZ", (0, 0, 1), Role.DEPENDENT),
            _q("sigma", (-1, 0, -1)),
            _q("nu0", (1, -1, -1)),
            _q("omega", (0, -1, 0)),
            _q("dh", (1, 0, 0)),
            _q("l0", (1, 0, 0)),
            _q("D", (1, 0, 0)),
            _q("t", (0, 0, 0)),
            _q("theta", (0, 0, 0)),
        ),
        tuple(repeating),
    )


# sigma*omega*D^2/nu0 -> D*sqrt(omega*sigma/(2*nu0)) = D/skin_depth
ECT_SKIN_DEPTH_PRESENTATION = {"sigma": Presentation(Fraction(1, 2), 2.0 ** -0.5)}

# omega*R*C -> 1/(omega*R*C)
RLC_RECIPROCAL_PRESENTATION = {"C": Presentation(Fraction(-1))}
