"""Exact linear algebra over the rationals.

Square systems are solved with Bareiss fraction-free elimination: rows are
scaled to integers first, so every intermediate quantity stays an integer
and the final back-substitution is the only place a division happens.
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd, lcm
from typing import Sequence

Matrix = list[list[Fraction]]


def as_fraction(value) -> Fraction:
    """Coerce an int, Fraction or ``"num/den"`` string to a Fraction.

    Floats are rejected: exponent arithmetic has to stay exact.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not exponents")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot use {type(value).__name__} {value!r} as an exact exponent")


def _integer_rows(rows: Sequence[Sequence[Fraction]]) -> list[list[int]]:
    out = []
    for row in rows:
        scale = lcm(*(Fraction(v).denominator for v in row)) if row else 1
        out.append([int(Fraction(v) * scale) for v in row])
    return out


def _bareiss(a: list[list[int]], ncols: int) -> tuple[list[list[int]], int, int]:
    """In-place Bareiss elimination on the first ``ncols`` columns.

    Returns the eliminated matrix, the rank reached and the permutation sign.
    """
    n = len(a)
    sign = 1
    prev = 1
    rank = 0
    for k in range(min(n, ncols)):
        pivot = next((i for i in range(k, n) if a[i][k] != 0), None)
        if pivot is None:
            return a, rank, 0
        if pivot != k:
            a[k], a[pivot] = a[pivot], a[k]
            sign = -sign
        rank += 1
        for i in range(k + 1, n):
            for j in range(k + 1, len(a[i])):
                # exact division is guaranteed by Sylvester's identity
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
            a[i][k] = 0
        prev = a[k][k]
    return a, rank, sign


def determinant(matrix: Sequence[Sequence]) -> Fraction:
    """Exact determinant of a square rational matrix."""
    n = len(matrix)
    if n == 0:
        return Fraction(1)
    if any(len(row) != n for row in matrix):
        raise ValueError("determinant needs a square matrix")
    rows = [[as_fraction(v) for v in row] for row in matrix]
    scales = [lcm(*(v.denominator for v in row)) for row in rows]
    a, rank, sign = _bareiss(_integer_rows(rows), n)
    if rank < n:
        return Fraction(0)
    denom = 1
    for s in scales:
        denom *= s
    return Fraction(sign * a[n - 1][n - 1], denom)


def solve(matrix: Sequence[Sequence], rhs: Sequence) -> list[Fraction]:
    """Solve ``matrix @ x = rhs`` exactly; raises ZeroDivisionError if singular."""
    n = len(matrix)
    if n == 0:
        return []
    aug = [[as_fraction(v) for v in row] + [as_fraction(b)] for row, b in zip(matrix, rhs)]
    a, rank, _ = _bareiss(_integer_rows(aug), n)
    if rank < n:
        raise ZeroDivisionError("singular matrix")
    x = [Fraction(0)] * n
    for i in range(n - 1, -1, -1):
        acc = Fraction(a[i][n])
        for j in range(i + 1, n):
            acc -= a[i][j] * x[j]
        x[i] = acc / a[i][i]
    return x


def nullspace(matrix: Sequence[Sequence]) -> list[list[Fraction]]:
    """Basis of the right kernel, each vector scaled to coprime integers."""
    rows = [[as_fraction(v) for v in row] for row in matrix]
    ncols = len(rows[0]) if rows else 0
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        p = next((i for i in range(r, len(rows)) if rows[i][c] != 0), None)
        if p is None:
            continue
        rows[r], rows[p] = rows[p], rows[r]
        inv = 1 / rows[r][c]
        rows[r] = [v * inv for v in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [vi - f * vr for vi, vr in zip(rows[i], rows[r])]
        pivots.append(c)
        r += 1
    basis = []
    for free in (c for c in range(ncols) if c not in pivots):
        vec = [Fraction(0)] * ncols
        vec[free] = Fraction(1)
        for i, pc in enumerate(pivots):
            vec[pc] = -rows[i][free]
        scale = lcm(*(v.denominator for v in vec))
        ints = [v * scale for v in vec]
        g = 0
        for v in ints:
            g = gcd(g, int(v))
        basis.append([v / g for v in ints])
    return basis

