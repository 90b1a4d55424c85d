"""Power vectors, their factorization, and the input monomial matrix.

A basis fixes the monomial stack ``Z(x)`` (everything the drift may
contain), a smaller stack ``Zhat(x)`` whose first n entries are the state
itself, the factor matrix ``H(x)`` with ``Z = H * Zhat``, and the input
monomial matrix ``W(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polyalg import (
    MatrixPolynomial,
    Monomial,
    Polynomial,
    enumerate_monomials,
)


class FactorizationError(ValueError):
    """A power-vector entry is not divisible by any candidate factor."""


def build_power_vector(n: int, dmin: int, dmax: int) -> MatrixPolynomial:
    """Column of all monomials in n variables with degree in [dmin, dmax].

    Entries are in graded-lex order, so the layout is reproducible across
    runs and machines.
    """
    if not (1 <= dmin <= dmax):
        raise ValueError(f"invalid degree range [{dmin}, {dmax}]; need 1 <= dmin <= dmax")
    monos = enumerate_monomials(n, dmin, dmax)
    return MatrixPolynomial.column([Polynomial.from_monomial(m) for m in monos])


def _entry_monomials(vec: MatrixPolynomial, what: str) -> list[Monomial]:
    if vec.cols != 1:
        raise ValueError(f"{what} must be a column vector")
    monos = []
    for i in range(vec.rows):
        p = vec[i, 0]
        if not p.is_monomial():
            raise ValueError(f"{what} entry {i} is not a plain monomial: {p}")
        monos.append(next(iter(p.terms)))
    return monos


def factorize(Z: MatrixPolynomial, Zhat: MatrixPolynomial) -> MatrixPolynomial:
    """Factor matrix H with Z(x) = H(x) * Zhat(x), one nonzero entry per row.

    Row i is assigned to the dividing Zhat entry of maximal degree, ties
    broken by lowest index, making the assignment deterministic.
    """
    z_monos = _entry_monomials(Z, "Z")
    zh_monos = _entry_monomials(Zhat, "Zhat")
    nvars = Z.nvars
    zero = Polynomial.zero(nvars)
    rows = []
    for i, zm in enumerate(z_monos):
        candidates = [(zh.degree, -j) for j, zh in enumerate(zh_monos) if zh.divides(zm)]
        if not candidates:
            raise FactorizationError(
                f"monomial {zm} (row {i} of Z) is divisible by no entry of Zhat"
            )
        deg, negj = max(candidates)
        j = -negj
        row = [zero] * len(zh_monos)
        row[j] = Polynomial.from_monomial(zm / zh_monos[j])
        rows.append(row)
    return MatrixPolynomial(rows)


@dataclass(frozen=True)
class BasisSpec:
    """Monomial stacks and their factorization for one synthesis problem."""

    n: int
    m: int
    Z: MatrixPolynomial
    Zhat: MatrixPolynomial
    H: MatrixPolynomial
    W: MatrixPolynomial

    @property
    def N(self) -> int:
        return self.Z.rows

    @property
    def p(self) -> int:
        return self.Zhat.rows

    @property
    def q(self) -> int:
        return self.W.rows

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "Z": self.Z.to_dict(),
            "Zhat": self.Zhat.to_dict(),
            "H": self.H.to_dict(),
            "W": self.W.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "BasisSpec":
        return BasisSpec(
            n=int(d["n"]),
            m=int(d["m"]),
            Z=MatrixPolynomial.from_dict(d["Z"]),
            Zhat=MatrixPolynomial.from_dict(d["Zhat"]),
            H=MatrixPolynomial.from_dict(d["H"]),
            W=MatrixPolynomial.from_dict(d["W"]),
        )


def make_basis(n: int, m: int, dmax: int, dmin: int = 1, dmax_hat: int = 1,
               W: MatrixPolynomial | None = None) -> BasisSpec:
    """Standard basis: Z = degrees dmin..dmax, Zhat = degrees 1..dmax_hat.

    The default ``dmax_hat=1`` keeps the Lyapunov stack at ``Zhat = x``;
    larger stacks grow the semidefinite program quickly.  ``W=None`` means
    an input vector field independent of the state (W = I_m).
    """
    Z = build_power_vector(n, dmin, dmax)
    Zhat = build_power_vector(n, 1, dmax_hat)
    H = factorize(Z, Zhat)
    if W is None:
        W = MatrixPolynomial.identity(m, n)
    if W.cols != m:
        raise ValueError(f"W must have {m} columns, got {W.cols}")
    return BasisSpec(n=n, m=m, Z=Z, Zhat=Zhat, H=H, W=W)


@dataclass(frozen=True)
class BasisDiagnostics:
    checks: tuple[tuple[str, bool, str], ...]

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failed(self) -> list[str]:
        return [name for name, ok, _ in self.checks if not ok]

    def __repr__(self) -> str:
        lines = [f"[{'pass' if ok else 'FAIL'}] {name}: {detail}"
                 for name, ok, detail in self.checks]
        return "\n".join(lines)


def validate_basis(spec: BasisSpec) -> BasisDiagnostics:
    """Check the standing structural requirements of a basis."""
    checks: list[tuple[str, bool, str]] = []

    ok = spec.Zhat.rows >= spec.n and all(
        spec.Zhat[i, 0] == Polynomial.variable(i, spec.n) for i in range(min(spec.n, spec.Zhat.rows))
    )
    checks.append(("first_n_components_equal_x", ok,
                   "Zhat must start with the state variables"))

    origin = np.zeros(spec.n)
    zh0 = spec.Zhat.evaluate(origin)
    checks.append(("zhat_zero_at_origin", bool(np.all(zh0 == 0.0)),
                   f"Zhat(0) = {zh0.ravel().tolist()}"))

    z0 = spec.Z.evaluate(origin)
    checks.append(("z_zero_at_origin", bool(np.all(z0 == 0.0)),
                   f"Z(0) = {z0.ravel().tolist()}"))

    try:
        monos = _entry_monomials(spec.Z, "Z")
        distinct = len(set(monos)) == len(monos)
        detail = "all entries distinct monomials" if distinct else "duplicate entries"
    except ValueError as exc:
        distinct, detail = False, str(exc)
    checks.append(("z_entries_distinct", distinct, detail))

    residual = spec.Z - spec.H @ spec.Zhat
    ok = residual.max_coeff() <= 1e-10
    checks.append(("z_equals_h_zhat", ok,
                   f"max |coeff| of Z - H*Zhat = {residual.max_coeff():.3e}"))

    return BasisDiagnostics(tuple(checks))
