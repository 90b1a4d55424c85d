"""Sparse multivariate polynomials and matrix polynomials.

All coefficients are double-precision floats; after every arithmetic
operation terms with ``|coeff| < COEFF_TOL`` are dropped so each polynomial
has a unique canonical term map.  Terms are kept in graded-lexicographic
order (total degree first, then lexicographic with earlier variables more
significant), which makes every derived vector/matrix construction
deterministic.

Objects are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

COEFF_TOL = 1e-12


class ShapeError(ValueError):
    """Dimension or variable-count mismatch between operands."""


# ---------------------------------------------------------------------------
# monomials
# ---------------------------------------------------------------------------


class Monomial:
    """A power product x1^e1 * ... * xn^en, stored as an exponent tuple."""

    __slots__ = ("exponents",)

    def __init__(self, exponents: Iterable[int]):
        exps = tuple(int(e) for e in exponents)
        if any(e < 0 for e in exps):
            raise ValueError(f"negative exponent in {exps}")
        object.__setattr__(self, "exponents", exps)

    def __setattr__(self, name, value):  # immutable
        raise AttributeError("Monomial is immutable")

    @property
    def nvars(self) -> int:
        return len(self.exponents)

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def __mul__(self, other: "Monomial") -> "Monomial":
        if len(self.exponents) != len(other.exponents):
            raise ShapeError("monomial variable counts differ")
        return Monomial(a + b for a, b in zip(self.exponents, other.exponents))

    def divides(self, other: "Monomial") -> bool:
        if len(self.exponents) != len(other.exponents):
            raise ShapeError("monomial variable counts differ")
        return all(a <= b for a, b in zip(self.exponents, other.exponents))

    def __truediv__(self, other: "Monomial") -> "Monomial":
        if not other.divides(self):
            raise ValueError(f"{other} does not divide {self}")
        return Monomial(a - b for a, b in zip(self.exponents, other.exponents))

    def sort_key(self):
        """Graded-lex key: degree first, then x1-major lexicographic."""
        return (self.degree, tuple(-e for e in self.exponents))

    def __lt__(self, other: "Monomial") -> bool:
        return self.sort_key() < other.sort_key()

    def __eq__(self, other) -> bool:
        return isinstance(other, Monomial) and self.exponents == other.exponents

    def __hash__(self) -> int:
        return hash(self.exponents)

    def __repr__(self) -> str:
        if self.degree == 0:
            return "1"
        parts = []
        for i, e in enumerate(self.exponents):
            if e == 1:
                parts.append(f"x{i + 1}")
            elif e > 1:
                parts.append(f"x{i + 1}^{e}")
        return "*".join(parts)


def enumerate_monomials(nvars: int, dmin: int, dmax: int,
                        active: Sequence[int] | None = None) -> list[Monomial]:
    """All monomials with total degree in [dmin, dmax], graded-lex order.

    ``active`` restricts the nonzero exponents to the given variable
    indices (others stay zero), used when a constraint only touches a
    subset of the ambient variables.
    """
    if dmin < 0 or dmax < dmin:
        raise ValueError(f"invalid degree range [{dmin}, {dmax}]")
    idx = list(range(nvars)) if active is None else sorted(active)
    out: list[Monomial] = []

    def fill(pos: int, remaining: int, parts: list[int]):
        if pos == len(idx) - 1:
            parts.append(remaining)
            exps = [0] * nvars
            for k, e in zip(idx, parts):
                exps[k] = e
            out.append(Monomial(exps))
            parts.pop()
            return
        for e in range(remaining, -1, -1):
            parts.append(e)
            fill(pos + 1, remaining - e, parts)
            parts.pop()

    for d in range(dmin, dmax + 1):
        if not idx:
            if d == 0:
                out.append(Monomial([0] * nvars))
            continue
        fill(0, d, [])
    return out


# ---------------------------------------------------------------------------
# polynomials
# ---------------------------------------------------------------------------


class Polynomial:
    """Sparse polynomial in ``nvars`` variables with float coefficients."""

    __slots__ = ("nvars", "terms", "_eval_cache")

    def __init__(self, nvars: int, terms: Mapping[Monomial, float] | None = None):
        object.__setattr__(self, "nvars", int(nvars))
        canon: dict[Monomial, float] = {}
        if terms:
            for m, c in terms.items():
                if m.nvars != nvars:
                    raise ShapeError(f"monomial {m} has {m.nvars} vars, expected {nvars}")
                c = float(c)
                if abs(c) >= COEFF_TOL:
                    canon[m] = canon.get(m, 0.0) + c
            canon = {m: c for m, c in canon.items() if abs(c) >= COEFF_TOL}
        object.__setattr__(self, "terms", canon)
        object.__setattr__(self, "_eval_cache", None)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zero(nvars: int) -> "Polynomial":
        return Polynomial(nvars)

    @staticmethod
    def constant(c: float, nvars: int) -> "Polynomial":
        return Polynomial(nvars, {Monomial([0] * nvars): c})

    @staticmethod
    def variable(i: int, nvars: int) -> "Polynomial":
        exps = [0] * nvars
        exps[i] = 1
        return Polynomial(nvars, {Monomial(exps): 1.0})

    @staticmethod
    def from_monomial(m: Monomial, coeff: float = 1.0) -> "Polynomial":
        return Polynomial(m.nvars, {m: coeff})

    # -- inspection ---------------------------------------------------------

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        if not self.terms:
            return -1
        return max(m.degree for m in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def is_monomial(self) -> bool:
        return len(self.terms) == 1 and abs(next(iter(self.terms.values())) - 1.0) < COEFF_TOL

    def coeff(self, m: Monomial) -> float:
        return self.terms.get(m, 0.0)

    def sorted_terms(self) -> list[tuple[Monomial, float]]:
        return sorted(self.terms.items(), key=lambda t: t[0].sort_key())

    def max_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # -- arithmetic ---------------------------------------------------------

    def _check_compat(self, other: "Polynomial"):
        if self.nvars != other.nvars:
            raise ShapeError(f"variable counts differ: {self.nvars} vs {other.nvars}")

    def __add__(self, other) -> "Polynomial":
        other = _as_poly(other, self.nvars)
        self._check_compat(other)
        merged = dict(self.terms)
        for m, c in other.terms.items():
            merged[m] = merged.get(m, 0.0) + c
        return Polynomial(self.nvars, merged)

    __radd__ = __add__

    def __sub__(self, other) -> "Polynomial":
        return self + (-_as_poly(other, self.nvars))

    def __rsub__(self, other) -> "Polynomial":
        return _as_poly(other, self.nvars) + (-self)

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.nvars, {m: -c for m, c in self.terms.items()})

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self.nvars, {m: c * float(other) for m, c in self.terms.items()})
        other = _as_poly(other, self.nvars)
        self._check_compat(other)
        prod: dict[Monomial, float] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = m1 * m2
                prod[m] = prod.get(m, 0.0) + c1 * c2
        return Polynomial(self.nvars, prod)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        """Exact canonical-form equality."""
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def allclose(self, other: "Polynomial", tol: float = 1e-10) -> bool:
        self._check_compat(other)
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.coeff(m) - other.coeff(m)) <= tol for m in keys)

    # -- calculus & evaluation ---------------------------------------------

    def diff(self, i: int) -> "Polynomial":
        """Partial derivative with respect to variable ``i``."""
        out: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            e = m.exponents[i]
            if e == 0:
                continue
            exps = list(m.exponents)
            exps[i] = e - 1
            dm = Monomial(exps)
            out[dm] = out.get(dm, 0.0) + c * e
        return Polynomial(self.nvars, out)

    def _eval_arrays(self):
        cache = self._eval_cache
        if cache is None:
            ms = self.sorted_terms()
            emat = np.array([m.exponents for m, _ in ms], dtype=float).reshape(len(ms), self.nvars)
            coefs = np.array([c for _, c in ms], dtype=float)
            cache = (emat, coefs)
            object.__setattr__(self, "_eval_cache", cache)
        return cache

    def evaluate(self, x) -> float | np.ndarray:
        """Evaluate at a point (shape ``(nvars,)``) or batch ``(k, nvars)``."""
        x = np.asarray(x, dtype=float)
        batch = x.ndim == 2
        if x.ndim not in (1, 2) or x.shape[-1] != self.nvars:
            raise ShapeError(f"expected point of length {self.nvars}, got shape {x.shape}")
        if not self.terms:
            return np.zeros(x.shape[0]) if batch else 0.0
        emat, coefs = self._eval_arrays()
        vals = np.prod(x[..., None, :] ** emat, axis=-1) @ coefs
        return vals if batch else float(vals)

    __call__ = evaluate

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nvars": self.nvars,
            "terms": [{"exp": list(m.exponents), "coef": c} for m, c in self.sorted_terms()],
        }

    @staticmethod
    def from_dict(d: dict) -> "Polynomial":
        terms = {Monomial(t["exp"]): float(t["coef"]) for t in d["terms"]}
        return Polynomial(int(d["nvars"]), terms)

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for m, c in self.sorted_terms():
            if m.degree == 0:
                parts.append(f"{c:g}")
            elif abs(c - 1.0) < COEFF_TOL:
                parts.append(f"{m}")
            elif abs(c + 1.0) < COEFF_TOL:
                parts.append(f"-{m}")
            else:
                parts.append(f"{c:g}*{m}")
        return " + ".join(parts).replace("+ -", "- ")


def _as_poly(value, nvars: int) -> Polynomial:
    if isinstance(value, Polynomial):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Polynomial.constant(float(value), nvars)
    raise TypeError(f"cannot interpret {type(value).__name__} as Polynomial")


# ---------------------------------------------------------------------------
# matrix polynomials
# ---------------------------------------------------------------------------


class MatrixPolynomial:
    """Dense grid of polynomials sharing one variable count."""

    __slots__ = ("rows", "cols", "nvars", "entries")

    def __init__(self, entries: Sequence[Sequence[Polynomial]]):
        rows = len(entries)
        if rows == 0:
            raise ShapeError("empty matrix")
        cols = len(entries[0])
        nvars = entries[0][0].nvars
        grid = []
        for r in entries:
            if len(r) != cols:
                raise ShapeError("ragged matrix rows")
            for p in r:
                if p.nvars != nvars:
                    raise ShapeError("entries share the same nvars")
            grid.append(tuple(r))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "nvars", nvars)
        object.__setattr__(self, "entries", tuple(grid))

    def __setattr__(self, name, value):
        raise AttributeError("MatrixPolynomial is immutable")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zeros(rows: int, cols: int, nvars: int) -> "MatrixPolynomial":
        z = Polynomial.zero(nvars)
        return MatrixPolynomial([[z] * cols for _ in range(rows)])

    @staticmethod
    def identity(k: int, nvars: int) -> "MatrixPolynomial":
        one = Polynomial.constant(1.0, nvars)
        z = Polynomial.zero(nvars)
        return MatrixPolynomial([[one if i == j else z for j in range(k)] for i in range(k)])

    @staticmethod
    def from_constant(mat, nvars: int) -> "MatrixPolynomial":
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return MatrixPolynomial(
            [[Polynomial.constant(mat[i, j], nvars) for j in range(mat.shape[1])]
             for i in range(mat.shape[0])]
        )

    @staticmethod
    def column(polys: Sequence[Polynomial]) -> "MatrixPolynomial":
        return MatrixPolynomial([[p] for p in polys])

    @staticmethod
    def vstack(mats: Sequence["MatrixPolynomial"]) -> "MatrixPolynomial":
        cols = mats[0].cols
        rows = []
        for m in mats:
            if m.cols != cols:
                raise ShapeError("vstack column mismatch")
            rows.extend(list(r) for r in m.entries)
        return MatrixPolynomial(rows)

    @staticmethod
    def hstack(mats: Sequence["MatrixPolynomial"]) -> "MatrixPolynomial":
        rows = mats[0].rows
        out = [[] for _ in range(rows)]
        for m in mats:
            if m.rows != rows:
                raise ShapeError("hstack row mismatch")
            for i in range(rows):
                out[i].extend(m.entries[i])
        return MatrixPolynomial(out)

    # -- inspection ---------------------------------------------------------

    def __getitem__(self, key) -> Polynomial:
        i, j = key
        return self.entries[i][j]

    def __iter__(self) -> Iterator[tuple[Polynomial, ...]]:
        return iter(self.entries)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def degree(self) -> int:
        return max(p.degree for row in self.entries for p in row)

    def is_zero(self) -> bool:
        return all(p.is_zero() for row in self.entries for p in row)

    def max_coeff(self) -> float:
        return max(p.max_coeff() for row in self.entries for p in row)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.rows != self.cols:
            return False
        for i in range(self.rows):
            for j in range(i + 1, self.cols):
                a, b = self.entries[i][j], self.entries[j][i]
                if tol == 0.0:
                    if a != b:
                        return False
                elif not a.allclose(b, tol):
                    return False
        return True

    # -- arithmetic ---------------------------------------------------------

    def _check_same_shape(self, other: "MatrixPolynomial"):
        if self.shape != other.shape or self.nvars != other.nvars:
            raise ShapeError(f"shape/nvars mismatch: {self.shape} vs {other.shape}")

    def __add__(self, other: "MatrixPolynomial") -> "MatrixPolynomial":
        self._check_same_shape(other)
        return MatrixPolynomial(
            [[self.entries[i][j] + other.entries[i][j] for j in range(self.cols)]
             for i in range(self.rows)]
        )

    def __sub__(self, other: "MatrixPolynomial") -> "MatrixPolynomial":
        self._check_same_shape(other)
        return MatrixPolynomial(
            [[self.entries[i][j] - other.entries[i][j] for j in range(self.cols)]
             for i in range(self.rows)]
        )

    def __neg__(self) -> "MatrixPolynomial":
        return MatrixPolynomial([[-p for p in row] for row in self.entries])

    def __mul__(self, other) -> "MatrixPolynomial":
        """Scale entrywise by a scalar or a Polynomial."""
        if isinstance(other, (int, float, np.floating, np.integer, Polynomial)):
            return MatrixPolynomial([[p * other for p in row] for row in self.entries])
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other: "MatrixPolynomial") -> "MatrixPolynomial":
        if isinstance(other, np.ndarray):
            other = MatrixPolynomial.from_constant(other, self.nvars)
        if not isinstance(other, MatrixPolynomial):
            return NotImplemented
        if self.cols != other.rows:
            raise ShapeError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        if self.nvars != other.nvars:
            raise ShapeError("matmul nvars mismatch")
        zero = Polynomial.zero(self.nvars)
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = zero
                for k in range(self.cols):
                    a = self.entries[i][k]
                    b = other.entries[k][j]
                    if a.is_zero() or b.is_zero():
                        continue
                    acc = acc + a * b
                row.append(acc)
            out.append(row)
        return MatrixPolynomial(out)

    def __rmatmul__(self, other) -> "MatrixPolynomial":
        if isinstance(other, np.ndarray):
            return MatrixPolynomial.from_constant(other, self.nvars) @ self
        return NotImplemented

    @property
    def T(self) -> "MatrixPolynomial":
        return MatrixPolynomial(
            [[self.entries[i][j] for i in range(self.rows)] for j in range(self.cols)]
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, MatrixPolynomial):
            return NotImplemented
        return self.shape == other.shape and all(
            self.entries[i][j] == other.entries[i][j]
            for i in range(self.rows) for j in range(self.cols)
        )

    def allclose(self, other: "MatrixPolynomial", tol: float = 1e-10) -> bool:
        self._check_same_shape(other)
        return all(
            self.entries[i][j].allclose(other.entries[i][j], tol)
            for i in range(self.rows) for j in range(self.cols)
        )

    # -- calculus & evaluation ----------------------------------------------

    def jacobian(self) -> "MatrixPolynomial":
        """Jacobian of a column vector: entry (i, j) is d v_i / d x_j."""
        if self.cols != 1:
            raise ShapeError("jacobian requires a column vector")
        return MatrixPolynomial(
            [[self.entries[i][0].diff(j) for j in range(self.nvars)]
             for i in range(self.rows)]
        )

    def evaluate(self, x) -> np.ndarray:
        """Entrywise evaluation; batch input (k, nvars) gives (k, rows, cols)."""
        x = np.asarray(x, dtype=float)
        batch = x.ndim == 2
        shape = (x.shape[0], self.rows, self.cols) if batch else (self.rows, self.cols)
        out = np.zeros(shape)
        for i in range(self.rows):
            for j in range(self.cols):
                out[..., i, j] = self.entries[i][j].evaluate(x)
        return out

    __call__ = evaluate

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "nvars": self.nvars,
            "entries": [[p.to_dict() for p in row] for row in self.entries],
        }

    @staticmethod
    def from_dict(d: dict) -> "MatrixPolynomial":
        return MatrixPolynomial(
            [[Polynomial.from_dict(e) for e in row] for row in d["entries"]]
        )

    def __repr__(self) -> str:
        body = "; ".join(
            "[" + ", ".join(repr(p) for p in row) + "]" for row in self.entries
        )
        return f"MatrixPolynomial({self.rows}x{self.cols}, {body})"
