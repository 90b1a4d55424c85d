"""Synthesis formulations as SOS programs and their SDP compilation.

Five formulations are supported; all search for a positive definite P and
a polynomial gain parameterization subject to one big matrix-SOS
condition (plus, for most methods, the coefficient equality Z0*Y = H*P):

* ``thm1``    -- conservative design: bounds on both the noise (RD) and the
  unknown input matrix (RB) enter through one combined factor.
* ``remark1`` -- input vector field independent of the state (W = I);
  only the noise bound RD is needed and the block shrinks to (p+T).
* ``thm2``    -- reparameterizes the unknown dynamics as one matrix, so RB
  is not needed; block size (p+q+N).
* ``cor1``    -- same conditions with the gain-times-P product K(x) as the
  decision variable, removing the equality constraint and making the
  variable count independent of the sample count T.
* ``lsq``     -- indirect design against the least-squares model X1 * pinv
  of the lifted data, RD only.

Matrix entries are affine in the decision variables; each matrix-SOS
constraint is reduced to one positive semidefinite Gram block plus linear
coefficient-matching equalities over a monomial basis of half the degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .basis import BasisSpec
from .experiment import ConfigurationError, DataSet
from .polyalg import (
    MatrixPolynomial,
    Monomial,
    Polynomial,
    enumerate_monomials,
)


class StructuralInfeasibilityError(ValueError):
    """The linear equality system is inconsistent before any solve."""


# ---------------------------------------------------------------------------
# matrices affine in the decision vector
# ---------------------------------------------------------------------------


class AffineMatrix:
    """Matrix polynomial whose coefficients are affine in decision variables.

    Stored as a constant part plus one matrix-polynomial coefficient per
    decision variable: M(x; v) = const(x) + sum_k v_k * parts[k](x).
    Products of two decision-dependent objects are rejected, which keeps
    every constructed constraint affine by construction.
    """

    __slots__ = ("rows", "cols", "nvars", "const", "parts")

    def __init__(self, const: MatrixPolynomial, parts: dict[int, MatrixPolynomial] | None = None):
        self.const = const
        self.rows = const.rows
        self.cols = const.cols
        self.nvars = const.nvars
        clean: dict[int, MatrixPolynomial] = {}
        for k, mat in (parts or {}).items():
            if mat.shape != const.shape or mat.nvars != const.nvars:
                raise ValueError("part shape/nvars mismatch")
            if not mat.is_zero():
                clean[int(k)] = mat
        self.parts = clean

    @staticmethod
    def from_const(M: MatrixPolynomial) -> "AffineMatrix":
        return AffineMatrix(M)

    @staticmethod
    def zeros(rows: int, cols: int, nvars: int) -> "AffineMatrix":
        return AffineMatrix(MatrixPolynomial.zeros(rows, cols, nvars))

    # -- algebra -------------------------------------------------------------

    def __add__(self, other) -> "AffineMatrix":
        other = _as_affine(other, self.nvars)
        parts = dict(self.parts)
        for k, mat in other.parts.items():
            parts[k] = parts[k] + mat if k in parts else mat
        return AffineMatrix(self.const + other.const, parts)

    def __sub__(self, other) -> "AffineMatrix":
        return self + (-_as_affine(other, self.nvars))

    def __rsub__(self, other) -> "AffineMatrix":
        return _as_affine(other, self.nvars) + (-self)

    __radd__ = __add__

    def __neg__(self) -> "AffineMatrix":
        return AffineMatrix(-self.const, {k: -m for k, m in self.parts.items()})

    def __matmul__(self, other) -> "AffineMatrix":
        if isinstance(other, np.ndarray):
            other = MatrixPolynomial.from_constant(other, self.nvars)
        if isinstance(other, MatrixPolynomial):
            return AffineMatrix(self.const @ other,
                                {k: m @ other for k, m in self.parts.items()})
        raise TypeError("product of two decision-dependent matrices is not affine")

    def __rmatmul__(self, other) -> "AffineMatrix":
        if isinstance(other, np.ndarray):
            other = MatrixPolynomial.from_constant(other, self.nvars)
        if isinstance(other, MatrixPolynomial):
            return AffineMatrix(other @ self.const,
                                {k: other @ m for k, m in self.parts.items()})
        raise TypeError("product of two decision-dependent matrices is not affine")

    def scale(self, s) -> "AffineMatrix":
        """Entrywise scale by a float or a known Polynomial."""
        return AffineMatrix(self.const * s, {k: m * s for k, m in self.parts.items()})

    @property
    def T(self) -> "AffineMatrix":
        return AffineMatrix(self.const.T, {k: m.T for k, m in self.parts.items()})

    @staticmethod
    def scalar_times(scalar: "AffineMatrix", M: MatrixPolynomial) -> "AffineMatrix":
        """(decision-affine 1x1 scalar polynomial) * (known matrix)."""
        if scalar.shape != (1, 1):
            raise ValueError("scalar_times needs a 1x1 affine polynomial")
        return AffineMatrix(
            M * scalar.const[0, 0],
            {k: M * part[0, 0] for k, part in scalar.parts.items()},
        )

    @staticmethod
    def block(cells) -> "AffineMatrix":
        """Assemble a block matrix from AffineMatrix / MatrixPolynomial cells."""
        rows = [[_as_affine(c, None) for c in row] for row in cells]
        nvars = rows[0][0].nvars
        keys = sorted({k for row in rows for c in row for k in c.parts})

        def stack(pick):
            return MatrixPolynomial.vstack([
                MatrixPolynomial.hstack([pick(c) for c in row]) for row in rows
            ])

        const = stack(lambda c: c.const)
        parts = {}
        for k in keys:
            parts[k] = stack(
                lambda c: c.parts.get(k, MatrixPolynomial.zeros(c.rows, c.cols, nvars))
            )
        return AffineMatrix(const, parts)

    # -- inspection ------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def degree(self) -> int:
        degs = [self.const.degree] + [m.degree for m in self.parts.values()]
        return max(degs)

    def active_x_vars(self) -> list[int]:
        active: set[int] = set()
        for mat in [self.const, *self.parts.values()]:
            for row in mat.entries:
                for poly in row:
                    for mono in poly.terms:
                        active.update(i for i, e in enumerate(mono.exponents) if e)
        return sorted(active)

    def is_symmetric(self) -> bool:
        return self.const.is_symmetric() and all(m.is_symmetric() for m in self.parts.values())

    def max_coeff(self) -> float:
        vals = [self.const.max_coeff()] + [m.max_coeff() for m in self.parts.values()]
        return max(vals)

    def entry_terms(self, i: int, j: int):
        """(constant polynomial, {var: coefficient polynomial}) of entry (i, j)."""
        parts = {k: m.entries[i][j] for k, m in self.parts.items()
                 if not m.entries[i][j].is_zero()}
        return self.const.entries[i][j], parts

    def substitute(self, v: np.ndarray) -> MatrixPolynomial:
        """Plug in a decision vector, returning a numeric matrix polynomial."""
        out = self.const
        for k, mat in self.parts.items():
            out = out + mat * float(v[k])
        return out


def _as_affine(value, nvars) -> AffineMatrix:
    if isinstance(value, AffineMatrix):
        return value
    if isinstance(value, MatrixPolynomial):
        return AffineMatrix.from_const(value)
    if isinstance(value, np.ndarray) and nvars is not None:
        return AffineMatrix.from_const(MatrixPolynomial.from_constant(value, nvars))
    raise TypeError(f"cannot interpret {type(value).__name__} as AffineMatrix")


# -- decision-variable factories ---------------------------------------------


def tri_index(i: int, j: int, n: int) -> int:
    """Flat index of (i, j), i <= j, in row-major upper-triangle storage."""
    return i * n - i * (i + 1) // 2 + j


def pack_symmetric(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    return np.array([mat[i, j] for i in range(n) for j in range(i, n)])


def unpack_symmetric(vec: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = vec[tri_index(i, j, n)]
    return out


def symmetric_var(offset: int, p: int, nvars: int) -> AffineMatrix:
    """Symmetric p x p matrix of scalar decision variables."""
    one = Polynomial.constant(1.0, nvars)
    zero = Polynomial.zero(nvars)
    parts = {}
    for i in range(p):
        for j in range(i, p):
            grid = [[zero] * p for _ in range(p)]
            grid[i][j] = one
            if i != j:
                grid[j][i] = one
            parts[offset + tri_index(i, j, p)] = MatrixPolynomial(grid)
    return AffineMatrix(MatrixPolynomial.zeros(p, p, nvars), parts)


def poly_matrix_var(offset: int, rows: int, cols: int,
                    basis: list[Monomial], nvars: int) -> AffineMatrix:
    """rows x cols matrix polynomial with one decision variable per entry/monomial."""
    zero = Polynomial.zero(nvars)
    nb = len(basis)
    parts = {}
    for i in range(rows):
        for j in range(cols):
            for a, mono in enumerate(basis):
                grid = [[zero] * cols for _ in range(rows)]
                grid[i][j] = Polynomial.from_monomial(mono)
                parts[offset + (i * cols + j) * nb + a] = MatrixPolynomial(grid)
    return AffineMatrix(MatrixPolynomial.zeros(rows, cols, nvars), parts)


def matrix_var_coefficients(v: np.ndarray, offset: int, rows: int, cols: int,
                            basis: list[Monomial], nvars: int) -> MatrixPolynomial:
    """Rebuild the numeric matrix polynomial from a solved decision vector."""
    nb = len(basis)
    grid = []
    for i in range(rows):
        row = []
        for j in range(cols):
            terms = {}
            for a, mono in enumerate(basis):
                terms[mono] = terms.get(mono, 0.0) + float(v[offset + (i * cols + j) * nb + a])
            row.append(Polynomial(nvars, terms))
        grid.append(row)
    return MatrixPolynomial(grid)


# ---------------------------------------------------------------------------
# synthesis problems
# ---------------------------------------------------------------------------


class Method(str, Enum):
    THM1 = "thm1"
    THM1_CONST_B = "remark1"
    THM2 = "thm2"
    COR1 = "cor1"
    LSQ = "lsq"


@dataclass(frozen=True)
class SynthesisProblem:
    """One formulation choice plus its degree/strictness knobs.

    ``delta`` is the strict-positivity margin of the decrease multiplier
    and ``rho`` floors the smallest eigenvalue of P; the feasible set is a
    cone, so the floor only normalizes scale.

    ``eps1_shift`` selects how strictness of eps1 is encoded:

    * ``"const"`` (default): eps1 - delta in Sigma, so eps1 >= delta > 0
      everywhere but may stay bounded.  Systems with an uncontrolled
      channel (e.g. a chain integrator state) cannot afford a decrease
      rate that grows in every direction, so this is the encoding that
      keeps the benchmark problems exactly feasible.
    * ``"quadratic"``: eps1 - delta * |x|^2 in Sigma, a stronger decrease
      demand that forces eps1 to grow radially.

    ``deg_eps2`` defaults to 2: with a constant eps2 and any gain
    parameterization of degree >= 2 (forced whenever H has degree-2 rows),
    the off-diagonal square grows two degrees faster than the diagonal
    product can absorb, so those programs are infeasible in exact
    arithmetic; a quadratic eps2 restores the degree balance.
    """

    method: Method
    spec: BasisSpec
    data: DataSet
    deg_YK: int = 2
    deg_eps1: int = 2
    deg_eps2: int = 2
    delta: float = 1e-6
    rho: float = 1e-3
    eps1_shift: str = "const"

    def __post_init__(self):
        if self.deg_eps1 < 2 or self.deg_eps1 % 2:
            raise ConfigurationError("deg_eps1 must be even and >= 2")
        if self.deg_eps2 < 0:
            raise ConfigurationError("deg_eps2 must be >= 0")
        if self.delta < 0 or self.rho <= 0:
            raise ConfigurationError("need delta >= 0 and rho > 0")
        if self.eps1_shift not in ("const", "quadratic"):
            raise ConfigurationError("eps1_shift must be 'const' or 'quadratic'")
        if self.data.RD is None:
            raise ConfigurationError("data has no noise bound; call make_noise_bound first")
        if self.method is Method.THM1 and self.data.RB is None:
            raise ConfigurationError("thm1 needs an input-matrix bound RB (set_input_bound)")
        if self.method is Method.THM1_CONST_B and not _w_is_identity(self.spec):
            raise ConfigurationError("remark1 requires W(x) = I (state-independent input field)")


def _w_is_identity(spec: BasisSpec) -> bool:
    return spec.W == MatrixPolynomial.identity(spec.m, spec.n)


@dataclass
class SOSProgram:
    """A built formulation: decision layout, SOS constraints, equalities."""

    problem: SynthesisProblem | None
    nv_core: int
    layout: dict[str, slice]
    matrix_sos: list[tuple[str, AffineMatrix]]
    psd_direct: list[tuple[str, AffineMatrix]]
    eq_zero: list[tuple[str, AffineMatrix]]
    bases: dict[str, list[Monomial]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def decision_names(self) -> list[str]:
        return list(self.layout)


# -- shared builder plumbing ---------------------------------------------------


def _core_variables(problem: SynthesisProblem, gain_name: str, gain_shape: tuple[int, int]):
    spec, n = problem.spec, problem.spec.n
    p = spec.p
    layout: dict[str, slice] = {}
    off = 0

    nP = p * (p + 1) // 2
    layout["P"] = slice(off, off + nP)
    P = symmetric_var(off, p, n)
    off += nP

    yk_basis = enumerate_monomials(n, 0, problem.deg_YK)
    rows, cols = gain_shape
    nYK = rows * cols * len(yk_basis)
    layout[gain_name] = slice(off, off + nYK)
    YK = poly_matrix_var(off, rows, cols, yk_basis, n)
    off += nYK

    e1_basis = enumerate_monomials(n, 0, problem.deg_eps1)
    layout["eps1"] = slice(off, off + len(e1_basis))
    eps1 = poly_matrix_var(off, 1, 1, e1_basis, n)
    off += len(e1_basis)

    e2_basis = enumerate_monomials(n, 0, problem.deg_eps2)
    layout["eps2"] = slice(off, off + len(e2_basis))
    eps2 = poly_matrix_var(off, 1, 1, e2_basis, n)
    off += len(e2_basis)

    bases = {gain_name: yk_basis, "eps1": e1_basis, "eps2": e2_basis}
    return layout, off, P, YK, eps1, eps2, bases


def _common_pieces(problem: SynthesisProblem):
    spec, data = problem.spec, problem.data
    n = spec.n
    dZ = spec.Zhat.jacobian()                                    # p x n
    X1 = MatrixPolynomial.from_constant(data.X1, n)              # n x T
    RDRD = data.RD @ data.RD.T                                   # n x n
    return dZ, X1, RDRD


def strictness_shift(problem: SynthesisProblem) -> Polynomial:
    """The polynomial s(x) with eps1 - s in Sigma enforcing eps1 strictness."""
    n = problem.spec.n
    if problem.eps1_shift == "quadratic":
        xsq = Polynomial.zero(n)
        for i in range(n):
            xi = Polynomial.variable(i, n)
            xsq = xsq + xi * xi
        return xsq * problem.delta
    return Polynomial.constant(problem.delta, n)


def _eps_side_constraints(problem: SynthesisProblem, eps1: AffineMatrix, eps2: AffineMatrix):
    shift = MatrixPolynomial([[strictness_shift(problem)]])
    return [
        ("eps1_strict", eps1 - AffineMatrix.from_const(shift)),
        ("eps2_sos", eps2),
    ]


def _p_floor(problem: SynthesisProblem, P: AffineMatrix):
    p, n = problem.spec.p, problem.spec.n
    floor = MatrixPolynomial.from_constant(problem.rho * np.eye(p), n)
    return ("P_floor", P - AffineMatrix.from_const(floor))


def _equality(problem: SynthesisProblem, Y: AffineMatrix, P: AffineMatrix):
    spec, data = problem.spec, problem.data
    Z0 = MatrixPolynomial.from_constant(data.Z0, spec.n)
    return ("Z0Y_minus_HP", (Z0 @ Y) - (spec.H @ P))


# -- formulation builders ------------------------------------------------------


def build_thm1(problem: SynthesisProblem) -> SOSProgram:
    """Conservative design: combined bound on [input matrix, noise]."""
    spec, data = problem.spec, problem.data
    n, p, q, T = spec.n, spec.p, spec.q, data.T
    if data.RB is None:
        raise ConfigurationError("thm1 needs RB")
    layout, nv, P, Y, eps1, eps2, bases = _core_variables(problem, "Y", (T, p))
    dZ, X1, RDRD = _common_pieces(problem)

    RERE = data.RB @ data.RB.T + RDRD
    cross = (dZ @ X1) @ Y                                        # p x p affine
    ups = -cross - cross.T - AffineMatrix.scalar_times(eps2, dZ @ RERE @ dZ.T)

    U0hat = MatrixPolynomial.vstack([
        MatrixPolynomial.from_constant(data.Ubar0, n) - spec.W @ MatrixPolynomial.from_constant(data.U0, n),
        MatrixPolynomial.identity(T, n),
    ])                                                           # (q+T) x T
    coupling = U0hat @ Y                                         # (q+T) x p affine
    eye_qT = MatrixPolynomial.identity(q + T, n)
    M = AffineMatrix.block([
        [ups - AffineMatrix.scalar_times(eps1, MatrixPolynomial.identity(p, n)), coupling.T],
        [coupling, AffineMatrix.scalar_times(eps2, eye_qT)],
    ])

    return SOSProgram(
        problem=problem, nv_core=nv, layout=layout,
        matrix_sos=[("main", M)] + _eps_side_constraints(problem, eps1, eps2),
        psd_direct=[_p_floor(problem, P)],
        eq_zero=[_equality(problem, Y, P)],
        bases=bases,
    )


def build_remark1(problem: SynthesisProblem) -> SOSProgram:
    """State-independent input vector field: RD-only, block size p + T."""
    spec, data = problem.spec, problem.data
    n, p, T = spec.n, spec.p, data.T
    if not _w_is_identity(spec):
        raise ConfigurationError("remark1 requires W(x) = I")
    layout, nv, P, Y, eps1, eps2, bases = _core_variables(problem, "Y", (T, p))
    dZ, X1, RDRD = _common_pieces(problem)

    cross = (dZ @ X1) @ Y
    ups = -cross - cross.T - AffineMatrix.scalar_times(eps2, dZ @ RDRD @ dZ.T)
    M = AffineMatrix.block([
        [ups - AffineMatrix.scalar_times(eps1, MatrixPolynomial.identity(p, n)), Y.T],
        [Y, AffineMatrix.scalar_times(eps2, MatrixPolynomial.identity(T, n))],
    ])

    return SOSProgram(
        problem=problem, nv_core=nv, layout=layout,
        matrix_sos=[("main", M)] + _eps_side_constraints(problem, eps1, eps2),
        psd_direct=[_p_floor(problem, P)],
        eq_zero=[_equality(problem, Y, P)],
        bases=bases,
    )


def _thm2_pieces(problem: SynthesisProblem):
    spec, data = problem.spec, problem.data
    n = spec.n
    dZ, X1, RDRD = _common_pieces(problem)
    W0 = MatrixPolynomial.vstack([
        spec.W @ MatrixPolynomial.from_constant(data.U0, n),
        MatrixPolynomial.from_constant(data.Z0, n),
    ])                                                           # (q+N) x T
    Wb = data.Wbar0
    gramWb = MatrixPolynomial.from_constant(Wb @ Wb.T, n)        # (q+N) x (q+N)
    cross_const = dZ @ MatrixPolynomial.from_constant(data.X1 @ Wb.T, n)   # p x (q+N)
    upsD_core = dZ @ MatrixPolynomial.from_constant(data.X1 @ data.X1.T - RDRD, n) @ dZ.T
    return dZ, W0, gramWb, cross_const, upsD_core


def build_thm2(problem: SynthesisProblem) -> SOSProgram:
    """RB-free design over the stacked data representation; block p + q + N."""
    spec, data = problem.spec, problem.data
    n, p = spec.n, spec.p
    layout, nv, P, Y, eps1, eps2, bases = _core_variables(problem, "Y", (data.T, p))
    dZ, W0, gramWb, cross_const, upsD_core = _thm2_pieces(problem)

    upsD = AffineMatrix.scalar_times(eps2, upsD_core)
    offdiag = -(W0 @ Y).T - AffineMatrix.scalar_times(eps2, cross_const)
    M = AffineMatrix.block([
        [upsD - AffineMatrix.scalar_times(eps1, MatrixPolynomial.identity(p, n)), offdiag],
        [offdiag.T, AffineMatrix.scalar_times(eps2, gramWb)],
    ])

    return SOSProgram(
        problem=problem, nv_core=nv, layout=layout,
        matrix_sos=[("main", M)] + _eps_side_constraints(problem, eps1, eps2),
        psd_direct=[_p_floor(problem, P)],
        eq_zero=[_equality(problem, Y, P)],
        bases=bases,
    )


def build_cor1(problem: SynthesisProblem) -> SOSProgram:
    """Gain-times-P decision variable: no equality constraint, T-independent size."""
    spec, data = problem.spec, problem.data
    n, p, m = spec.n, spec.p, spec.m
    layout, nv, P, K, eps1, eps2, bases = _core_variables(problem, "K", (m, p))
    dZ, W0, gramWb, cross_const, upsD_core = _thm2_pieces(problem)

    upsD = AffineMatrix.scalar_times(eps2, upsD_core)
    stack = AffineMatrix.block([[spec.W @ K], [spec.H @ P]])     # (q+N) x p affine
    offdiag = -stack.T - AffineMatrix.scalar_times(eps2, cross_const)
    M = AffineMatrix.block([
        [upsD - AffineMatrix.scalar_times(eps1, MatrixPolynomial.identity(p, n)), offdiag],
        [offdiag.T, AffineMatrix.scalar_times(eps2, gramWb)],
    ])

    return SOSProgram(
        problem=problem, nv_core=nv, layout=layout,
        matrix_sos=[("main", M)] + _eps_side_constraints(problem, eps1, eps2),
        psd_direct=[_p_floor(problem, P)],
        eq_zero=[],
        bases=bases,
    )


def build_lsq(problem: SynthesisProblem) -> SOSProgram:
    """Indirect design against the least-squares model of the lifted dynamics."""
    spec, data = problem.spec, problem.data
    n, p, T = spec.n, spec.p, data.T
    layout, nv, P, Y, eps1, eps2, bases = _core_variables(problem, "Y", (T, p))
    dZ, X1, RDRD = _common_pieces(problem)

    warnings = []
    sv = np.linalg.svd(data.Wbar0, compute_uv=False)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    if rank < data.Wbar0.shape[0]:
        warnings.append(
            f"Wbar0 is rank deficient ({rank} < {data.Wbar0.shape[0]}); the pseudo-inverse "
            "model may be unreliable"
        )
    Wdag = np.linalg.pinv(data.Wbar0, rcond=1e-10)               # T x (q+N)
    Shat = data.X1 @ Wdag                                        # n x (q+N)

    W0 = MatrixPolynomial.vstack([
        spec.W @ MatrixPolynomial.from_constant(data.U0, n),
        MatrixPolynomial.from_constant(data.Z0, n),
    ])
    model = MatrixPolynomial.from_constant(Shat, n) @ W0         # n x T
    gain_map = MatrixPolynomial.from_constant(Wdag, n) @ W0      # T x T

    cross = (dZ @ model) @ Y
    ups = -cross - cross.T - AffineMatrix.scalar_times(eps2, dZ @ RDRD @ dZ.T)
    coupling = gain_map @ Y
    M = AffineMatrix.block([
        [ups - AffineMatrix.scalar_times(eps1, MatrixPolynomial.identity(p, n)), coupling.T],
        [coupling, AffineMatrix.scalar_times(eps2, MatrixPolynomial.identity(T, n))],
    ])

    return SOSProgram(
        problem=problem, nv_core=nv, layout=layout,
        matrix_sos=[("main", M)] + _eps_side_constraints(problem, eps1, eps2),
        psd_direct=[_p_floor(problem, P)],
        eq_zero=[_equality(problem, Y, P)],
        bases=bases,
        warnings=warnings,
    )


_BUILDERS = {
    Method.THM1: build_thm1,
    Method.THM1_CONST_B: build_remark1,
    Method.THM2: build_thm2,
    Method.COR1: build_cor1,
    Method.LSQ: build_lsq,
}


def build(problem: SynthesisProblem) -> SOSProgram:
    return _BUILDERS[problem.method](problem)


# ---------------------------------------------------------------------------
# SDP instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PSDBlock:
    """size x size symmetric block, affine in v: mat(G @ v) + F0 >= 0.

    ``var_slice`` is set when the block is a pure packed-symmetric view of
    a dedicated slice of v (Gram blocks); solver adapters may then treat
    the block as a native semidefinite variable.
    """

    name: str
    size: int
    G: sp.csr_matrix          # (size*size, nv), row-major vec
    F0: np.ndarray
    var_slice: slice | None = None

    def value(self, v: np.ndarray) -> np.ndarray:
        return (self.G @ v).reshape(self.size, self.size) + self.F0


@dataclass(frozen=True)
class SDPInstance:
    """Standard-form SDP: find v with A v = b and every block PSD."""

    nv: int
    blocks: tuple[PSDBlock, ...]
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    layout: tuple[tuple[str, slice], ...]
    eq_labels: tuple[str, ...]
    meta: dict

    def slice_of(self, name: str) -> slice:
        for n_, s in self.layout:
            if n_ == name:
                return s
        raise KeyError(name)

    @property
    def n_eq(self) -> int:
        return self.b.size


def _gram_basis(M: AffineMatrix) -> list[Monomial]:
    half = math.ceil(max(M.degree, 0) / 2)
    return enumerate_monomials(M.nvars, 0, half, active=M.active_x_vars())


class _EqAccumulator:
    """COO builder for the equality system with per-row labels."""

    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.b: list[float] = []
        self.labels: list[str] = []

    def add_row(self, label: str, coeffs: dict[int, float], rhs: float):
        r = len(self.b)
        for cidx, val in sorted(coeffs.items()):
            if val != 0.0:
                self.rows.append(r)
                self.cols.append(cidx)
                self.vals.append(val)
        self.b.append(rhs)
        self.labels.append(label)

    def finish(self, nv: int):
        A = sp.coo_matrix((self.vals, (self.rows, self.cols)),
                          shape=(len(self.b), nv)).tocsr()
        return A, np.asarray(self.b), tuple(self.labels)


def _emit_gram(name: str, M: AffineMatrix, gram_offset: int, nv: int,
               eq: _EqAccumulator) -> tuple[PSDBlock, int, list[Monomial]]:
    """Gram reduction of one matrix-SOS constraint.

    Chooses the monomial vector z of all monomials up to half the degree in
    the variables that occur in M, introduces the Gram block of size
    r*len(z), and emits the coefficient-matching equalities entry by entry.
    """
    if M.rows != M.cols:
        raise ValueError(f"SOS constraint {name!r} must be square")
    if not M.is_symmetric():
        # float matmul is not bitwise symmetric; absorb roundoff, reject real skew
        skew = (M - M.T).max_coeff()
        if skew > 1e-9 * max(1.0, M.max_coeff()):
            raise ValueError(f"SOS constraint {name!r} must be symmetric "
                             f"(skew coefficient {skew:.3e})")
        M = (M + M.T).scale(0.5)
    r = M.rows
    z = _gram_basis(M)
    nz = len(z)
    nq = r * nz
    two_half = 2 * max(math.ceil(max(M.degree, 0) / 2), 0)

    # products z_a * z_b grouped by the resulting monomial
    prods: dict[Monomial, list[tuple[int, int]]] = {}
    for a in range(nz):
        for b_ in range(nz):
            mono = z[a] * z[b_]
            prods.setdefault(mono, []).append((a, b_))
    prod_monos = sorted(prods, key=lambda mo: mo.sort_key())

    for i in range(r):
        for j in range(i, r):
            cpoly, parts = M.entry_terms(i, j)
            entry_monos = set(cpoly.terms)
            for poly in parts.values():
                entry_monos.update(poly.terms)
            for mono in entry_monos:
                if mono.degree > two_half or mono not in prods:
                    raise ValueError(
                        f"entry ({i},{j}) of {name!r} has monomial {mono} outside the "
                        "Gram basis span"
                    )
            for mono in prod_monos:
                coeffs: dict[int, float] = {}
                for a, b_ in prods[mono]:
                    alpha, beta = a * r + i, b_ * r + j
                    lo, hi = min(alpha, beta), max(alpha, beta)
                    cidx = gram_offset + tri_index(lo, hi, nq)
                    coeffs[cidx] = coeffs.get(cidx, 0.0) + 1.0
                for k, poly in parts.items():
                    cf = poly.coeff(mono)
                    if cf:
                        coeffs[k] = coeffs.get(k, 0.0) - cf
                eq.add_row(f"{name}[{i},{j}]:{mono}", coeffs, cpoly.coeff(mono))

    # selection map from the packed Gram entries to the full block
    rows, cols, vals = [], [], []
    for alpha in range(nq):
        for beta in range(nq):
            lo, hi = min(alpha, beta), max(alpha, beta)
            rows.append(alpha * nq + beta)
            cols.append(gram_offset + tri_index(lo, hi, nq))
            vals.append(1.0)
    G = sp.coo_matrix((vals, (rows, cols)), shape=(nq * nq, nv)).tocsr()
    block = PSDBlock(name=f"gram:{name}", size=nq, G=G, F0=np.zeros((nq, nq)),
                     var_slice=slice(gram_offset, gram_offset + nq * (nq + 1) // 2))
    return block, nq * (nq + 1) // 2, z


def _direct_block(name: str, M: AffineMatrix, nv: int) -> PSDBlock:
    if M.degree > 0:
        raise ValueError(f"direct PSD block {name!r} must be constant in x")
    r = M.rows
    rows, cols, vals = [], [], []
    for k, mat in M.parts.items():
        num = mat.evaluate(np.zeros(M.nvars))
        for i in range(r):
            for j in range(r):
                if num[i, j]:
                    rows.append(i * r + j)
                    cols.append(k)
                    vals.append(num[i, j])
    G = sp.coo_matrix((vals, (rows, cols)), shape=(r * r, nv)).tocsr()
    F0 = M.const.evaluate(np.zeros(M.nvars))
    return PSDBlock(name=name, size=r, G=G, F0=F0)


def compile(program: SOSProgram, pins: dict[str, np.ndarray] | None = None,
            objective: str | None = None) -> SDPInstance:
    """Aggregate a built program into one standard-form SDP instance.

    Variable ordering is fully deterministic: core variables first (in the
    builder's layout order), then one packed Gram slice per matrix-SOS
    constraint in listed order.  ``pins`` adds equality rows fixing a named
    slice to given values (diagnostic use).  ``objective`` is ``None`` for
    pure feasibility or ``"gram_trace"`` to minimize the trace of the
    largest Gram block.
    """
    layout: list[tuple[str, slice]] = list(program.layout.items())
    nv = program.nv_core
    gram_sizes = []
    for name, M in program.matrix_sos:
        z = _gram_basis(M)
        nq = M.rows * len(z)
        gram_sizes.append((name, nq))
        layout.append((f"gram:{name}", slice(nv, nv + nq * (nq + 1) // 2)))
        nv += nq * (nq + 1) // 2

    eq = _EqAccumulator()
    for name, R in program.eq_zero:
        for i in range(R.rows):
            for j in range(R.cols):
                cpoly, parts = R.entry_terms(i, j)
                monos = set(cpoly.terms)
                for poly in parts.values():
                    monos.update(poly.terms)
                for mono in sorted(monos, key=lambda mo: mo.sort_key()):
                    coeffs = {k: poly.coeff(mono) for k, poly in parts.items()
                              if poly.coeff(mono)}
                    eq.add_row(f"{name}[{i},{j}]:{mono}", coeffs, -cpoly.coeff(mono))

    blocks: list[PSDBlock] = []
    for name, M in program.psd_direct:
        blocks.append(_direct_block(name, M, nv))

    gram_off_iter = (s for n_, s in layout if n_.startswith("gram:"))
    gram_meta = {}
    for (name, M), goff in zip(program.matrix_sos, gram_off_iter):
        block, _, z = _emit_gram(name, M, goff.start, nv, eq)
        blocks.append(block)
        gram_meta[name] = {"z": [str(mo) for mo in z], "size": block.size}

    if pins:
        for pname, values in pins.items():
            sl = dict(layout)[pname] if pname in dict(layout) else None
            if sl is None:
                raise KeyError(f"no variable slice named {pname!r}")
            values = np.atleast_1d(np.asarray(values, dtype=float))
            if values.size == 1:
                values = np.full(sl.stop - sl.start, values[0])
            if values.size != sl.stop - sl.start:
                raise ValueError(f"pin for {pname!r} has wrong length")
            for k, val in enumerate(values):
                eq.add_row(f"pin:{pname}[{k}]", {sl.start + k: 1.0}, float(val))

    A, b, labels = eq.finish(nv)

    # structural consistency: an inconsistent equality system never reaches
    # the solver
    if b.size and np.any(b != 0.0):
        dense = A.toarray()
        rank_a = np.linalg.matrix_rank(dense)
        rank_ab = np.linalg.matrix_rank(np.column_stack([dense, b]))
        if rank_ab > rank_a:
            raise StructuralInfeasibilityError(
                "equality system A v = b is inconsistent (rank jump "
                f"{rank_a} -> {rank_ab})"
            )

    c = np.zeros(nv)
    if objective == "gram_trace" and gram_sizes:
        gname, _ = max(gram_sizes, key=lambda t: t[1])
        sl = dict(layout)[f"gram:{gname}"]
        nq = next(nq for n_, nq in gram_sizes if n_ == gname)
        for d in range(nq):
            c[sl.start + tri_index(d, d, nq)] = 1.0
    elif objective not in (None, "gram_trace"):
        raise ValueError(f"unknown objective {objective!r}")

    meta = {
        "nv_core": program.nv_core,
        "method": program.problem.method.value if program.problem else None,
        "gram": gram_meta,
        "warnings": list(program.warnings),
        "block_sizes": [(blk.name, blk.size) for blk in blocks],
        "n_eq": int(b.size),
    }
    return SDPInstance(nv=nv, blocks=tuple(blocks), A=A, b=b, c=c,
                       layout=tuple(layout), eq_labels=labels, meta=meta)


def compile_sos_matrix(M: MatrixPolynomial) -> SDPInstance:
    """Compile the single constraint "M(x) is an SOS matrix" for a known M.

    This is the standard Gram reduction with no other decision variables;
    feasibility of the result certifies matrix-SOS membership.
    """
    program = SOSProgram(
        problem=None, nv_core=0, layout={},
        matrix_sos=[("sos", AffineMatrix.from_const(M))],
        psd_direct=[], eq_zero=[],
    )
    return compile(program)


def build_and_compile(problem: SynthesisProblem,
                      objective: str | None = None) -> tuple[SOSProgram, SDPInstance]:
    program = build(problem)
    return program, compile(program, objective=objective)
