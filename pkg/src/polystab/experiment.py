"""Experiment data: simulation, ingestion, noise bounds, richness checks.

A :class:`DataSet` packages the raw samples (U0, X0, X1) together with
their monomial lifts (Z0, Ubar0, Wbar0) and the quadratic noise/input
bound factors (RD, RB).  The ground-truth vector fields are available only
to the simulator and the verifier; synthesis never sees them.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .basis import BasisSpec
from .polyalg import MatrixPolynomial, Polynomial


class DataFormatError(ValueError):
    """Malformed or non-uniform data file."""


class ConfigurationError(ValueError):
    """A modeling choice is inconsistent with the supplied objects."""


class DivergenceError(RuntimeError):
    """State norm exceeded the blow-up guard during integration."""

    def __init__(self, time: float, norm: float):
        super().__init__(f"integration diverged at t = {time:.6g} (|x| = {norm:.3e})")
        self.time = time
        self.norm = norm


# ---------------------------------------------------------------------------
# ground truth and built-in systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    """True vector fields xdot = f(x) + g(x) u; simulator/verifier only."""

    f: MatrixPolynomial
    g: MatrixPolynomial

    def __post_init__(self):
        if self.f.cols != 1 or self.f.rows != self.g.rows:
            raise ConfigurationError(
                f"f must be n x 1 and g n x m; got {self.f.shape} and {self.g.shape}"
            )
        f0 = self.f.evaluate(np.zeros(self.f.nvars))
        if np.any(f0 != 0.0):
            raise ConfigurationError("f(0) != 0; shift coordinates so the origin is an equilibrium")

    @property
    def n(self) -> int:
        return self.f.rows

    @property
    def m(self) -> int:
        return self.g.cols

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Vector field at state(s) x and input(s) u; supports batches."""
        fx = self.f.evaluate(x)[..., 0]
        gx = self.g.evaluate(x)
        return fx + (gx @ u[..., None])[..., 0]


def vanderpol() -> GroundTruth:
    """Controlled Van der Pol oscillator: x1' = x2, x2' = -x1 + (1-x1^2) x2 + u."""
    x1 = Polynomial.variable(0, 2)
    x2 = Polynomial.variable(1, 2)
    f = MatrixPolynomial.column([x2, -x1 + x2 - x1 * x1 * x2])
    g = MatrixPolynomial.from_constant(np.array([[0.0], [1.0]]), 2)
    return GroundTruth(f, g)


def linear1d() -> GroundTruth:
    """Scalar integrator x' = u."""
    f = MatrixPolynomial.zeros(1, 1, 1)
    g = MatrixPolynomial.from_constant(np.array([[1.0]]), 1)
    return GroundTruth(f, g)


def scalar_cubic() -> GroundTruth:
    """Scalar unstable system x' = x^3 + u."""
    x = Polynomial.variable(0, 1)
    f = MatrixPolynomial.column([x * x * x])
    g = MatrixPolynomial.from_constant(np.array([[1.0]]), 1)
    return GroundTruth(f, g)


BUILTIN_SYSTEMS: dict[str, Callable[[], GroundTruth]] = {
    "vanderpol": vanderpol,
    "linear1d": linear1d,
    "scalar-cubic": scalar_cubic,
}


# ---------------------------------------------------------------------------
# noise models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProportionalNoise:
    """Each noise column is gamma times the clean derivative column."""

    gamma: float


@dataclass(frozen=True)
class UniformNoise:
    """I.i.d. uniform noise in [-delta, delta], seeded.

    ``rows`` restricts the noise to the given derivative channels (e.g.
    a chain-integrator state whose derivative is another measured state
    has no measurement noise of its own); None means every channel.
    """

    delta: float
    rows: tuple[int, ...] | None = None


@dataclass(frozen=True)
class NoNoise:
    pass


NoiseModel = ProportionalNoise | UniformNoise | NoNoise


# ---------------------------------------------------------------------------
# data sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataSet:
    """One finite experiment and its derived matrices.

    ``D0`` is only populated by the simulator (the injected noise is
    unknowable from measurements) and exists for test oracles.
    """

    t0: float
    tau: float
    T: int
    U0: np.ndarray       # m x T
    X0: np.ndarray       # n x T
    X1: np.ndarray       # n x T (measured derivatives)
    Z0: np.ndarray       # N x T
    Ubar0: np.ndarray    # q x T
    Wbar0: np.ndarray    # (q+N) x T
    RD: np.ndarray | None = None
    RB: np.ndarray | None = None
    D0: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    def times(self) -> np.ndarray:
        return self.t0 + self.tau * np.arange(self.T)


def _lift(spec: BasisSpec, U0: np.ndarray, X0: np.ndarray):
    """Z0, Ubar0, Wbar0 columns from raw samples."""
    pts = X0.T  # (T, n)
    Z0 = spec.Z.evaluate(pts)[..., 0].T            # N x T
    Wx = spec.W.evaluate(pts)                      # (T, q, m)
    Ubar0 = (Wx @ U0.T[..., None])[..., 0].T       # q x T
    Wbar0 = np.vstack([Ubar0, Z0])
    return Z0, Ubar0, Wbar0


def _rk4_steps(rhs, x: np.ndarray, t: float, dt: float, nsteps: int,
               guard: float = 1e6) -> np.ndarray:
    """Fixed-step RK4; ``x`` may be a single state or a batch (k, n)."""
    for _ in range(nsteps):
        k1 = rhs(t, x)
        k2 = rhs(t + dt / 2, x + dt / 2 * k1)
        k3 = rhs(t + dt / 2, x + dt / 2 * k2)
        k4 = rhs(t + dt, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
        norm = float(np.max(np.linalg.norm(np.atleast_2d(x), axis=-1)))
        if not np.isfinite(norm) or norm > guard:
            raise DivergenceError(t, norm)
    return x


def simulate_experiment(gt: GroundTruth, spec: BasisSpec, x0,
                        input_signal: Callable[[float], np.ndarray],
                        t0: float, tau: float, T: int,
                        noise: NoiseModel = NoNoise(),
                        seed: int = 0,
                        substeps: int = 100) -> DataSet:
    """Run one open-loop experiment and assemble all data matrices.

    Integration is fixed-step RK4 with ``substeps`` internal steps per
    sampling period, so generated files are reproducible bit for bit.
    The measured derivative X1 is the exact vector field at each sample
    plus the injected noise column.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if tau <= 0:
        raise ValueError("tau must be positive")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != gt.n:
        raise ValueError(f"x0 must have length {gt.n}")

    def rhs(t, x):
        return gt.rhs(x, np.atleast_1d(np.asarray(input_signal(t), dtype=float)))

    xs = np.zeros((T, gt.n))
    us = np.zeros((T, gt.m))
    x = x0.copy()
    dt = tau / substeps
    for k in range(T):
        t = t0 + k * tau
        xs[k] = x
        us[k] = np.atleast_1d(np.asarray(input_signal(t), dtype=float))
        if k < T - 1:
            x = _rk4_steps(rhs, x, t, dt, substeps)

    X0 = xs.T
    U0 = us.T
    X1_clean = np.column_stack([gt.rhs(xs[k], us[k]) for k in range(T)])

    if isinstance(noise, ProportionalNoise):
        D0 = noise.gamma * X1_clean
    elif isinstance(noise, UniformNoise):
        rng = np.random.default_rng(seed)
        D0 = rng.uniform(-noise.delta, noise.delta, size=X1_clean.shape)
        if noise.rows is not None:
            mask = np.zeros(gt.n, dtype=bool)
            mask[list(noise.rows)] = True
            D0 = D0 * mask[:, None]
    elif isinstance(noise, NoNoise):
        D0 = np.zeros_like(X1_clean)
    else:
        raise TypeError(f"unknown noise model {noise!r}")

    X1 = X1_clean + D0
    Z0, Ubar0, Wbar0 = _lift(spec, U0, X0)
    return DataSet(t0=t0, tau=tau, T=T, U0=U0, X0=X0, X1=X1,
                   Z0=Z0, Ubar0=Ubar0, Wbar0=Wbar0, D0=D0)


def make_noise_bound(ds: DataSet, mode: str, param) -> DataSet:
    """Attach the noise bound factor RD to a data set.

    ``snr`` mode sets RD = gamma * X1; ``absolute`` stores an explicit
    factor.  Whether the true noise actually satisfies the bound cannot be
    checked from data alone -- it is the user's modeling assumption, and is
    verified only against simulator-injected noise in test mode.
    """
    if mode == "snr":
        gamma = float(param)
        if gamma <= 0:
            raise ValueError("snr gamma must be positive")
        RD = gamma * ds.X1
    elif mode == "absolute":
        RD = np.atleast_2d(np.asarray(param, dtype=float))
        if RD.shape[0] != ds.n:
            raise ValueError(f"RD must have {ds.n} rows")
    else:
        raise ValueError(f"unknown noise-bound mode {mode!r}")
    return dataclasses.replace(ds, RD=RD)


def set_input_bound(ds: DataSet, RB) -> DataSet:
    """Attach the input-matrix bound factor RB (needed by the conservative design)."""
    RB = np.atleast_2d(np.asarray(RB, dtype=float))
    if RB.shape[0] != ds.n:
        raise ValueError(f"RB must have {ds.n} rows")
    return dataclasses.replace(ds, RB=RB)


# ---------------------------------------------------------------------------
# richness diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RichnessReport:
    rank_Z0: int
    rank_H: int
    T: int
    N: int
    singular_values: np.ndarray
    warnings: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.warnings

    def __repr__(self) -> str:
        lines = [f"rank(Z0) = {self.rank_Z0}, generic rank(H) = {self.rank_H}, "
                 f"T = {self.T}, N = {self.N}"]
        lines += [f"WARNING: {w}" for w in self.warnings]
        return "\n".join(lines)


def validate_richness(ds: DataSet, spec: BasisSpec, seed: int = 0) -> RichnessReport:
    """Numerical rank of Z0 against the generic rank of H (needed for feasibility)."""
    sv = np.linalg.svd(ds.Z0, compute_uv=False)
    tol = 1e-8 * (sv[0] if sv.size else 1.0)
    rank_z0 = int(np.sum(sv > tol))

    rng = np.random.default_rng(seed)
    xr = rng.standard_normal(spec.n)
    Hx = spec.H.evaluate(xr)
    rank_h = int(np.linalg.matrix_rank(Hx))

    warnings = []
    if rank_z0 < rank_h:
        warnings.append(
            f"rank(Z0) = {rank_z0} < rank(H) = {rank_h}: the equality constraint "
            "Z0*Y = H*P cannot be met; collect more or richer data"
        )
    if ds.T < spec.N:
        warnings.append(f"T = {ds.T} < N = {spec.N}: Z0 cannot have full row rank")
    return RichnessReport(rank_Z0=rank_z0, rank_H=rank_h, T=ds.T, N=spec.N,
                          singular_values=sv, warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".bounds.json")


def export_dataset(ds: DataSet, path) -> Path:
    """Write the sample CSV plus a JSON sidecar holding the bound factors."""
    path = Path(path)
    m, n = ds.m, ds.n
    header = (["t"] + [f"u{i + 1}" for i in range(m)] + [f"x{i + 1}" for i in range(n)]
              + [f"dx{i + 1}" for i in range(n)])
    times = ds.times()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(ds.T):
            row = [times[k], *ds.U0[:, k], *ds.X0[:, k], *ds.X1[:, k]]
            writer.writerow([repr(float(v)) for v in row])
    sidecar = {
        "RD": None if ds.RD is None else ds.RD.tolist(),
        "RB": None if ds.RB is None else ds.RB.tolist(),
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    return path


def ingest(path, spec: BasisSpec) -> DataSet:
    """Load a sample file and derive the lifted matrices.

    Expected header: ``t,u1..um,x1..xn[,dx1..dxn]``.  When derivative
    columns are absent, X1 is estimated by central differences over the
    sampled states (one-sided at the ends), whose O(tau^2) bias belongs in
    the user's RD budget.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        rows = [[float(v) for v in row] for row in reader if row]
    header = [h.strip() for h in header]

    m = sum(1 for h in header if h.startswith("u"))
    n = sum(1 for h in header if h.startswith("x"))
    nd = sum(1 for h in header if h.startswith("dx"))
    expected = ["t"] + [f"u{i + 1}" for i in range(m)] + [f"x{i + 1}" for i in range(n)]
    if nd:
        expected += [f"dx{i + 1}" for i in range(nd)]
    if header != expected or n == 0 or m == 0 or (nd not in (0, n)):
        raise DataFormatError(
            f"{path}: header must be t,u1..um,x1..xn[,dx1..dxn]; got {','.join(header)}"
        )
    if n != spec.n or m != spec.m:
        raise DataFormatError(
            f"{path}: file has n={n}, m={m} but basis expects n={spec.n}, m={spec.m}"
        )
    data = np.asarray(rows, dtype=float)
    if data.shape[0] < 1:
        raise DataFormatError(f"{path}: no samples")

    t = data[:, 0]
    T = t.size
    if T >= 2:
        tau = t[1] - t[0]
        if tau <= 0 or np.any(np.abs(np.diff(t) - tau) / tau > 1e-6):
            raise DataFormatError(f"{path}: non-uniform sampling grid")
    else:
        tau = 1.0
    U0 = data[:, 1:1 + m].T
    X0 = data[:, 1 + m:1 + m + n].T

    if nd:
        X1 = data[:, 1 + m + n:1 + m + 2 * n].T
    else:
        if T < 2:
            raise DataFormatError(f"{path}: need >= 2 samples to difference states")
        X1 = np.zeros_like(X0)
        X1[:, 1:-1] = (X0[:, 2:] - X0[:, :-2]) / (2 * tau)
        X1[:, 0] = (X0[:, 1] - X0[:, 0]) / tau
        X1[:, -1] = (X0[:, -1] - X0[:, -2]) / tau

    Z0, Ubar0, Wbar0 = _lift(spec, U0, X0)
    ds = DataSet(t0=float(t[0]), tau=float(tau), T=T, U0=U0, X0=X0, X1=X1,
                 Z0=Z0, Ubar0=Ubar0, Wbar0=Wbar0)

    sidecar = _sidecar_path(path)
    if sidecar.exists():
        with open(sidecar) as fh:
            bounds = json.load(fh)
        if bounds.get("RD") is not None:
            ds = dataclasses.replace(ds, RD=np.asarray(bounds["RD"], dtype=float))
        if bounds.get("RB") is not None:
            ds = dataclasses.replace(ds, RB=np.asarray(bounds["RB"], dtype=float))
    return ds


# ---------------------------------------------------------------------------
# test-only reconstruction of the linear-like matrices
# ---------------------------------------------------------------------------


def linear_like_matrices(gt: GroundTruth, spec: BasisSpec) -> tuple[np.ndarray, np.ndarray]:
    """Constant (A, B) with f(x) = A Z(x) and g(x) = B W(x).

    Used only by tests and the least-squares oracle; synthesis never calls
    this.  Raises if the basis cannot express the true vector fields.
    """
    z_monos = [next(iter(spec.Z[i, 0].terms)) for i in range(spec.N)]
    index = {mono: i for i, mono in enumerate(z_monos)}
    A = np.zeros((gt.n, spec.N))
    for i in range(gt.n):
        for mono, c in gt.f[i, 0].terms.items():
            if mono not in index:
                raise ConfigurationError(
                    f"f contains monomial {mono} missing from Z; enlarge the basis"
                )
            A[i, index[mono]] = c

    # match g = B W(x) coefficientwise, one least-squares solve per state row
    monos = sorted({mono for k in range(spec.q) for j in range(gt.m)
                    for mono in spec.W[k, j].terms}
                   | {mono for i in range(gt.n) for j in range(gt.m)
                      for mono in gt.g[i, j].terms},
                   key=lambda mo: mo.sort_key())
    cols = []
    rhs_rows = []
    for j in range(gt.m):
        for mono in monos:
            cols.append([spec.W[k, j].coeff(mono) for k in range(spec.q)])
            rhs_rows.append([gt.g[i, j].coeff(mono) for i in range(gt.n)])
    Wcoef = np.asarray(cols, dtype=float)          # (m*#monos) x q
    Gcoef = np.asarray(rhs_rows, dtype=float)      # (m*#monos) x n
    B, *_ = np.linalg.lstsq(Wcoef, Gcoef, rcond=None)
    B = B.T
    if np.max(np.abs(Wcoef @ B.T - Gcoef)) > 1e-9:
        raise ConfigurationError("g(x) is not expressible as B * W(x) for this W")
    return A, B
