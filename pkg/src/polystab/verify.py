"""Certificate extraction and synthesis-independent verification.

The audit path deliberately avoids the synthesis chain: the decrease rate
of the Lyapunov function is composed symbolically from the *true* vector
fields and the extracted gain, then evaluated at low-discrepancy samples.
Closed-loop simulation provides a second, dynamic check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .experiment import DivergenceError, GroundTruth
from .polyalg import MatrixPolynomial, Polynomial
from .sdpsolve import SolveReport
from .soscompile import (
    Method,
    SOSProgram,
    SynthesisProblem,
    build,
    matrix_var_coefficients,
    unpack_symmetric,
)


class IllConditionedCertificateError(RuntimeError):
    """P is too ill conditioned to invert reliably; raise rho and re-solve."""


@dataclass(frozen=True)
class Certificate:
    """Solved synthesis result: gain, Lyapunov data, and multipliers."""

    method: Method
    P: np.ndarray                    # p x p, positive definite
    YorK: MatrixPolynomial
    eps1: Polynomial
    eps2: Polynomial
    F: MatrixPolynomial              # m x p gain: u = F(x) Zhat(x)
    Zhat: MatrixPolynomial
    block: MatrixPolynomial | None = None   # solved SOS block, for cross-checks
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.P.shape[0]

    def Pinv(self) -> np.ndarray:
        lam, U = np.linalg.eigh(self.P)
        return (U / lam) @ U.T

    def controller(self) -> MatrixPolynomial:
        """u(x) = F(x) Zhat(x) as an m x 1 vector polynomial."""
        return self.F @ self.Zhat

    def lyapunov(self) -> Polynomial:
        """V(x) = Zhat(x)^T P^{-1} Zhat(x)."""
        Pi = MatrixPolynomial.from_constant(self.Pinv(), self.Zhat.nvars)
        return (self.Zhat.T @ Pi @ self.Zhat)[0, 0]

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "P": self.P.tolist(),
            "F": self.F.to_dict(),
            "YorK": self.YorK.to_dict(),
            "eps1": self.eps1.to_dict(),
            "eps2": self.eps2.to_dict(),
            "Zhat": self.Zhat.to_dict(),
            "meta": {k: v for k, v in sorted(self.meta.items())},
        }

    @staticmethod
    def from_dict(d: dict) -> "Certificate":
        return Certificate(
            method=Method(d["method"]),
            P=np.asarray(d["P"], dtype=float),
            YorK=MatrixPolynomial.from_dict(d["YorK"]),
            eps1=Polynomial.from_dict(d["eps1"]),
            eps2=Polynomial.from_dict(d["eps2"]),
            F=MatrixPolynomial.from_dict(d["F"]),
            Zhat=MatrixPolynomial.from_dict(d["Zhat"]),
            meta=dict(d.get("meta", {})),
        )


def extract(program: SOSProgram | SynthesisProblem, report: SolveReport) -> Certificate:
    """Pull the certificate out of a feasible solve and check its invariants."""
    if isinstance(program, SynthesisProblem):
        program = build(program)
    problem = program.problem
    if problem is None:
        raise ValueError("program carries no synthesis problem")
    if not report.is_feasible or report.v is None:
        raise ValueError(f"cannot extract from a solve with status {report.status!r}")

    spec, data = problem.spec, problem.data
    v = report.v
    p, n = spec.p, spec.n

    P = unpack_symmetric(v[program.layout["P"]], p)
    lam = np.linalg.eigvalsh(P)
    if lam[0] <= 0 or lam[-1] / lam[0] > 1e12:
        raise IllConditionedCertificateError(
            f"cond(P) = {lam[-1] / max(lam[0], 1e-300):.3e}; raise rho and re-solve"
        )
    if lam[0] < problem.rho - 1e-6:
        raise ValueError(f"P floor violated: lambda_min = {lam[0]:.3e} < rho = {problem.rho}")
    Pinv = np.linalg.solve(P + np.zeros_like(P), np.eye(p))  # symmetric solve

    gain_name = "K" if problem.method is Method.COR1 else "Y"
    sl = program.layout[gain_name]
    rows = spec.m if problem.method is Method.COR1 else data.T
    YorK = matrix_var_coefficients(v, sl.start, rows, p, program.bases[gain_name], n)
    eps1 = matrix_var_coefficients(v, program.layout["eps1"].start, 1, 1,
                                   program.bases["eps1"], n)[0, 0]
    eps2 = matrix_var_coefficients(v, program.layout["eps2"].start, 1, 1,
                                   program.bases["eps2"], n)[0, 0]

    Pinv_m = MatrixPolynomial.from_constant(Pinv, n)
    if problem.method is Method.COR1:
        F = YorK @ Pinv_m
    else:
        F = MatrixPolynomial.from_constant(data.U0, n) @ YorK @ Pinv_m

    # invariant: the coefficient equality holds after the solve
    if problem.method is not Method.COR1:
        residual = (MatrixPolynomial.from_constant(data.Z0, n) @ YorK
                    - spec.H @ MatrixPolynomial.from_constant(P, n))
        if residual.max_coeff() > 1e-6:
            raise ValueError(
                f"equality residual {residual.max_coeff():.3e} exceeds 1e-6; solve too loose"
            )

    main = dict(program.matrix_sos)["main"]
    block = main.substitute(v)

    meta = {
        "status": report.status,
        "solver": report.solver_name,
        "iterations": report.iterations,
        "nv": int(v.size),
        "nv_core": program.nv_core,
        "cond_P": float(lam[-1] / lam[0]),
        "rho": problem.rho,
        "delta": problem.delta,
    }
    return Certificate(method=problem.method, P=P, YorK=YorK, eps1=eps1, eps2=eps2,
                       F=F, Zhat=spec.Zhat, block=block, meta=meta)


# ---------------------------------------------------------------------------
# sampling audit
# ---------------------------------------------------------------------------


def _halton_box(n: int, nsamples: int, box: float) -> np.ndarray:
    sampler = qmc.Halton(d=n, scramble=False)
    pts = sampler.random(nsamples)
    pts = box * (2.0 * pts - 1.0)
    keep = np.linalg.norm(pts, axis=1) > 1e-12
    return pts[keep]


def closed_loop_field(cert: Certificate, gt: GroundTruth) -> MatrixPolynomial:
    """xdot = f(x) + g(x) F(x) Zhat(x), composed symbolically."""
    return gt.f + gt.g @ cert.controller()


def vdot_polynomial(cert: Certificate, gt: GroundTruth) -> Polynomial:
    """d/dt of Zhat^T P^{-1} Zhat along the true closed loop."""
    n = cert.Zhat.nvars
    Pinv_m = MatrixPolynomial.from_constant(cert.Pinv(), n)
    rhs = closed_loop_field(cert, gt)
    expr = cert.Zhat.T @ Pinv_m @ cert.Zhat.jacobian() @ rhs
    return (expr * 2.0)[0, 0]


@dataclass(frozen=True)
class AuditReport:
    nsamples: int
    box: float
    max_vdot: float
    worst_x: np.ndarray
    frac_negative: float
    min_v: float
    block_min_eig: float | None
    vdot_margin_ok: bool

    @property
    def passed(self) -> bool:
        block_ok = self.block_min_eig is None or self.block_min_eig >= -1e-7
        return self.vdot_margin_ok and self.min_v > 0 and block_ok

    def __repr__(self) -> str:
        lines = [
            f"audit over [{-self.box}, {self.box}]^n, {self.nsamples} samples",
            f"max Vdot = {self.max_vdot:.6e} at x = {np.round(self.worst_x, 4).tolist()}",
            f"fraction Vdot < 0: {self.frac_negative:.6f}",
            f"min V over nonzero samples = {self.min_v:.3e}",
        ]
        if self.block_min_eig is not None:
            lines.append(f"min eig of solved block over samples = {self.block_min_eig:.3e}")
        lines.append(f"=> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def lyapunov_audit(cert: Certificate, gt: GroundTruth, box: float = 3.0,
                   nsamples: int = 10_000, check_block: bool = True) -> AuditReport:
    """Sample the decrease condition over a box around the origin.

    Sampling cannot certify global stability -- that claim rides on the SOS
    certificate; the box sweep guards against compile/solve bugs.  The
    decrease test requires Vdot <= -1e-12 * |Zhat(x)|^2 at every nonzero
    sample, and the solved block condition is re-evaluated pointwise as a
    data-side cross-check.
    """
    n = cert.Zhat.nvars
    pts = _halton_box(n, nsamples, box)
    vdot = vdot_polynomial(cert, gt).evaluate(pts)
    zh = cert.Zhat.evaluate(pts)[..., 0]
    znorm2 = np.sum(zh * zh, axis=1)
    margin_ok = bool(np.all(vdot <= -1e-12 * znorm2))
    worst = int(np.argmax(vdot))

    vvals = cert.lyapunov().evaluate(pts)
    min_v = float(np.min(vvals))

    block_min = None
    if check_block and cert.block is not None:
        mats = cert.block.evaluate(pts)
        mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
        block_min = float(np.min(np.linalg.eigvalsh(mats)))

    return AuditReport(
        nsamples=int(pts.shape[0]), box=box,
        max_vdot=float(vdot[worst]), worst_x=pts[worst],
        frac_negative=float(np.mean(vdot < 0)),
        min_v=min_v, block_min_eig=block_min, vdot_margin_ok=margin_ok,
    )


# ---------------------------------------------------------------------------
# closed-loop simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    X: np.ndarray      # (steps, n)
    U: np.ndarray      # (steps, m)
    V: np.ndarray      # (steps,)

    def final_norm(self) -> float:
        return float(np.linalg.norm(self.X[-1]))

    def v_nonincreasing(self, rtol: float = 1e-9) -> bool:
        dv = np.diff(self.V)
        return bool(np.all(dv <= rtol * (1.0 + np.abs(self.V[:-1]))))

    def write_csv(self, path) -> Path:
        path = Path(path)
        n, m = self.X.shape[1], self.U.shape[1]
        header = (["t"] + [f"x{i + 1}" for i in range(n)]
                  + [f"u{i + 1}" for i in range(m)] + ["V"])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(self.t.size):
                row = [self.t[k], *self.X[k], *self.U[k], self.V[k]]
                writer.writerow([repr(float(x)) for x in row])
        return path


def _integrate_batch(rhs_poly: MatrixPolynomial, X0: np.ndarray, t_end: float,
                     dt: float, guard: float = 1e6):
    """Fixed-step RK4 on a polynomial field, vectorized over initial states."""
    nsteps = int(math.ceil(t_end / dt))
    traj = np.zeros((nsteps + 1,) + X0.shape)
    X = X0.copy()
    traj[0] = X

    def f(Xb):
        return rhs_poly.evaluate(Xb)[..., 0]

    for k in range(nsteps):
        k1 = f(X)
        k2 = f(X + dt / 2 * k1)
        k3 = f(X + dt / 2 * k2)
        k4 = f(X + dt * k3)
        X = X + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        norms = np.linalg.norm(X, axis=-1)
        if not np.all(np.isfinite(norms)) or np.max(norms) > guard:
            raise DivergenceError((k + 1) * dt, float(np.max(norms)))
        traj[k + 1] = X
    t = dt * np.arange(nsteps + 1)
    return t, traj


def simulate_closed_loop(cert: Certificate, gt: GroundTruth, x0, t_end: float,
                         dt: float = 1e-3) -> Trajectory:
    """Integrate the true dynamics under the extracted controller.

    Divergence is a verification failure for a claimed certificate and is
    raised with the escape time.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    rhs = closed_loop_field(cert, gt)
    t, traj = _integrate_batch(rhs, x0, t_end, dt)
    X = traj[:, 0, :]
    U = cert.controller().evaluate(X)[..., 0]
    V = cert.lyapunov().evaluate(X)
    return Trajectory(t=t, X=X, U=U, V=np.asarray(V))


def simulate_ring(cert: Certificate, gt: GroundTruth, box: float = 3.0,
                  count: int = 10, t_end: float = 20.0, dt: float = 1e-3) -> list[Trajectory]:
    """Trajectories from ``count`` initial conditions on the box boundary."""
    X0 = boundary_ring(cert.Zhat.nvars, box, count)
    rhs = closed_loop_field(cert, gt)
    t, traj = _integrate_batch(rhs, X0, t_end, dt)
    out = []
    u_poly = cert.controller()
    v_poly = cert.lyapunov()
    for i in range(X0.shape[0]):
        X = traj[:, i, :]
        out.append(Trajectory(t=t, X=X, U=u_poly.evaluate(X)[..., 0],
                              V=np.asarray(v_poly.evaluate(X))))
    return out


def boundary_ring(n: int, box: float, count: int) -> np.ndarray:
    """Evenly spaced points on the boundary of [-box, box]^n.

    For n = 2 the points walk the square's perimeter; otherwise directions
    from a Halton sequence are scaled out to the box surface.
    """
    if n == 2:
        perim = 8.0 * box
        pts = []
        for i in range(count):
            s = (i / count) * perim
            side, r = divmod(s, 2.0 * box)
            if side == 0:
                pts.append((-box + r, box))
            elif side == 1:
                pts.append((box, box - r))
            elif side == 2:
                pts.append((box - r, -box))
            else:
                pts.append((-box, -box + r))
        return np.asarray(pts)
    dirs = qmc.Halton(d=n, scramble=False).random(count + 1)[1:]
    dirs = 2.0 * dirs - 1.0
    dirs[np.all(dirs == 0, axis=1)] = 1.0
    scale = box / np.max(np.abs(dirs), axis=1, keepdims=True)
    return dirs * scale


# ---------------------------------------------------------------------------
# comparison reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodRow:
    method: str
    n_decision_vars: int
    iterations: int
    wall_time: float
    max_vdot: float | None
    converged: bool | None


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[MethodRow, ...]
    ordering: str          # "cor1_faster" | "inconclusive" | "violated" | "n/a"
    var_count_ok: bool | None

    def render(self) -> str:
        head = f"{'method':<9} {'vars':>6} {'iters':>6} {'time[s]':>9} {'max Vdot':>12} {'conv':>5}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            vd = "-" if r.max_vdot is None else f"{r.max_vdot:.3e}"
            cv = "-" if r.converged is None else ("yes" if r.converged else "NO")
            lines.append(f"{r.method:<9} {r.n_decision_vars:>6} {r.iterations:>6} "
                         f"{r.wall_time:>9.3f} {vd:>12} {cv:>5}")
        lines.append(f"cor1-vs-thm2 timing: {self.ordering}")
        if self.var_count_ok is not None:
            lines.append(f"cor1 has fewer decision variables than thm2: "
                         f"{'yes' if self.var_count_ok else 'NO'}")
        return "\n".join(lines)

    def __repr__(self) -> str:
        return self.render()


def timing_verdict(t_cor1: float, t_thm2: float, floor: float = 0.05) -> str:
    """Compare method wall times with a relative noise floor."""
    hi = max(t_cor1, t_thm2)
    if hi <= 0 or abs(t_cor1 - t_thm2) <= floor * hi:
        return "inconclusive"
    return "cor1_faster" if t_cor1 < t_thm2 else "violated"


def report(certs: list[Certificate], audits: dict[str, AuditReport] | None = None,
           timings: dict[str, float] | None = None,
           var_counts: dict[str, int] | None = None,
           iterations: dict[str, int] | None = None,
           converged: dict[str, bool] | None = None) -> ComparisonReport:
    """Tabulate methods side by side and judge the efficiency ordering."""
    if not certs:
        raise ValueError("need at least one certificate")
    audits = audits or {}
    timings = timings or {}
    var_counts = var_counts or {}
    iterations = iterations or {}
    converged = converged or {}

    rows = []
    for cert in certs:
        name = cert.method.value
        audit = audits.get(name)
        rows.append(MethodRow(
            method=name,
            n_decision_vars=var_counts.get(name, cert.meta.get("nv", 0)),
            iterations=iterations.get(name, cert.meta.get("iterations", 0)),
            wall_time=timings.get(name, 0.0),
            max_vdot=None if audit is None else audit.max_vdot,
            converged=converged.get(name),
        ))

    names = [r.method for r in rows]
    if "cor1" in names and "thm2" in names and "cor1" in timings and "thm2" in timings:
        ordering = timing_verdict(timings["cor1"], timings["thm2"])
    else:
        ordering = "n/a"

    var_ok = None
    if "cor1" in names and "thm2" in names:
        by = {r.method: r.n_decision_vars for r in rows}
        if by["cor1"] and by["thm2"]:
            var_ok = by["cor1"] < by["thm2"]

    return ComparisonReport(rows=tuple(rows), ordering=ordering, var_count_ok=var_ok)
