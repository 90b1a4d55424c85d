"""SDP solving behind a narrow contract, with an independent checker.

``solve`` adapts a compiled instance to a conic solver (Clarabel by
default, SCS/CVXOPT as alternatives); ``check_solution`` recomputes every
block eigenvalue and equality residual with plain dense linear algebra,
decoupled from whatever the solver claims.  A point is never reported
feasible unless it passes the independent check at 10x the solver
tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .soscompile import SDPInstance

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"
ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class SolveOptions:
    tol_feas: float = 1e-8
    max_iter: int = 500
    seed: int = 0          # accepted for the contract; current backends are deterministic
    solver: str = "auto"   # "auto" walks CLARABEL -> CLARABEL(reg) -> SCS
    verbose: bool = False
    equilibrate: bool = True
    equilibrate_iters: int = 20
    native_gram: bool = True   # hand Gram blocks to the solver as PSD variables
    polish: bool = True        # least-squares equality projection before the check


@dataclass(frozen=True)
class SolveReport:
    status: str
    v: np.ndarray | None
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    wall_time: float
    solver_name: str
    message: str = ""

    @property
    def is_feasible(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE)


@dataclass(frozen=True)
class ResidualReport:
    """Brute-force verification of a candidate point."""

    eq_residuals: np.ndarray
    eq_residual_max: float
    worst_eq_label: str
    block_min_eig: tuple[tuple[str, float], ...]
    min_eig: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.eq_residual_max <= self.tol and self.min_eig >= -self.tol

    def __repr__(self) -> str:
        lines = [f"max equality residual {self.eq_residual_max:.3e} "
                 f"(worst row: {self.worst_eq_label})"]
        lines += [f"lambda_min[{name}] = {val:.3e}" for name, val in self.block_min_eig]
        lines.append(f"=> {'ok' if self.ok else 'VIOLATED'} at tol {self.tol:.1e}")
        return "\n".join(lines)


def check_solution(inst: SDPInstance, v: np.ndarray, tol: float = 1e-7) -> ResidualReport:
    """Recompute every block's smallest eigenvalue and every equality residual."""
    v = np.asarray(v, dtype=float)
    if v.size != inst.nv:
        raise ValueError(f"decision vector has length {v.size}, expected {inst.nv}")
    if inst.n_eq:
        res = np.abs(inst.A @ v - inst.b)
        worst = int(np.argmax(res))
        eq_max = float(res[worst])
        worst_label = inst.eq_labels[worst]
    else:
        res = np.zeros(0)
        eq_max, worst_label = 0.0, "(none)"

    eigs = []
    for blk in inst.blocks:
        mat = blk.value(v)
        mat = 0.5 * (mat + mat.T)
        lam = float(np.linalg.eigvalsh(mat)[0]) if blk.size else 0.0
        eigs.append((blk.name, lam))
    min_eig = min((lam for _, lam in eigs), default=0.0)
    return ResidualReport(eq_residuals=res, eq_residual_max=eq_max,
                          worst_eq_label=worst_label, block_min_eig=tuple(eigs),
                          min_eig=min_eig, tol=tol)


def _equilibrate(inst: SDPInstance, iters: int):
    """Ruiz-style scaling of an instance; returns scaled pieces + column scales.

    Synthesis instances mix variables whose natural magnitudes span many
    orders (gain coefficients vs. the scalar multiplier trading off the
    noise quadratic), which exceeds what solvers' built-in equilibration
    absorbs.  Columns get free positive scales (a change of variables);
    equality rows get free scales; PSD blocks are scaled congruently
    (E M E) so semidefiniteness is preserved exactly.
    """
    import scipy.sparse as sparse

    A = inst.A.tocsr(copy=True).astype(float)
    b = inst.b.copy()
    Gs = [blk.G.tocsr(copy=True).astype(float) for blk in inst.blocks]
    F0s = [blk.F0.copy() for blk in inst.blocks]
    d = np.ones(inst.nv)

    def col_max(mats):
        out = np.zeros(inst.nv)
        for m in mats:
            if m.nnz:
                mm = sparse.csc_matrix(abs(m))
                out = np.maximum(out, mm.max(axis=0).toarray().ravel())
        return out

    for _ in range(iters):
        # equality rows
        if A.shape[0] and A.nnz:
            rmax = np.asarray(abs(A).max(axis=1).todense()).ravel()
            r = 1.0 / np.sqrt(np.where(rmax > 0, rmax, 1.0))
            A = sparse.diags(r) @ A
            b = r * b
        # congruent block scaling
        for k, blk in enumerate(inst.blocks):
            sz = blk.size
            if sz == 0:
                continue
            dense_max = np.abs(F0s[k])
            gm = abs(Gs[k])
            if gm.nnz:
                row_abs = np.asarray(gm.max(axis=1).todense()).ravel().reshape(sz, sz)
                dense_max = np.maximum(dense_max, row_abs)
            row_peak = np.maximum(dense_max.max(axis=0), dense_max.max(axis=1))
            e = 1.0 / np.sqrt(np.sqrt(np.where(row_peak > 0, row_peak, 1.0)))
            scale_vec = np.outer(e, e).ravel()
            Gs[k] = sparse.diags(scale_vec) @ Gs[k]
            F0s[k] = F0s[k] * np.outer(e, e)
        # variable columns
        cmax = col_max([A] + Gs)
        s = 1.0 / np.sqrt(np.where(cmax > 0, cmax, 1.0))
        d *= s
        D = sparse.diags(s)
        A = A @ D
        Gs = [g @ D for g in Gs]
    return A, b, Gs, F0s, d


def _tri_expand(size: int):
    """Map vec(Q) (row-major, size^2) to the packed upper triangle (symmetrized)."""
    import scipy.sparse as sparse

    ntri = size * (size + 1) // 2
    rows, cols, vals = [], [], []
    k = 0
    for i in range(size):
        for j in range(i, size):
            if i == j:
                rows.append(k); cols.append(i * size + j); vals.append(1.0)
            else:
                rows.append(k); cols.append(i * size + j); vals.append(0.5)
                rows.append(k); cols.append(j * size + i); vals.append(0.5)
            k += 1
    return sparse.coo_matrix((vals, (rows, cols)), shape=(ntri, size * size)).tocsr()


def _native_problem(inst: SDPInstance, cp, ruiz_iters: int = 10):
    """Build the cvxpy problem with Gram blocks as native PSD variables.

    Packed Gram slices of v become semidefinite matrix variables; the
    equality system is rewritten over (core vars, vec of each Gram), which
    is the form conic solvers digest best.  Equality rows and core columns
    are Ruiz-scaled (free transformations); Gram columns stay untouched so
    the PSD-variable view of those slices remains exact.  Returns the
    problem and a callback reconstructing the full decision vector.
    """
    import scipy.sparse as sparse

    from .soscompile import pack_symmetric

    gram_blocks = [blk for blk in inst.blocks if blk.var_slice is not None]
    direct_blocks = [blk for blk in inst.blocks if blk.var_slice is None]
    core_end = min(blk.var_slice.start for blk in gram_blocks)

    A = inst.A.tocsr(copy=True).astype(float)
    b = inst.b.copy()
    dcore = np.ones(core_end)
    if inst.n_eq and A.nnz:
        for _ in range(ruiz_iters):
            rmax = np.asarray(abs(A).max(axis=1).todense()).ravel()
            r = 1.0 / np.sqrt(np.where(rmax > 0, rmax, 1.0))
            A = sparse.diags(r) @ A
            b = r * b
            if core_end:
                cmax = np.asarray(abs(A[:, :core_end]).max(axis=0).todense()).ravel()
                s = 1.0 / np.sqrt(np.where(cmax > 0, cmax, 1.0))
                dcore *= s
                A = A @ sparse.diags(np.concatenate([s, np.ones(inst.nv - core_end)]))

    vc = cp.Variable(core_end) if core_end else None
    Qs = {blk.name: cp.Variable((blk.size, blk.size), PSD=True) for blk in gram_blocks}

    constraints = []
    if inst.n_eq:
        lhs = 0
        if core_end:
            lhs = A[:, :core_end] @ vc
        for blk in gram_blocks:
            Asl = A[:, blk.var_slice]
            if Asl.nnz:
                lhs = lhs + (Asl @ _tri_expand(blk.size)) @ cp.vec(Qs[blk.name], order="C")
        constraints.append(lhs == b)

    for blk in direct_blocks:
        if blk.G[:, core_end:].nnz:
            raise ValueError(f"direct block {blk.name!r} touches Gram variables")
        G = blk.G[:, :core_end] @ sparse.diags(dcore)
        expr = cp.reshape(G @ vc, (blk.size, blk.size), order="C") + blk.F0
        constraints.append((expr + expr.T) / 2 >> 0)

    obj = 0
    if core_end and np.any(inst.c[:core_end]):
        obj = obj + (inst.c[:core_end] * dcore) @ vc
    for blk in gram_blocks:
        csl = inst.c[blk.var_slice]
        if np.any(csl):
            obj = obj + (csl @ _tri_expand(blk.size)) @ cp.vec(Qs[blk.name], order="C")
    prob = cp.Problem(cp.Minimize(obj), constraints)

    def recover():
        if core_end and vc.value is None:
            return None
        v = np.zeros(inst.nv)
        if core_end:
            v[:core_end] = dcore * np.asarray(vc.value, dtype=float)
        for blk in gram_blocks:
            Q = Qs[blk.name].value
            if Q is None:
                return None
            Q = 0.5 * (Q + Q.T)
            v[blk.var_slice] = pack_symmetric(Q)
        return v

    return prob, recover


def _polish_equalities(inst: SDPInstance, v: np.ndarray, tol: float) -> np.ndarray:
    """Least-squares projection onto the equality manifold.

    Conic solvers leave equality residuals near their tolerance; the
    minimum-norm correction removes them up to rank precision and barely
    perturbs the cone blocks, which the subsequent independent check
    still validates.
    """
    res = inst.A @ v - inst.b
    if np.max(np.abs(res)) <= 1e-14:
        return v
    corr, *_ = np.linalg.lstsq(inst.A.toarray(), res, rcond=None)
    return v - corr


def _solver_kwargs(opts: SolveOptions) -> dict:
    if opts.solver.upper() == "CLARABEL":
        return {
            "max_iter": opts.max_iter,
            "tol_feas": opts.tol_feas,
            "tol_gap_abs": opts.tol_feas,
            "tol_gap_rel": opts.tol_feas,
        }
    if opts.solver.upper() == "SCS":
        return {"max_iters": max(opts.max_iter, 2500),
                "eps_abs": opts.tol_feas, "eps_rel": opts.tol_feas}
    return {}


def _attempt_plan(opts: SolveOptions) -> list[tuple[str, dict]]:
    """Deterministic solver/setting sequence; first verified result wins."""
    if opts.solver.lower() != "auto":
        return [(opts.solver.upper(), _solver_kwargs(opts))]
    clarabel = {"max_iter": opts.max_iter, "tol_feas": opts.tol_feas,
                "tol_gap_abs": opts.tol_feas, "tol_gap_rel": opts.tol_feas}
    scs = dict(max_iters=max(opts.max_iter, 20000),
               eps_abs=opts.tol_feas, eps_rel=opts.tol_feas)
    return [
        ("CLARABEL", dict(clarabel)),
        ("CLARABEL", dict(clarabel, static_regularization_constant=1e-7)),
        ("SCS", scs),
    ]


def solve(inst: SDPInstance, opts: SolveOptions | None = None) -> SolveReport:
    """Solve one instance; deterministic for identical inputs and options.

    ``solver="auto"`` walks a fixed sequence of backend configurations.
    A clean infeasibility certificate ends the walk; candidate points are
    accepted only after passing the independent residual check on the
    original instance.  Weak verdicts fall through to the next attempt.
    """
    import cvxpy as cp

    opts = opts or SolveOptions()
    t_start = time.perf_counter()

    if inst.nv == 0:
        # nothing to decide: blocks are constants
        lam = min((float(np.linalg.eigvalsh(0.5 * (b.F0 + b.F0.T))[0]) for b in inst.blocks),
                  default=0.0)
        ok = lam >= -opts.tol_feas and (inst.n_eq == 0 or np.max(np.abs(inst.b)) <= opts.tol_feas)
        return SolveReport(status=FEASIBLE if ok else INFEASIBLE, v=np.zeros(0),
                           primal_residual=max(0.0, -lam), dual_residual=0.0, gap=0.0,
                           iterations=0, wall_time=time.perf_counter() - t_start,
                           solver_name="(trivial)")

    native = opts.native_gram and any(blk.var_slice is not None for blk in inst.blocks)
    has_obj = bool(np.any(inst.c))
    if native:
        prob, recover = _native_problem(inst, cp)
    else:
        if opts.equilibrate:
            A, b, Gs, F0s, dscale = _equilibrate(inst, opts.equilibrate_iters)
        else:
            A, b = inst.A, inst.b
            Gs = [blk.G for blk in inst.blocks]
            F0s = [blk.F0 for blk in inst.blocks]
            dscale = np.ones(inst.nv)
        v = cp.Variable(inst.nv)
        constraints = []
        if inst.n_eq:
            constraints.append(A @ v == b)
        for blk, G, F0 in zip(inst.blocks, Gs, F0s):
            expr = cp.reshape(G @ v, (blk.size, blk.size), order="C") + F0
            constraints.append((expr + expr.T) / 2 >> 0)
        objective = cp.Minimize((inst.c * dscale) @ v if has_obj else 0)
        prob = cp.Problem(objective, constraints)
        recover = lambda: dscale * np.asarray(v.value, dtype=float)

    weak_infeasible = False
    iteration_limited = False
    last_message = ""
    iters = 0

    import warnings

    for solver_name, kwargs in _attempt_plan(opts):
        try:
            with warnings.catch_warnings():
                # inaccurate-solution warnings are handled by the chain itself
                warnings.simplefilter("ignore")
                prob.solve(solver=solver_name, verbose=opts.verbose, **kwargs)
        except Exception as exc:  # solver blow-ups become the next attempt
            last_message = f"{solver_name} raised: {exc}"
            continue
        iters = int(prob.solver_stats.num_iters or 0) if prob.solver_stats else 0
        status = prob.status
        wall = time.perf_counter() - t_start

        if status == cp.INFEASIBLE:
            return SolveReport(status=INFEASIBLE, v=None, primal_residual=np.inf,
                               dual_residual=0.0, gap=0.0, iterations=iters,
                               wall_time=wall, solver_name=solver_name,
                               message=f"{solver_name}: infeasibility certificate")
        if status == cp.INFEASIBLE_INACCURATE:
            weak_infeasible = True
            last_message = f"{solver_name}: weak infeasibility certificate"
            continue
        if status == "user_limit" or "iteration" in str(status).lower():
            iteration_limited = True
            last_message = f"{solver_name}: iteration limit"
            continue
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            last_message = f"{solver_name}: status {status}"
            continue

        vv = recover()
        if vv is None:
            last_message = f"{solver_name}: no point returned"
            continue
        if opts.polish and inst.n_eq:
            vv = _polish_equalities(inst, vv, opts.tol_feas)
        # never declare feasibility on the solver's word alone, and always
        # against the original (unscaled) instance
        rr = check_solution(inst, vv, tol=10 * opts.tol_feas)
        if not rr.ok:
            last_message = (f"{solver_name}: independent residual check failed "
                            f"(eq {rr.eq_residual_max:.2e}, eig {rr.min_eig:.2e})")
            continue

        primal = max(rr.eq_residual_max, max(0.0, -rr.min_eig))
        # a converged conic solve certifies optimality within tolerance; for
        # pure feasibility (c = 0) every feasible point is optimal
        gap = 0.0 if (not has_obj or status == cp.OPTIMAL) else opts.tol_feas
        final = OPTIMAL if has_obj else FEASIBLE
        if status == cp.OPTIMAL_INACCURATE:
            final = FEASIBLE  # point independently verified, optimality not claimed
        return SolveReport(status=final, v=vv, primal_residual=primal,
                           dual_residual=0.0, gap=gap, iterations=iters,
                           wall_time=wall, solver_name=solver_name)

    wall = time.perf_counter() - t_start
    if weak_infeasible:
        return SolveReport(status=INFEASIBLE, v=None, primal_residual=np.inf,
                           dual_residual=0.0, gap=0.0, iterations=iters,
                           wall_time=wall, solver_name=opts.solver,
                           message=last_message + " (no attempt found a feasible point)")
    status = ITERATION_LIMIT if iteration_limited else NUMERICAL_FAILURE
    return SolveReport(status=status, v=None, primal_residual=np.inf,
                       dual_residual=np.inf, gap=np.inf, iterations=iters,
                       wall_time=wall, solver_name=opts.solver, message=last_message)
