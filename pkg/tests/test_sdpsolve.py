import numpy as np
import pytest
import scipy.sparse as sp

from polystab.soscompile import PSDBlock, SDPInstance, tri_index
from polystab.sdpsolve import SolveOptions, check_solution, solve


def gram_instance(size, eq_rows, b, c=None, name="Q"):
    """Instance with one packed-symmetric PSD variable and given equalities."""
    ntri = size * (size + 1) // 2
    rows, cols, vals = [], [], []
    for a in range(size):
        for bb in range(size):
            lo, hi = min(a, bb), max(a, bb)
            rows.append(a * size + bb)
            cols.append(tri_index(lo, hi, size))
            vals.append(1.0)
    G = sp.coo_matrix((vals, (rows, cols)), shape=(size * size, ntri)).tocsr()
    blk = PSDBlock(name=f"gram:{name}", size=size, G=G, F0=np.zeros((size, size)),
                   var_slice=slice(0, ntri))
    A = sp.csr_matrix(np.asarray(eq_rows, dtype=float).reshape(len(b), ntri))
    return SDPInstance(nv=ntri, blocks=(blk,), A=A, b=np.asarray(b, dtype=float),
                       c=np.asarray(c if c is not None else np.zeros(ntri)),
                       layout=((f"gram:{name}", slice(0, ntri)),),
                       eq_labels=tuple(f"eq{i}" for i in range(len(b))),
                       meta={})


class TestSolve:
    def test_trace_minimization_rank_one(self):
        # Q >= 0, Q11 = 1, minimize trace -> Q = e1 e1^T
        n = 3
        ntri = n * (n + 1) // 2
        row = np.zeros(ntri)
        row[tri_index(0, 0, n)] = 1.0
        c = np.zeros(ntri)
        for d in range(n):
            c[tri_index(d, d, n)] = 1.0
        inst = gram_instance(n, [row], [1.0], c=c)
        rep = solve(inst)
        assert rep.status == "optimal"
        Q = inst.blocks[0].value(rep.v)
        expected = np.zeros((n, n))
        expected[0, 0] = 1.0
        np.testing.assert_allclose(Q, expected, atol=1e-6)

    def test_negative_pin_infeasible(self):
        inst = gram_instance(1, [[1.0]], [-1.0])
        rep = solve(inst)
        assert rep.status == "infeasible"

    def test_feasibility_status_without_objective(self):
        inst = gram_instance(2, [[1.0, 0.0, 0.0]], [2.0])
        rep = solve(inst)
        assert rep.status == "feasible"
        assert max(rep.primal_residual, rep.gap) <= 1e-7

    def test_determinism(self):
        n = 3
        ntri = n * (n + 1) // 2
        row = np.zeros(ntri)
        row[tri_index(0, 1, n)] = 1.0
        c = np.zeros(ntri)
        for d in range(n):
            c[tri_index(d, d, n)] = 1.0
        inst = gram_instance(n, [row], [0.5], c=c)
        r1 = solve(inst)
        r2 = solve(inst)
        assert r1.status == r2.status
        np.testing.assert_array_equal(r1.v, r2.v)
        assert r1.iterations == r2.iterations

    def test_trivial_instance(self):
        inst = SDPInstance(nv=0, blocks=(), A=sp.csr_matrix((0, 0)), b=np.zeros(0),
                           c=np.zeros(0), layout=(), eq_labels=(), meta={})
        rep = solve(inst)
        assert rep.is_feasible

    def test_wall_time_nonnegative(self):
        inst = gram_instance(2, [[1.0, 0.0, 0.0]], [1.0])
        rep = solve(inst)
        assert rep.wall_time >= 0.0


class TestCheckSolution:
    def test_is_the_oracle_for_feasible_points(self):
        inst = gram_instance(2, [[1.0, 0.0, 0.0]], [1.0])
        rep = solve(inst)
        rr = check_solution(inst, rep.v, tol=1e-7)
        assert rr.ok
        assert rr.min_eig >= -1e-7
        assert rr.eq_residual_max <= 1e-6

    def test_zero_point_violates_floor(self):
        # block P - I >= 0 with v = 0 reports the violation at that block
        G = sp.csr_matrix(np.array([[1.0], [0.0], [0.0], [1.0]]))
        blk = PSDBlock(name="P_floor", size=2, G=G, F0=-np.eye(2))
        inst = SDPInstance(nv=1, blocks=(blk,), A=sp.csr_matrix((0, 1)),
                           b=np.zeros(0), c=np.zeros(1),
                           layout=(("P", slice(0, 1)),), eq_labels=(), meta={})
        rr = check_solution(inst, np.zeros(1), tol=1e-7)
        assert not rr.ok
        assert dict(rr.block_min_eig)["P_floor"] == pytest.approx(-1.0)

    def test_perturbation_localizes(self):
        # bumping one variable by 1 spikes exactly the equality rows that
        # reference it
        n = 2
        ntri = 3
        rows = np.zeros((2, ntri))
        rows[0, tri_index(0, 0, n)] = 1.0
        rows[1, tri_index(1, 1, n)] = 1.0
        inst = gram_instance(n, rows, [1.0, 2.0])
        rep = solve(inst)
        v = rep.v.copy()
        v[tri_index(1, 1, n)] += 1.0
        rr = check_solution(inst, v, tol=1e-7)
        assert rr.eq_residuals[0] <= 1e-6
        assert rr.eq_residuals[1] == pytest.approx(1.0, abs=1e-6)
        assert rr.worst_eq_label == "eq1"

    def test_length_mismatch(self):
        inst = gram_instance(1, [[1.0]], [1.0])
        with pytest.raises(ValueError):
            check_solution(inst, np.zeros(5))

    def test_feasible_passes_at_ten_x_tolerance(self):
        # solver-independence invariant of declared feasibility
        opts = SolveOptions(tol_feas=1e-8)
        inst = gram_instance(3, [np.eye(6)[0]], [1.0])
        rep = solve(inst, opts)
        assert rep.is_feasible
        assert check_solution(inst, rep.v, tol=10 * opts.tol_feas).ok
