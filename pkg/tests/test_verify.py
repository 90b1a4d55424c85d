import dataclasses
import json

import numpy as np
import pytest

from polystab.basis import make_basis
from polystab.experiment import (
    DivergenceError,
    NoNoise,
    linear1d,
    make_noise_bound,
    simulate_experiment,
    vanderpol,
)
from polystab.polyalg import MatrixPolynomial
from polystab.sdpsolve import solve
from polystab.soscompile import Method, SynthesisProblem, build_and_compile
from polystab.verify import (
    Certificate,
    boundary_ring,
    extract,
    lyapunov_audit,
    report,
    simulate_closed_loop,
    simulate_ring,
    timing_verdict,
    vdot_polynomial,
)


@pytest.fixture(scope="module")
def scalar_cert():
    gt = linear1d()
    spec = make_basis(1, 1, dmax=1)
    ds = simulate_experiment(gt, spec, x0=[1.0],
                             input_signal=lambda t: np.array([np.sin(2 * t) + 0.3]),
                             t0=0.0, tau=0.3, T=6, noise=NoNoise())
    ds = make_noise_bound(ds, "absolute", np.zeros((1, 1)))
    problem = SynthesisProblem(method=Method.THM1_CONST_B, spec=spec, data=ds,
                               deg_YK=0, deg_eps2=0)
    program, inst = build_and_compile(problem)
    rep = solve(inst)
    assert rep.is_feasible, rep.message
    return gt, program, rep, extract(program, rep)


@pytest.fixture(scope="module")
def vdp_cert():
    gt = vanderpol()
    spec = make_basis(2, 1, dmax=3)
    ds = simulate_experiment(gt, spec, x0=[-0.1, 0.1],
                             input_signal=lambda t: np.array([np.sin(t)]),
                             t0=0.0, tau=0.5, T=12, noise=NoNoise())
    ds = make_noise_bound(ds, "absolute", np.zeros((2, 1)))
    problem = SynthesisProblem(method=Method.COR1, spec=spec, data=ds, deg_eps2=4)
    program, inst = build_and_compile(problem)
    rep = solve(inst)
    assert rep.is_feasible, rep.message
    return gt, extract(program, rep)


class TestExtract:
    def test_constant_gain_scalar(self, scalar_cert):
        gt, program, rep, cert = scalar_cert
        # Y constant and P scalar: F = U0 Y / P, a constant gain
        assert cert.F.shape == (1, 1)
        assert cert.F.degree == 0
        data = program.problem.data
        f_manual = float(data.U0 @ cert.YorK.evaluate(np.zeros(1))[..., 0]) / cert.P[0, 0]
        assert cert.F[0, 0].coeff(next(iter(cert.F[0, 0].terms))) == pytest.approx(f_manual)

    def test_stabilizing_sign(self, scalar_cert):
        # closed loop xdot = F x needs F < 0 (eigenvalue sign oracle)
        gt, program, rep, cert = scalar_cert
        gain = cert.F.evaluate(np.zeros(1))[0, 0]
        assert gain < 0

    def test_fp_equals_u0y(self, scalar_cert):
        gt, program, rep, cert = scalar_cert
        data = program.problem.data
        n = cert.Zhat.nvars
        lhs = cert.F @ MatrixPolynomial.from_constant(cert.P, n)
        rhs = MatrixPolynomial.from_constant(data.U0, n) @ cert.YorK
        assert (lhs - rhs).max_coeff() <= 1e-6

    def test_vdp_controller_shape(self, vdp_cert):
        gt, cert = vdp_cert
        # 1x2 gain with degree-2 entries: the input is cubic in the state
        assert cert.F.shape == (1, 2)
        assert cert.F.degree == 2
        assert cert.controller()[0, 0].degree == 3

    def test_rejects_infeasible_report(self, scalar_cert):
        gt, program, rep, cert = scalar_cert
        bad = dataclasses.replace(rep, status="infeasible", v=None)
        with pytest.raises(ValueError):
            extract(program, bad)

    def test_p_floor_respected(self, vdp_cert):
        gt, cert = vdp_cert
        assert np.linalg.eigvalsh(cert.P)[0] >= 1e-3 - 1e-6

    def test_json_roundtrip(self, vdp_cert):
        gt, cert = vdp_cert
        blob = json.dumps(cert.to_dict(), sort_keys=True)
        back = Certificate.from_dict(json.loads(blob))
        assert back.method == cert.method
        np.testing.assert_array_equal(back.P, cert.P)
        assert back.F == cert.F
        assert back.eps1 == cert.eps1


class TestLyapunovAudit:
    def test_vdp_certificate_passes(self, vdp_cert):
        gt, cert = vdp_cert
        audit = lyapunov_audit(cert, gt, box=3.0, nsamples=10_000)
        assert audit.passed, repr(audit)
        assert audit.max_vdot < 0
        assert audit.frac_negative == 1.0

    def test_zero_gain_fails_on_vanderpol(self, vdp_cert):
        # the unforced oscillator has a limit cycle: V must grow somewhere
        gt, cert = vdp_cert
        n = cert.Zhat.nvars
        zero_f = MatrixPolynomial.zeros(1, 2, n)
        broken = dataclasses.replace(cert, F=zero_f, block=None)
        audit = lyapunov_audit(broken, gt, box=3.0, nsamples=10_000)
        assert not audit.passed
        assert audit.max_vdot > 0

    def test_v_positive_definite(self, vdp_cert):
        gt, cert = vdp_cert
        audit = lyapunov_audit(cert, gt, box=3.0, nsamples=5_000)
        assert audit.min_v > 0
        assert cert.lyapunov().evaluate(np.zeros(2)) == 0.0

    def test_block_cross_check(self, vdp_cert):
        gt, cert = vdp_cert
        audit = lyapunov_audit(cert, gt, box=3.0, nsamples=1_000)
        assert audit.block_min_eig is not None
        assert audit.block_min_eig >= -1e-7

    def test_flipped_gain_fails(self, vdp_cert):
        gt, cert = vdp_cert
        flipped = dataclasses.replace(cert, F=-cert.F, block=None)
        audit = lyapunov_audit(flipped, gt, box=3.0, nsamples=5_000)
        assert not audit.passed


class TestClosedLoop:
    def test_convergence_from_corner(self, vdp_cert):
        gt, cert = vdp_cert
        traj = simulate_closed_loop(cert, gt, x0=[2.0, -2.0], t_end=20.0, dt=1e-3)
        assert traj.final_norm() < 1e-3
        assert traj.v_nonincreasing()

    def test_equilibrium_stays_put(self, vdp_cert):
        gt, cert = vdp_cert
        traj = simulate_closed_loop(cert, gt, x0=[0.0, 0.0], t_end=1.0, dt=1e-3)
        np.testing.assert_allclose(traj.X, 0.0, atol=1e-12)

    def test_open_loop_reaches_limit_cycle(self, vdp_cert):
        gt, cert = vdp_cert
        n = cert.Zhat.nvars
        open_loop = dataclasses.replace(cert, F=MatrixPolynomial.zeros(1, 2, n), block=None)
        traj = simulate_closed_loop(open_loop, gt, x0=[-0.1, 0.1], t_end=20.0, dt=1e-3)
        # classical behavior: converges to the limit cycle, not the origin
        assert traj.final_norm() > 0.5
        assert traj.final_norm() < 10.0

    def test_divergence_reported(self):
        # destabilizing gain on the scalar integrator blows up in finite time
        gt = linear1d()
        spec = make_basis(1, 1, dmax=1)
        n = 1
        cert = Certificate(
            method=Method.COR1, P=np.array([[1.0]]),
            YorK=MatrixPolynomial.from_constant([[2.0]], n),
            eps1=spec.Z[0, 0], eps2=spec.Z[0, 0],
            F=MatrixPolynomial.from_constant([[2.0]], n),   # xdot = +2x^2-ish
            Zhat=MatrixPolynomial.column([spec.Z[0, 0] * 1.0]),
        )
        big = dataclasses.replace(cert, F=MatrixPolynomial.from_constant([[50.0]], n))
        with pytest.raises(DivergenceError):
            simulate_closed_loop(big, gt, x0=[1.0], t_end=50.0, dt=1e-2)

    def test_trajectory_csv(self, tmp_path, vdp_cert):
        gt, cert = vdp_cert
        traj = simulate_closed_loop(cert, gt, x0=[1.0, 1.0], t_end=0.1, dt=1e-2)
        path = traj.write_csv(tmp_path / "traj.csv")
        header = path.read_text().splitlines()[0]
        assert header == "t,x1,x2,u1,V"

    def test_ring_count_and_boundary(self):
        pts = boundary_ring(2, 3.0, 10)
        assert pts.shape == (10, 2)
        assert np.allclose(np.max(np.abs(pts), axis=1), 3.0)


class TestReport:
    def test_single_method_table(self, vdp_cert):
        gt, cert = vdp_cert
        comp = report([cert], timings={"cor1": 1.0})
        assert len(comp.rows) == 1
        assert comp.ordering == "n/a"

    def test_timing_verdicts(self):
        assert timing_verdict(1.0, 2.0) == "cor1_faster"
        assert timing_verdict(2.0, 1.0) == "violated"
        # equal within 5% is inconclusive rather than pass/fail
        assert timing_verdict(1.0, 1.03) == "inconclusive"
        assert timing_verdict(0.0, 0.0) == "inconclusive"

    def test_vdot_polynomial_consistency(self, vdp_cert):
        # symbolic Vdot equals finite differences of V along the flow
        gt, cert = vdp_cert
        vd = vdot_polynomial(cert, gt)
        traj = simulate_closed_loop(cert, gt, x0=[1.5, -0.5], t_end=0.2, dt=1e-3)
        fd = np.gradient(traj.V, traj.t)
        sym = vd.evaluate(traj.X)
        np.testing.assert_allclose(sym[5:-5], fd[5:-5], rtol=5e-3, atol=1e-8)
