import itertools

import numpy as np
import pytest

from polystab.basis import (
    FactorizationError,
    build_power_vector,
    factorize,
    make_basis,
    validate_basis,
)
from polystab.polyalg import MatrixPolynomial, Polynomial


def entry_monomials(vec):
    return [next(iter(vec[i, 0].terms)) for i in range(vec.rows)]


class TestBuildPowerVector:
    def test_benchmark_nine_monomials(self):
        Z = build_power_vector(2, 1, 3)
        assert Z.rows == 9
        names = [repr(Z[i, 0]) for i in range(9)]
        assert names == ["x1", "x2", "x1^2", "x1*x2", "x2^2",
                         "x1^3", "x1^2*x2", "x1*x2^2", "x2^3"]

    def test_single_variable(self):
        Z = build_power_vector(1, 1, 1)
        assert Z.rows == 1
        assert Z[0, 0] == Polynomial.variable(0, 1)

    def test_three_vars_degree_two(self):
        # oracle: exhaustive enumeration of exponent tuples
        expected = {exps for exps in itertools.product(range(3), repeat=3)
                    if 1 <= sum(exps) <= 2}
        Z = build_power_vector(3, 1, 2)
        got = {m.exponents for m in entry_monomials(Z)}
        assert got == expected
        assert Z.rows == 9

    def test_counts_match_enumeration(self):
        for n in range(1, 5):
            for dmax in range(1, 6):
                Z = build_power_vector(n, 1, dmax)
                brute = sum(1 for exps in itertools.product(range(dmax + 1), repeat=n)
                            if 1 <= sum(exps) <= dmax)
                assert Z.rows == brute

    def test_invalid_range(self):
        with pytest.raises(ValueError):
            build_power_vector(2, 0, 3)
        with pytest.raises(ValueError):
            build_power_vector(2, 3, 1)


class TestFactorize:
    def test_identity_when_equal(self):
        Z = build_power_vector(2, 1, 2)
        H = factorize(Z, Z)
        assert H == MatrixPolynomial.identity(Z.rows, 2)

    def test_benchmark_factorization(self):
        Z = build_power_vector(2, 1, 3)
        Zhat = build_power_vector(2, 1, 1)
        H = factorize(Z, Zhat)
        assert H.shape == (9, 2)
        # identity holds exactly
        assert (H @ Zhat).allclose(Z, 0.0)
        # one nonzero entry per row
        for i in range(9):
            nonzero = [j for j in range(2) if not H[i, j].is_zero()]
            assert len(nonzero) == 1
        # only constant entries survive at the origin
        H0 = H.evaluate(np.zeros(2))
        expected = np.zeros((9, 2))
        expected[0, 0] = expected[1, 1] = 1.0
        np.testing.assert_allclose(H0, expected)

    def test_evaluation_identity_random_points(self):
        spec = make_basis(2, 1, dmax=3)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-3, 3, size=(100, 2))
        lhs = spec.Z.evaluate(pts)[..., 0]
        rhs = (spec.H.evaluate(pts) @ spec.Zhat.evaluate(pts))[..., 0]
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_indivisible_monomial(self):
        Z = MatrixPolynomial.column([Polynomial.variable(1, 2)])  # [x2]
        Zhat = MatrixPolynomial.column([Polynomial.variable(0, 2)])  # [x1]
        with pytest.raises(FactorizationError, match="x2"):
            factorize(Z, Zhat)

    def test_maximal_degree_divisor_preferred(self):
        # Z entry x1^2 x2 with Zhat = [x1, x2, x1*x2]: x1*x2 has maximal degree
        Zhat = MatrixPolynomial.column([
            Polynomial.variable(0, 2), Polynomial.variable(1, 2),
            Polynomial.variable(0, 2) * Polynomial.variable(1, 2),
        ])
        Z = MatrixPolynomial.column([
            Polynomial.variable(0, 2) * Polynomial.variable(0, 2) * Polynomial.variable(1, 2)
        ])
        H = factorize(Z, Zhat)
        assert not H[0, 2].is_zero()
        assert H[0, 0].is_zero() and H[0, 1].is_zero()


class TestValidateBasis:
    def test_benchmark_spec_passes(self):
        spec = make_basis(2, 1, dmax=3)
        diag = validate_basis(spec)
        assert diag.passed, repr(diag)

    def test_first_components_check_fails(self):
        x1 = Polynomial.variable(0, 1)
        Zhat = MatrixPolynomial.column([x1 * x1])
        Z = MatrixPolynomial.column([x1 * x1])
        from polystab.basis import BasisSpec
        spec = BasisSpec(n=1, m=1, Z=Z, Zhat=Zhat, H=factorize(Z, Zhat),
                         W=MatrixPolynomial.identity(1, 1))
        diag = validate_basis(spec)
        assert "first_n_components_equal_x" in diag.failed()

    def test_constant_monomial_fails_origin_check(self):
        x1 = Polynomial.variable(0, 1)
        one = Polynomial.constant(1.0, 1)
        Z = MatrixPolynomial.column([x1, one])
        Zhat = MatrixPolynomial.column([x1, one])
        from polystab.basis import BasisSpec
        spec = BasisSpec(n=1, m=1, Z=Z, Zhat=Zhat, H=factorize(Z, Zhat),
                         W=MatrixPolynomial.identity(1, 1))
        diag = validate_basis(spec)
        assert "z_zero_at_origin" in diag.failed()

    def test_default_w_is_identity(self):
        spec = make_basis(2, 2, dmax=2)
        assert spec.W == MatrixPolynomial.identity(2, 2)
        assert spec.q == 2

    def test_dimensions(self):
        spec = make_basis(2, 1, dmax=3)
        assert (spec.N, spec.p, spec.q) == (9, 2, 1)

    def test_serialization_roundtrip(self):
        spec = make_basis(2, 1, dmax=3)
        from polystab.basis import BasisSpec
        back = BasisSpec.from_dict(spec.to_dict())
        assert back.Z == spec.Z and back.H == spec.H and back.W == spec.W
