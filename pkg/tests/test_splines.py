"""B-spline bases: Cox-de Boor values and exact product integrals, checked
against scipy and adaptive quadrature oracles."""

import numpy as np
import pytest
from scipy import integrate, interpolate

from pcsq.errors import ConfigError, DomainError
from pcsq.splines import BSplineBasis


def test_basis_count_matches_convention():
    # quadratic basis over 4 interior knots spans 4 + 2 + 1 = 7 functions
    basis = BSplineBasis.uniform(2, 4, (0.0, 1.0))
    assert basis.num_bases == 7
    np.testing.assert_allclose(basis.interior, [0.2, 0.4, 0.6, 0.8])


def test_partition_of_unity_and_nonnegativity(rng):
    for order in (0, 1, 2, 3):
        basis = BSplineBasis.uniform(order, 6, (-2.0, 3.0))
        x = rng.uniform(-2.0, 3.0, size=300)
        design = basis.design_matrix(x)
        assert np.all(design >= 0.0)
        np.testing.assert_allclose(design.sum(axis=1), 1.0, atol=1e-12)


def test_matches_scipy_design(rng):
    basis = BSplineBasis.uniform(2, 8, (0.0, 4.0))
    x = rng.uniform(0.0, 4.0, size=200)
    mine = basis.design_matrix(x)
    theirs = interpolate.BSpline.design_matrix(x, basis.knots, 2).toarray()
    np.testing.assert_allclose(mine, theirs, atol=1e-12)


def test_endpoint_membership():
    basis = BSplineBasis.uniform(2, 4, (0.0, 1.0))
    design = basis.design_matrix(np.array([0.0, 1.0]))
    np.testing.assert_allclose(design.sum(axis=1), 1.0, atol=1e-14)
    with pytest.raises(DomainError):
        basis.design_matrix(np.array([1.0 + 1e-9]))
    with pytest.raises(DomainError):
        basis.design_matrix(np.array([-1e-9]))


def test_basis_integrals_against_quadrature():
    basis = BSplineBasis.uniform(2, 5, (0.0, 2.0))
    exact = basis.basis_integrals()
    for j in range(basis.num_bases):
        val, _ = integrate.quad(
            lambda t, j=j: basis.design_matrix(np.array([t]))[0, j], 0.0, 2.0, limit=200
        )
        assert exact[j] == pytest.approx(val, rel=1e-9, abs=1e-12)


def test_gram_against_adaptive_simpson(rng):
    basis = BSplineBasis.uniform(2, 6, (-1.0, 1.0))
    gram = basis.gram_matrix()
    assert np.allclose(gram, gram.T)
    pairs = [(0, 0), (1, 3), (2, 2), (4, 7), (basis.num_bases - 1, basis.num_bases - 1)]
    for a, b in pairs:
        def product(t):
            row = basis.design_matrix(np.atleast_1d(t))
            return row[:, a] * row[:, b]

        # adaptive Simpson via scipy's quadrature on each knot span
        edges = np.unique(basis.knots)
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(lambda t: float(product(t)[0]), lo, hi, limit=100)
            total += val
        assert gram[a, b] == pytest.approx(total, rel=1e-10, abs=1e-14)


def test_hat_function_self_integral():
    # order-1 basis: interior hat of height 1 and support width 2h integrates
    # its square to 2h/3
    basis = BSplineBasis.uniform(1, 9, (0.0, 1.0))
    h = 0.1
    gram = basis.gram_matrix()
    interior = 4
    assert gram[interior, interior] == pytest.approx(2 * h / 3, rel=1e-12)


def test_bad_configurations_rejected():
    with pytest.raises(ConfigError):
        BSplineBasis(2, [0.5, 0.4], (0.0, 1.0))  # not increasing
    with pytest.raises(ConfigError):
        BSplineBasis(2, [0.0, 0.5], (0.0, 1.0))  # touches the boundary
    with pytest.raises(ConfigError):
        BSplineBasis(2, [], (1.0, 1.0))  # empty interval
