"""Input families: pointwise evaluation and exact product integrals, each
checked against an independent quadrature or enumeration oracle."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from pcsq.circuits import ParameterStore
from pcsq.errors import DomainError
from pcsq.families import (
    BinomialFamily,
    CategoricalFamily,
    EmbeddingFamily,
    GaussianFamily,
    RbfKernelFamily,
    SplineFamily,
    family_from_dict,
)
from pcsq.slog import SignedLogTensor
from pcsq.splines import BSplineBasis


def _make(family, seed=0, scale=0.7):
    store = ParameterStore()
    family.register(store, "t.")
    rng = np.random.default_rng(seed)
    store.values[:] = rng.normal(size=store.values.size) * scale
    store.bump()
    return store


class TestPointEvaluation:
    def test_symmetric_binomial(self):
        fam = BinomialFamily(1, trials=2)
        store = _make(fam)
        store.set_free(fam.blocks["logit_p"], [0.0])  # p = 1/2
        out = fam.log_eval(store, np.array([1.0]))
        assert out.to_linear()[0, 0] == pytest.approx(0.5)

    def test_standard_gaussian_at_zero(self):
        fam = GaussianFamily(1)
        store = _make(fam)
        store.set_free(fam.blocks["mean"], [0.0])
        store.set_free(fam.blocks["std"], [0.0])  # exp(0) = 1
        out = fam.log_eval(store, np.array([0.0]))
        assert out.log_magnitude[0, 0] == pytest.approx(math.log(1 / math.sqrt(2 * math.pi)))

    def test_spline_partition_of_unity_value(self):
        basis = BSplineBasis.uniform(2, 4, (0.0, 1.0))
        fam = SplineFamily(1, basis)
        store = _make(fam)
        store.set_free(fam.blocks["coeffs"], np.ones((1, basis.num_bases)))
        xs = np.linspace(0.05, 0.95, 11)
        out = fam.log_eval(store, xs)
        np.testing.assert_allclose(out.to_linear()[:, 0], 1.0, atol=1e-12)
        # quadrature oracle: the constant-1 function integrates to the width
        vec = fam.integral_vector(store)
        assert vec.to_linear()[0] == pytest.approx(1.0, rel=1e-12)

    def test_embedding_signs(self):
        fam = EmbeddingFamily(2, 3)
        store = _make(fam)
        store.set_free(fam.blocks["values"], [[1.0, -2.0, 0.0], [0.5, 0.5, 0.5]])
        out = fam.log_eval(store, np.array([0.0, 1.0, 2.0]))
        np.testing.assert_allclose(out.to_linear()[:, 0], [1.0, -2.0, 0.0])
        assert out.sign[2, 0] == 0.0

    def test_spline_outside_domain_errors(self):
        fam = SplineFamily(1, BSplineBasis.uniform(2, 4, (0.0, 1.0)))
        store = _make(fam)
        with pytest.raises(DomainError):
            fam.log_eval(store, np.array([1.5]))

    def test_discrete_domain_errors(self):
        fam = CategoricalFamily(1, 3)
        store = _make(fam)
        with pytest.raises(DomainError):
            fam.log_eval(store, np.array([3.0]))


class TestProductIntegrals:
    def test_gaussian_pair_closed_form(self):
        fam = GaussianFamily(2)
        store = _make(fam)
        store.set_free(fam.blocks["mean"], [0.0, 0.0])
        store.set_free(fam.blocks["std"], [0.0, 0.0])
        mat = fam.integral_matrix(store).to_linear()
        assert mat[0, 0] == pytest.approx(1.0 / (2.0 * math.sqrt(math.pi)), rel=1e-12)
        # quadrature oracle
        val, _ = integrate.quad(lambda t: stats.norm.pdf(t) ** 2, -np.inf, np.inf)
        assert mat[0, 1] == pytest.approx(val, rel=1e-9)

    def test_gaussian_random_pairs_vs_quadrature(self, rng):
        fam = GaussianFamily(3)
        store = _make(fam, seed=5)
        mean = store.effective(fam.blocks["mean"])
        std = store.effective(fam.blocks["std"])
        mat = fam.integral_matrix(store).to_linear()
        for i in range(3):
            for j in range(3):
                val, _ = integrate.quad(
                    lambda t: stats.norm.pdf(t, mean[i], std[i]) * stats.norm.pdf(t, mean[j], std[j]),
                    -np.inf,
                    np.inf,
                )
                assert mat[i, j] == pytest.approx(val, rel=1e-8)

    def test_uniform_categorical_pair(self):
        fam = CategoricalFamily(2, 2)
        store = _make(fam)
        store.set_free(fam.blocks["probs"], np.zeros((2, 2)))  # softmax -> (0.5, 0.5)
        mat = fam.integral_matrix(store).to_linear()
        np.testing.assert_allclose(mat, 0.5)

    def test_categorical_matches_enumeration(self, rng):
        fam = CategoricalFamily(3, 5)
        store = _make(fam, seed=9)
        table = store.effective(fam.blocks["probs"])
        mat = fam.integral_matrix(store).to_linear()
        np.testing.assert_allclose(mat, table @ table.T, rtol=1e-12)

    def test_binomial_matches_enumeration(self):
        fam = BinomialFamily(2, trials=4)
        store = _make(fam, seed=3)
        mat = fam.integral_matrix(store).to_linear()
        counts = np.arange(5)
        pmf = np.exp(fam._log_pmf(store, counts)).T
        np.testing.assert_allclose(mat, pmf @ pmf.T, rtol=1e-12)
        np.testing.assert_allclose(pmf.sum(axis=1), 1.0, rtol=1e-12)

    def test_spline_pairs_vs_adaptive_simpson(self, rng):
        basis = BSplineBasis.uniform(2, 8, (-1.0, 2.0))
        fam = SplineFamily(2, basis)
        store = _make(fam, seed=7)
        coeffs = store.effective(fam.blocks["coeffs"])
        mat = fam.integral_matrix(store).to_linear()

        def f(t, unit):
            return float((basis.design_matrix(np.atleast_1d(t)) @ coeffs[unit])[0])

        for i in range(2):
            for j in range(2):
                edges = np.unique(basis.knots)
                total = sum(
                    integrate.quad(lambda t: f(t, i) * f(t, j), lo, hi, limit=60)[0]
                    for lo, hi in zip(edges[:-1], edges[1:])
                )
                assert mat[i, j] == pytest.approx(total, rel=1e-10, abs=1e-13)

    def test_rbf_pair_closed_form(self, rng):
        anchors = rng.normal(size=(3, 2))
        fam = RbfKernelFamily(anchors, bandwidth=0.9)
        store = ParameterStore()
        mat = fam.integral_matrix(store).to_linear()

        def product(i, j):
            def f(y, x):
                ka = math.exp(-((x - anchors[i, 0]) ** 2 + (y - anchors[i, 1]) ** 2) / (2 * 0.81))
                kb = math.exp(-((x - anchors[j, 0]) ** 2 + (y - anchors[j, 1]) ** 2) / (2 * 0.81))
                return ka * kb

            val, _ = integrate.dblquad(f, -np.inf, np.inf, -np.inf, np.inf)
            return val

        assert mat[0, 1] == pytest.approx(product(0, 1), rel=1e-7)
        assert mat[2, 2] == pytest.approx(product(2, 2), rel=1e-7)


class TestIntegralMatrixProperties:
    @pytest.mark.parametrize("maker", [
        lambda: GaussianFamily(4),
        lambda: CategoricalFamily(4, 6),
        lambda: EmbeddingFamily(4, 6),
        lambda: BinomialFamily(4, 9),
        lambda: SplineFamily(4, BSplineBasis.uniform(2, 10, (0.0, 1.0))),
    ])
    def test_symmetric_positive_semidefinite(self, maker, rng):
        fam = maker()
        store = _make(fam, seed=int(rng.integers(1000)))
        mat = fam.integral_matrix(store).to_linear()
        np.testing.assert_allclose(mat, mat.T, rtol=1e-12, atol=1e-12)
        eigvals = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        assert eigvals.min() >= -1e-10 * max(1.0, eigvals.max())

    def test_single_unit_matrix_is_self_integral(self):
        fam = GaussianFamily(1)
        store = _make(fam)
        mat = fam.integral_matrix(store).to_linear()
        assert mat.shape == (1, 1)
        std = store.effective(fam.blocks["std"])[0]
        assert mat[0, 0] == pytest.approx(1.0 / (2 * std * math.sqrt(math.pi)), rel=1e-12)

    def test_identical_units_give_constant_matrix(self):
        fam = GaussianFamily(3)
        store = _make(fam)
        store.set_free(fam.blocks["mean"], [0.3, 0.3, 0.3])
        store.set_free(fam.blocks["std"], [-0.1, -0.1, -0.1])
        mat = fam.integral_matrix(store).to_linear()
        assert np.ptp(mat) < 1e-15

    def test_product_integral_entry_accessor(self, rng):
        fam = CategoricalFamily(3, 4)
        store = _make(fam, seed=6)
        mat = fam.integral_matrix(store).to_linear()
        for i in range(3):
            for j in range(3):
                got = fam.product_integral(store, i, j).to_linear()
                assert got == pytest.approx(mat[i, j], rel=1e-15)
        with pytest.raises(Exception):
            fam.product_integral(store, 0, 3)


class TestMonotonicModes:
    def test_monotonic_spline_nonnegative_everywhere(self, rng):
        basis = BSplineBasis.uniform(2, 8, (0.0, 1.0))
        fam = SplineFamily(3, basis, monotonic=True)
        store = _make(fam, seed=2)
        xs = rng.uniform(0.0, 1.0, size=500)
        assert np.all(fam.log_eval(store, xs).sign >= 0.0)

    def test_categorical_rows_normalized(self, rng):
        fam = CategoricalFamily(3, 7)
        store = _make(fam, seed=4)
        table = store.effective(fam.blocks["probs"])
        np.testing.assert_allclose(table.sum(axis=1), 1.0, rtol=1e-12)
        assert np.all(table > 0)


def test_serialization_round_trip(rng):
    basis = BSplineBasis.uniform(2, 5, (0.0, 1.0))
    for fam in (
        GaussianFamily(2),
        CategoricalFamily(2, 4),
        EmbeddingFamily(2, 4),
        BinomialFamily(2, 6),
        SplineFamily(2, basis, monotonic=True),
        RbfKernelFamily(rng.normal(size=(3, 2)), 1.1),
    ):
        store = ParameterStore()
        fam.register(store, "x.")
        doc = fam.to_dict()
        again = family_from_dict(doc)
        assert again.to_dict() == doc
        assert again.units == fam.units
        assert again.num_states == fam.num_states
