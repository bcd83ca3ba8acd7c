"""Evaluation, partition function, marginalization, and log-likelihood,
against enumeration and quadrature oracles."""

import numpy as np
import pytest
from scipy import integrate

from pcsq import engine, inference
from pcsq.circuits import from_region_graph
from pcsq.errors import ConfigError, DegenerateModelError, NumericError
from pcsq.families import CategoricalFamily, EmbeddingFamily, GaussianFamily, SplineFamily
from pcsq.inference import (
    Query,
    evaluate,
    log_density,
    log_likelihood,
    marginalize,
    partition_function,
    z_eval_count,
)
from pcsq.regions import build_linear_tree, linear_tree_from_order
from pcsq.splines import BSplineBasis
from pcsq.squaring import square

from conftest import enumerate_assignments, random_discrete_circuit


def _uniform_categorical_model(m=4):
    rg = linear_tree_from_order([0])
    c = from_region_graph(rg, 1, "hadamard", lambda s, k: CategoricalFamily(k, m))
    c.store.set_free(c.input_layers()[0].family.blocks["probs"], np.zeros((1, m)))
    c.store.set_free(c.layer(c.output_layer).param_block, [[1.0]])
    return square(c)


class TestEvaluate:
    def test_uniform_squared_value(self):
        sq = _uniform_categorical_model(4)
        out = evaluate(sq, np.array([[2.0]]))
        assert out.to_linear()[0] == pytest.approx(1.0 / 16.0, rel=1e-12)

    def test_shallow_mixture_matches_direct_square(self, rng):
        # K=3 shallow subtractive mixture vs a direct linear-space oracle
        rg = linear_tree_from_order([0])
        c = from_region_graph(rg, 3, "hadamard", lambda s, k: EmbeddingFamily(k, 5))
        c.store.values[:] = rng.normal(size=c.store.values.size)
        c.store.bump()
        sq = square(c)
        table = c.store.effective(c.input_layers()[0].family.blocks["values"])
        w = c.store.effective(c.layer(c.output_layer).param_block)[0]
        for state in range(5):
            want = float(w @ table[:, state]) ** 2
            got = evaluate(sq, np.array([[float(state)]])).to_linear()[0]
            assert got == pytest.approx(want, rel=1e-10, abs=1e-14)

    def test_squared_sign_never_negative(self, rng):
        for _ in range(10):
            c, d = random_discrete_circuit(rng)
            sq = square(c)
            out = evaluate(sq, enumerate_assignments(d))
            assert np.all(out.sign >= 0.0)

    def test_monotonic_configuration_nonnegative_everywhere(self, rng):
        # exp reparameterization plus non-negative families keeps outputs >= 0
        rg = build_linear_tree(4, 7)
        c = from_region_graph(
            rg, 3, "hadamard", lambda s, k: GaussianFamily(k), sum_reparam="exp"
        )
        c.store.values[:] = rng.normal(size=c.store.values.size)
        c.store.bump()
        out = evaluate(c, rng.normal(size=(200, 4)))
        assert np.all(out.sign >= 0.0)


class TestPartitionFunction:
    def test_uniform_categorical_z(self):
        for m in (2, 5, 8):
            sq = _uniform_categorical_model(m)
            z = partition_function(sq)
            assert z.to_linear() == pytest.approx(1.0 / m, rel=1e-12)

    def test_matches_enumeration_on_random_circuits(self, rng):
        for _ in range(10):
            c, d = random_discrete_circuit(rng, max_vars=10)
            sq = square(c)
            base = engine.forward(c, enumerate_assignments(d), space="linear").root
            z = partition_function(sq)
            assert z.to_linear() == pytest.approx(float((base**2).sum()), rel=1e-10)

    def test_cancelling_components_degenerate(self):
        # two identical standard Gaussians with weights (1, -1): c == 0
        rg = linear_tree_from_order([0])
        c = from_region_graph(rg, 2, "hadamard", lambda s, k: GaussianFamily(k))
        c.store.set_free(c.input_layers()[0].family.blocks["mean"], [0.0, 0.0])
        c.store.set_free(c.input_layers()[0].family.blocks["std"], [0.0, 0.0])
        c.store.set_free(c.layer(c.output_layer).param_block, [[1.0, -1.0]])
        with pytest.raises(DegenerateModelError):
            partition_function(square(c))

    def test_cached_per_parameter_version(self, rng):
        c, _ = random_discrete_circuit(rng)
        sq = square(c)
        before = z_eval_count(sq)
        partition_function(sq)
        partition_function(sq)
        assert z_eval_count(sq) == before + 1
        c.store.values[0] += 0.1
        c.store.bump()
        partition_function(sq)
        assert z_eval_count(sq) == before + 2


class TestMarginalize:
    def test_all_variables_gives_z(self, rng):
        c, d = random_discrete_circuit(rng)
        sq = square(c)
        z = partition_function(sq)
        m = marginalize(sq, Query(marginalized=set(range(d))))
        assert m.log_magnitude == pytest.approx(z.log_magnitude, rel=1e-14)

    def test_no_marginals_is_evaluation(self, rng):
        c, d = random_discrete_circuit(rng)
        sq = square(c)
        x = {v: float(v % 2) for v in range(d)}
        m = marginalize(sq, Query(evidence=x))
        direct = evaluate(sq, np.array([[x[v] for v in range(d)]]))
        assert m.to_linear() == pytest.approx(direct.to_linear()[0], rel=1e-12)

    def test_sum_over_states_matches_coarser_marginal(self, rng):
        for _ in range(10):
            c, d = random_discrete_circuit(rng, max_vars=8)
            sq = square(c)
            coarse = marginalize(sq, Query(marginalized=set(range(d)))).to_linear()
            total = sum(
                marginalize(
                    sq, Query(evidence={0: float(s)}, marginalized=set(range(1, d)))
                ).to_linear()
                for s in range(2)
            )
            assert total == pytest.approx(coarse, rel=1e-10)

    def test_continuous_marginal_vs_quadrature(self, rng):
        rg = linear_tree_from_order([0, 1])
        basis = BSplineBasis.uniform(2, 8, (0.0, 1.0))
        c = from_region_graph(rg, 3, "hadamard", lambda s, k: SplineFamily(k, basis))
        c.store.values[:] = rng.normal(size=c.store.values.size)
        c.store.bump()
        sq = square(c)
        for x1 in np.linspace(0.05, 0.95, 7):
            got = marginalize(sq, Query(evidence={0: x1}, marginalized={1})).to_linear()
            dens = lambda t: float(evaluate(sq, np.array([[x1, t]])).to_linear()[0])
            want, _ = integrate.quad(dens, 0.0, 1.0, limit=200)
            assert got == pytest.approx(want, rel=1e-6)

    def test_normalized_marginal(self, rng):
        c, d = random_discrete_circuit(rng)
        sq = square(c)
        q = Query(evidence={v: 0.0 for v in range(d)}, require_normalized=True)
        got = marginalize(sq, q).to_linear()
        z = partition_function(sq).to_linear()
        raw = evaluate(sq, np.zeros((1, d))).to_linear()[0]
        assert got == pytest.approx(raw / z, rel=1e-12)

    def test_query_validation(self, rng):
        c, d = random_discrete_circuit(rng)
        sq = square(c)
        with pytest.raises(ConfigError):
            marginalize(sq, Query(evidence={0: 1.0}, marginalized={0}))
        with pytest.raises(ConfigError):
            marginalize(sq, Query(evidence={0: 1.0}))  # others unconstrained
        with pytest.raises(ConfigError):
            marginalize(sq, Query(marginalized=set(range(d + 5))))


class TestPlainCircuitMarginalization:
    def test_monotonic_marginal_matches_enumeration(self, rng):
        # marginalization of a plain (unsquared) monotonic circuit uses
        # per-unit integral vectors at the input layers
        rg = build_linear_tree(3, 4)
        c = from_region_graph(
            rg, 2, "hadamard", lambda s, k: CategoricalFamily(k, 3), sum_reparam="exp"
        )
        c.store.values[:] = rng.normal(size=c.store.values.size) * 0.4
        c.store.bump()
        grid = enumerate_assignments(3, m=3)
        vals = evaluate(c, grid).to_linear()
        z = partition_function(c).to_linear()
        assert z == pytest.approx(vals.sum(), rel=1e-12)
        got = marginalize(c, Query(evidence={1: 2.0}, marginalized={0, 2})).to_linear()
        want = vals[grid[:, 1] == 2.0].sum()
        assert got == pytest.approx(want, rel=1e-12)

    def test_uniform_grid_mean_ll(self):
        # 2-variable uniform categorical over a 32x32 grid: -log(1024)
        rg = build_linear_tree(2, 0)
        c = from_region_graph(rg, 1, "hadamard", lambda s, k: CategoricalFamily(k, 32))
        for layer in c.input_layers():
            c.store.set_free(layer.family.blocks["probs"], np.zeros((1, 32)))
        for layer in c.sum_layers():
            c.store.set_free(layer.param_block, np.ones(c.store.free(layer.param_block).shape))
        sq = square(c)
        x = np.array([[0.0, 0.0], [31.0, 5.0], [16.0, 16.0]])
        assert log_likelihood(sq, x) == pytest.approx(-np.log(1024.0), rel=1e-12)


class TestNormalization:
    def test_discrete_density_sums_to_one(self, rng):
        for _ in range(5):
            c, d = random_discrete_circuit(rng, max_vars=8)
            sq = square(c)
            grid = enumerate_assignments(d)
            dens = np.exp(log_density(sq, grid))
            assert dens.sum() == pytest.approx(1.0, abs=1e-9)


class TestLogLikelihood:
    def test_uniform_model_ll(self):
        sq = _uniform_categorical_model(4)
        x = np.array([[0.0], [1.0], [3.0]])
        assert log_likelihood(sq, x) == pytest.approx(-np.log(4.0), rel=1e-12)

    def test_composition_identity(self, rng):
        c, d = random_discrete_circuit(rng)
        sq = square(c)
        x = enumerate_assignments(d)[:5]
        manual = evaluate(sq, x).log_magnitude - float(partition_function(sq).log_magnitude)
        np.testing.assert_allclose(log_density(sq, x), manual, rtol=1e-10, atol=1e-12)

    def test_monotonic_squared_path_equals_direct(self, rng):
        # all-positive circuit: normalizing c^2 or c gives the same density
        # when the squared path squares both numerator and normalizer
        rg = build_linear_tree(3, 2)
        c = from_region_graph(
            rg, 2, "hadamard", lambda s, k: CategoricalFamily(k, 3), sum_reparam="exp"
        )
        c.store.values[:] = rng.normal(size=c.store.values.size) * 0.3
        c.store.bump()
        sq = square(c)
        grid = enumerate_assignments(3, m=3)
        direct = np.exp(log_density(c, grid))
        squared = np.exp(log_density(sq, grid))
        # both are normalized distributions over the grid
        assert direct.sum() == pytest.approx(1.0, abs=1e-10)
        assert squared.sum() == pytest.approx(1.0, abs=1e-10)

    def test_zero_value_row_reported(self):
        # c cancels exactly at state 0 only; the failing row index surfaces
        rg = linear_tree_from_order([0])
        c = from_region_graph(rg, 2, "hadamard", lambda s, k: EmbeddingFamily(k, 2))
        c.store.set_free(c.input_layers()[0].family.blocks["values"], [[1.0, 2.0], [1.0, 5.0]])
        c.store.set_free(c.layer(c.output_layer).param_block, [[1.0, -1.0]])
        sq = square(c)
        with pytest.raises(NumericError, match="row 1"):
            log_likelihood(sq, np.array([[1.0], [0.0]]))
