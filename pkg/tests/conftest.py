import numpy as np
import pytest

from pcsq.circuits import from_region_graph
from pcsq.families import EmbeddingFamily, GaussianFamily
from pcsq.regions import build_binary_tree, build_linear_tree


def enumerate_assignments(d, m=2):
    """All m^d assignments as a (m^d, d) float array."""
    grids = np.meshgrid(*[np.arange(m)] * d, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.float64)


def assert_pointwise_squares(got, want, rtol=1e-10):
    """Pointwise comparison of two evaluations of c^2.

    Relative tolerance is taken against the larger of the point value and
    the circuit's squared scale: where a subtractive circuit nearly
    cancels, both float64 routes carry error proportional to the term
    scale, so a pure per-point ratio is unattainable in fixed precision.
    Exact cancellations must agree exactly (signed log-space represents
    them as true zeros).
    """
    got = np.asarray(got)
    want = np.asarray(want)
    zero = want == 0.0
    assert np.all(got[zero] == 0.0), "exact cancellations must stay exact"
    scale = np.max(np.abs(want), initial=0.0)
    bound = rtol * np.maximum(np.abs(want), scale)
    bad = np.abs(got - want) > bound
    assert not bad.any(), (
        f"{bad.sum()} points exceed the bound; worst "
        f"{np.max(np.abs(got - want) / np.maximum(bound, 1e-300)):.3g}x"
    )


def random_discrete_circuit(rng, max_vars=12, k_max=4):
    """Random structured-decomposable circuit over binary variables with
    subtractive (embedding) inputs and free real weights; depth <= 4."""
    product = "hadamard" if rng.random() < 0.5 else "kronecker"
    if rng.random() < 0.5:
        d = int(rng.integers(2, 6))  # linear tree: depth = d - 1
        rg = build_linear_tree(d, int(rng.integers(1 << 30)))
    else:
        d = int(rng.integers(2, max_vars + 1))  # binary tree: depth = ceil(log2 d)
        rg = build_binary_tree(d, int(rng.integers(1 << 30)))
    k = int(rng.integers(1, k_max + 1))
    c = from_region_graph(rg, k, product, lambda scope, units: EmbeddingFamily(units, 2))
    c.store.values[:] = rng.normal(size=c.store.values.size)
    c.store.bump()
    return c, d


def random_gaussian_circuit(rng, d=4, k=3, product="hadamard", structure="bt"):
    rg = (build_binary_tree if structure == "bt" else build_linear_tree)(
        d, int(rng.integers(1 << 30))
    )
    c = from_region_graph(rg, k, product, lambda scope, units: GaussianFamily(units))
    c.store.values[:] = rng.normal(size=c.store.values.size) * 0.5
    c.store.bump()
    return c


def random_deterministic_circuit(rng, d, structure="bt"):
    """Deterministic circuit over binary variables: one-hot inputs, monomial
    (scaled-permutation) sums below the root, free signed weights at the
    root."""
    rg = (build_binary_tree if structure == "bt" else build_linear_tree)(
        d, int(rng.integers(1 << 30))
    )
    c = from_region_graph(rg, 2, "hadamard", lambda scope, units: EmbeddingFamily(units, 2))
    for layer in c.layers:
        if layer.kind == "input":
            table = np.zeros((2, 2))
            table[0, 0] = _nonzero_normal(rng)
            table[1, 1] = _nonzero_normal(rng)
            c.store.set_free(layer.family.blocks["values"], table)
        elif layer.kind == "sum":
            shape = c.store.free(layer.param_block).shape
            if layer.layer_id == c.output_layer:
                c.store.set_free(layer.param_block, rng.normal(size=shape))
            else:
                perm = rng.permutation(shape[1])
                monomial = np.zeros(shape)
                for s in range(shape[0]):
                    monomial[s, perm[s % len(perm)]] = _nonzero_normal(rng)
                c.store.set_free(layer.param_block, monomial)
    return c


def _nonzero_normal(rng):
    value = rng.normal()
    while abs(value) < 1e-3:
        value = rng.normal()
    return value


@pytest.fixture
def rng():
    return np.random.default_rng(20240117)
