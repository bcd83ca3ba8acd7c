"""Model-document serialization: bit-exact float round trips and
evaluation equality after reload."""

import json

import numpy as np
import pytest

from pcsq.circuits import from_region_graph
from pcsq.families import CategoricalFamily, GaussianFamily, SplineFamily
from pcsq.inference import evaluate, partition_function
from pcsq.mixtures import CircuitMixture
from pcsq.modeldoc import load_model, model_from_dict, model_to_dict, save_model
from pcsq.regions import build_binary_tree, build_linear_tree
from pcsq.splines import BSplineBasis
from pcsq.squaring import SquaredCircuit, square

from conftest import random_discrete_circuit


def _nasty_values(store, rng):
    vals = rng.normal(size=store.values.size)
    vals[0] = np.pi
    vals[-1] = np.nextafter(1.0, 2.0)  # a value decimal text may not keep
    store.values[:] = vals
    store.bump()


def test_circuit_round_trip_bit_exact(rng, tmp_path):
    c, _ = random_discrete_circuit(rng)
    _nasty_values(c.store, rng)
    path = tmp_path / "model.json"
    save_model(c, path)
    again = load_model(path)
    np.testing.assert_array_equal(again.store.values, c.store.values)
    for name, block in c.store.blocks.items():
        other = again.store.blocks[name]
        assert (block.offset, block.shape, block.reparam, block.trainable) == (
            other.offset,
            other.shape,
            other.reparam,
            other.trainable,
        )


def test_deserialized_model_evaluates_bit_identically(rng, tmp_path):
    rg = build_binary_tree(4, seed=3)
    c = from_region_graph(rg, 3, "hadamard", lambda s, k: GaussianFamily(k))
    _nasty_values(c.store, rng)
    sq = square(c)
    path = tmp_path / "model.json"
    save_model(sq, path)
    again = load_model(path)
    assert isinstance(again, SquaredCircuit)
    x = rng.normal(size=(32, 4))
    a = evaluate(sq, x)
    b = evaluate(again, x)
    np.testing.assert_array_equal(a.log_magnitude, b.log_magnitude)
    np.testing.assert_array_equal(a.sign, b.sign)
    assert float(partition_function(sq).log_magnitude) == float(
        partition_function(again).log_magnitude
    )


def test_squared_flag_in_document(rng, tmp_path):
    c, _ = random_discrete_circuit(rng)
    doc = model_to_dict(square(c))
    assert doc["kind"] == "squared"
    assert doc["squared"] is True
    assert "source" in doc
    rebuilt = model_from_dict(doc)
    assert isinstance(rebuilt, SquaredCircuit)


def test_spline_and_categorical_families_round_trip(rng, tmp_path):
    rg = build_linear_tree(2, 1)
    basis = BSplineBasis.uniform(2, 8, (-1.0, 1.0))

    def factory(scope, k):
        return SplineFamily(k, basis, monotonic=True)

    c = from_region_graph(rg, 3, "hadamard", factory, sum_reparam="exp")
    _nasty_values(c.store, rng)
    path = tmp_path / "model.json"
    save_model(c, path)
    again = load_model(path)
    x = rng.uniform(-1.0, 1.0, size=(16, 2))
    np.testing.assert_array_equal(
        evaluate(c, x).log_magnitude, evaluate(again, x).log_magnitude
    )


def test_mixture_round_trip(rng, tmp_path):
    comps = []
    for seed in range(2):
        rg = build_linear_tree(3, seed)
        c = from_region_graph(rg, 2, "hadamard", lambda s, k: CategoricalFamily(k, 3))
        _nasty_values(c.store, rng)
        comps.append(square(c))
    mix = CircuitMixture.from_components(comps, weights=[0.25, 0.75], learnable=False)
    path = tmp_path / "model.json"
    save_model(mix, path)
    again = load_model(path)
    assert isinstance(again, CircuitMixture)
    x = rng.integers(0, 3, size=(20, 3)).astype(float)
    np.testing.assert_array_equal(mix.log_value(x), again.log_value(x))
    np.testing.assert_array_equal(mix.weights(), again.weights())


def test_document_is_utf8_json_with_version(rng, tmp_path):
    c, _ = random_discrete_circuit(rng)
    path = tmp_path / "model.json"
    save_model(c, path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert doc["format_version"] == 1
    assert doc["values"]["encoding"] == "base64-f64le"
    names = [b["name"] for b in doc["parameter_blocks"]]
    assert len(names) == len(set(names))
