"""Micro-benchmarks: step timing per kernel backend, partition-function
amortization counts, and the log-space vs linear-space overflow sweep.

Writes one flat CSV; rows belong to a ``section`` and leave unrelated
columns empty.  The overflow sweep records the smallest variable count at
which the linear-space float64 partition function stops being finite
while the signed log-space value stays finite.
"""

from __future__ import annotations

import time
import tracemalloc

import numpy as np

from pcsq import engine, inference, kernels
from pcsq.circuits import from_region_graph
from pcsq.families import GaussianFamily
from pcsq.learning import TrainConfig, _Adam, _accumulate_gradients, init_parameters
from pcsq.regions import build_binary_tree
from pcsq.squaring import square

_COLUMNS = [
    "section",
    "backend",
    "k",
    "batch_size",
    "steps",
    "z_evals_per_step",
    "seconds_per_step",
    "z_seconds",
    "peak_mb",
    "variables",
    "log_z_logspace",
    "linear_z_finite",
    "crossover_variables",
]


def _gaussian_squared_model(variables, k, seed, init="uniform(0,1)"):
    rg = build_binary_tree(variables, seed=seed)
    circuit = from_region_graph(rg, k, "hadamard", lambda scope, units: GaussianFamily(units))
    model = square(circuit)
    init_parameters(model, init, seed)
    return model


def _timed_steps(model, batch, steps, seed):
    rng = np.random.default_rng(seed)
    d = model.variable_count
    x = rng.normal(size=(batch, d))
    opt = _Adam([model.store], TrainConfig(batch_size=batch))
    # one warm-up step outside the clock (kernel JIT, caches)
    model.store.zero_grad()
    _accumulate_gradients(model, x)
    opt.step()
    z_before = inference.z_eval_count(model)
    tracemalloc.start()
    t0 = time.perf_counter()
    t_z = 0.0
    for _ in range(steps):
        model.store.zero_grad()
        tz = time.perf_counter()
        _, zres = inference.partition_function(model, want_tape=True)
        engine.backward(zres.tape, engine.log_grad_seed(zres.root, np.array([-1.0])))
        t_z += time.perf_counter() - tz
        res = engine.forward(model.source, x, want_tape=True)
        engine.backward(res.tape, engine.log_grad_seed(res.root, np.full(batch, 2.0 / batch)))
        opt.step()
    elapsed = time.perf_counter() - t0
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    z_per_step = (inference.z_eval_count(model) - z_before) / steps
    return elapsed / steps, t_z / steps, peak / 1e6, z_per_step


def run_benchmarks(
    k_values=(32, 64, 128),
    batch_sizes=(64, 256, 1024),
    variables=8,
    steps=3,
    backends=("numba", "numpy"),
    overflow_variables=(16, 32, 64, 128),
    overflow_k=64,
    overflow_init="uniform(0,4)",
    seed=0,
):
    rows = []
    previous = kernels.backend_name()
    try:
        for backend in backends:
            if backend not in kernels.available_backends():
                continue
            kernels.set_backend(backend)
            for k in k_values:
                for batch in batch_sizes:
                    model = _gaussian_squared_model(variables, k, seed)
                    sec, z_sec, peak_mb, z_per_step = _timed_steps(model, batch, steps, seed)
                    rows.append(
                        {
                            "section": "step_timing",
                            "backend": backend,
                            "k": k,
                            "batch_size": batch,
                            "steps": steps,
                            "z_evals_per_step": z_per_step,
                            "seconds_per_step": sec,
                            "z_seconds": z_sec,
                            "peak_mb": peak_mb,
                            "variables": variables,
                        }
                    )
    finally:
        kernels.set_backend(previous)
    crossover = None
    for v in overflow_variables:
        model = _gaussian_squared_model(v, overflow_k, seed, init=overflow_init)
        log_z = float(inference.partition_function(model).log_magnitude)
        linear = engine.forward(
            model.circuit, None, marginalized=frozenset(range(v)), space="linear"
        ).root
        finite = bool(np.isfinite(linear).all())
        if not finite and crossover is None:
            crossover = v
        rows.append(
            {
                "section": "overflow",
                "variables": v,
                "log_z_logspace": log_z,
                "linear_z_finite": finite,
            }
        )
    rows.append(
        {
            "section": "overflow_summary",
            "crossover_variables": "none" if crossover is None else crossover,
        }
    )
    return rows


def write_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(str(row.get(col, "")) for col in _COLUMNS) + "\n")
