"""Queries on circuits and squared circuits.

Forward evaluation, partition function (cached per parameter version and
counted, so training can prove it runs once per step), arbitrary-subset
marginalization, normalized log-density, mean log-likelihood, and exact
autoregressive sampling by inverse-transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pcsq import engine
from pcsq.circuits import TensorizedCircuit
from pcsq.errors import ConfigError, DegenerateModelError, NumericError
from pcsq.slog import SignedLogTensor
from pcsq.squaring import SquaredCircuit


@dataclass
class Query:
    evidence: dict = field(default_factory=dict)
    marginalized: set = field(default_factory=set)
    require_normalized: bool = False

    def check(self, variable_count):
        ev = set(self.evidence)
        marg = set(self.marginalized)
        if ev & marg:
            raise ConfigError(f"evidence and marginalized overlap: {sorted(ev & marg)}")
        allvars = set(range(variable_count))
        if not (ev | marg) <= allvars:
            raise ConfigError("query names variables outside the model")
        return ev, marg


def _graph(model):
    """The engine-facing TensorizedCircuit of a model."""
    if isinstance(model, SquaredCircuit):
        return model.circuit
    if isinstance(model, TensorizedCircuit):
        return model
    raise ConfigError(f"unsupported model type {type(model).__name__}")


def evaluate(model, x) -> SignedLogTensor:
    """log|value| and sign per batch row for a full assignment."""
    return engine.forward(_graph(model), np.atleast_2d(x)).root


def squared_log_value(model: SquaredCircuit, x) -> SignedLogTensor:
    """log c^2(x) computed the cheap way, as 2 log|c(x)| on the source."""
    root = engine.forward(model.source, np.atleast_2d(x)).root
    return SignedLogTensor(2.0 * root.log_magnitude, root.sign * root.sign)


def _scalar(slog: SignedLogTensor) -> SignedLogTensor:
    return SignedLogTensor(slog.log_magnitude.reshape(()), slog.sign.reshape(()))


def z_eval_count(model) -> int:
    """Number of partition-function computations performed on this model."""
    return getattr(model, "_z_evals", 0)


def partition_function(model, want_tape=False):
    """log Z of the model, computed by one feed-forward pass with integral
    vectors (plain circuits) or integral matrices (squared circuits)
    substituted at every input layer.

    Cached per parameter version; each fresh computation increments the
    model's evaluation counter.  Raises DegenerateModelError when Z is not
    strictly positive and NumericError when it is not finite.
    """
    graph = _graph(model)
    store = graph.store
    cache = getattr(model, "_partition_cache", None)
    if not want_tape and cache is not None and cache[0] == store.version:
        return cache[1]
    result = engine.forward(
        graph,
        None,
        marginalized=frozenset(range(graph.variable_count)),
        want_tape=want_tape,
    )
    model._z_evals = getattr(model, "_z_evals", 0) + 1
    z = _scalar(result.root)
    if float(z.sign) <= 0.0:
        raise DegenerateModelError(
            "partition function is zero or negative; the model cannot be normalized"
        )
    if not np.isfinite(z.log_magnitude):
        raise NumericError("partition function is not finite")
    model._partition_cache = (store.version, z)
    if want_tape:
        return z, result
    return z


def marginalize(model, query: Query) -> SignedLogTensor:
    """Integrate the marginalized variables out at the given evidence.

    Evidence plus marginalized variables must cover the full scope; the
    result is a scalar signed log-value, normalized by Z on request.
    """
    graph = _graph(model)
    ev, marg = query.check(graph.variable_count)
    if ev | marg != set(range(graph.variable_count)):
        missing = set(range(graph.variable_count)) - ev - marg
        raise ConfigError(f"query leaves variables {sorted(missing)} unconstrained")
    x = np.zeros((1, graph.variable_count))
    for v, value in query.evidence.items():
        x[0, v] = value
    out = _scalar(engine.forward(graph, x, marginalized=marg).root)
    if query.require_normalized:
        z = partition_function(model)
        out = SignedLogTensor(out.log_magnitude - z.log_magnitude, out.sign * z.sign)
    return out


def marginal_batch(model, x, marginalized) -> SignedLogTensor:
    """Vectorized marginalization over a batch of evidence rows."""
    graph = _graph(model)
    return engine.forward(graph, x, marginalized=frozenset(marginalized)).root


def log_density(model, x) -> np.ndarray:
    """Normalized log-density per row: log model(x) - log Z."""
    z = partition_function(model)
    if isinstance(model, SquaredCircuit):
        val = squared_log_value(model, x)
        if np.any(val.sign == 0.0):
            row = int(np.argmax(val.sign == 0.0))
            raise NumericError(f"c(x) = 0 exactly at row {row}; log-density undefined")
    else:
        val = evaluate(model, x)
        if np.any(val.sign <= 0.0):
            row = int(np.argmax(val.sign <= 0.0))
            raise NumericError(f"model value not positive at row {row}")
    return val.log_magnitude - float(z.log_magnitude)


def log_likelihood(model, x) -> float:
    """Mean normalized log-likelihood over the rows of ``x``."""
    return float(np.mean(log_density(model, np.atleast_2d(x))))


# ---------------------------------------------------------------------------
# exact sampling


def _model_states(model):
    graph = model.source if isinstance(model, SquaredCircuit) else model
    return graph.states_per_variable()


def _family_for_variable(model, v):
    graph = model.source if isinstance(model, SquaredCircuit) else model
    for layer in graph.input_layers():
        if v in layer.scope:
            return layer.family
    raise ConfigError(f"no input layer covers variable {v}")


def sample(model, n, seed=0):
    """Draw ``n`` exact samples autoregressively (natural variable order).

    Discrete variables enumerate their conditional PMF exactly; continuous
    variables invert the conditional CDF by bisection over an adaptively
    refined quadrature of the 1-d conditional density, to a CDF tolerance
    of 1e-9 per step.
    """
    graph = _graph(model)
    d = graph.variable_count
    partition_function(model)  # fail fast on degenerate models
    rng = np.random.default_rng(seed)
    states = _model_states(model)
    out = np.zeros((n, d))
    for v in range(d):
        rest = frozenset(range(v + 1, d))
        if states[v] is not None:
            _sample_discrete_column(model, out, v, states[v], rest, rng)
        else:
            _sample_continuous_column(model, out, v, rest, rng)
    return out


def _sample_discrete_column(model, out, v, m, rest, rng):
    n = out.shape[0]
    memo = {}
    draws = rng.random(n)
    for i in range(n):
        key = tuple(out[i, :v])
        pmf = memo.get(key)
        if pmf is None:
            x = np.tile(out[i], (m, 1))
            x[:, v] = np.arange(m)
            vals = marginal_batch(model, x, rest)
            if np.any(vals.sign < 0.0):
                raise NumericError(f"negative conditional mass at variable {v}")
            shift = np.max(vals.log_magnitude)
            if not np.isfinite(shift):
                raise NumericError(f"conditional PMF at variable {v} is identically zero")
            w = np.where(vals.sign > 0.0, np.exp(vals.log_magnitude - shift), 0.0)
            pmf = np.cumsum(w / w.sum())
            memo[key] = pmf
        out[i, v] = int(np.searchsorted(pmf, draws[i], side="right"))


def _sample_continuous_column(model, out, v, rest, rng, chunk=256, cdf_tol=1e-9):
    lo, hi = _family_for_variable(model, v).sample_bracket(_graph(model).store)
    n = out.shape[0]
    for start in range(0, n, chunk):
        rows = out[start : start + chunk]
        b = rows.shape[0]

        def density(ts, row_idx):
            # ts: flat points, row_idx: matching sample row per point
            x = rows[row_idx].copy()
            x[:, v] = ts
            vals = marginal_batch(model, x, rest)
            lin = np.where(vals.sign > 0.0, np.exp(vals.log_magnitude), 0.0)
            if np.any(vals.sign < 0.0):
                # squared models are non-negative up to rounding; clamp dust
                neg = vals.sign < 0.0
                if np.any(vals.log_magnitude[neg] > np.max(vals.log_magnitude) - 25):
                    raise NumericError(f"negative conditional density at variable {v}")
            return lin

        panels = _refine_panels(density, lo, hi, b)
        totals = np.array([p.total() for p in panels])
        if np.any(~np.isfinite(totals)) or np.any(totals <= 0.0):
            raise NumericError(f"non-finite conditional mass at variable {v}")
        targets = rng.random(b) * totals
        rows[:, v] = _invert_cdf(density, panels, targets, totals, cdf_tol)
        out[start : start + chunk] = rows


class _PanelSet:
    """Adaptively refined quadrature panels of one 1-d density."""

    __slots__ = ("edges", "integrals")

    def __init__(self, edges, integrals):
        self.edges = edges
        self.integrals = integrals

    def total(self):
        return float(np.sum(self.integrals))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _gl_points(a, b):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * _GL_NODES, half * _GL_WEIGHTS


def _refine_panels(density, lo, hi, b, max_rounds=24, rel_tol=1e-11):
    """Per-sample panel subdivision until each panel's 16-point quadrature
    is stable under splitting."""
    init_edges = np.linspace(lo, hi, 9)
    pending = [[(init_edges[i], init_edges[i + 1]) for i in range(8)] for _ in range(b)]
    # evaluate initial panels
    values = [dict() for _ in range(b)]  # (a, b) -> integral
    done = [[] for _ in range(b)]

    def batch_eval(requests):
        # requests: list of (sample, a, b); returns integrals in order
        if not requests:
            return []
        ts, idx, spans = [], [], []
        for s, a, bb in requests:
            pts, wts = _gl_points(a, bb)
            ts.append(pts)
            idx.append(np.full(16, s))
            spans.append(wts)
        vals = density(np.concatenate(ts), np.concatenate(idx))
        vals = vals.reshape(len(requests), 16)
        return [float(v @ w) for v, w in zip(vals, spans)]

    requests = [(s, a, bb) for s in range(b) for (a, bb) in pending[s]]
    ints = batch_eval(requests)
    for (s, a, bb), val in zip(requests, ints):
        values[s][(a, bb)] = val

    for _ in range(max_rounds):
        requests = []
        for s in range(b):
            for (a, bb) in pending[s]:
                m = 0.5 * (a + bb)
                requests.append((s, a, m))
                requests.append((s, m, bb))
        if not requests:
            break
        ints = batch_eval(requests)
        for (s, a, bb), val in zip(requests, ints):
            values[s][(a, bb)] = val
        nxt = [[] for _ in range(b)]
        for s in range(b):
            scale = max(sum(abs(v) for v in values[s].values()), 1e-300)
            for (a, bb) in pending[s]:
                m = 0.5 * (a + bb)
                whole = values[s][(a, bb)]
                split = values[s][(a, m)] + values[s][(m, bb)]
                if abs(whole - split) <= rel_tol * scale or (bb - a) < 1e-13 * (hi - lo):
                    done[s].append((a, m, values[s][(a, m)]))
                    done[s].append((m, bb, values[s][(m, bb)]))
                else:
                    nxt[s].append((a, m))
                    nxt[s].append((m, bb))
        pending = nxt
        if not any(pending):
            break
    for s in range(b):
        for (a, bb) in pending[s]:
            done[s].append((a, bb, values[s][(a, bb)]))
        done[s].sort()
    out = []
    for s in range(b):
        edges = np.array([a for (a, _, _) in done[s]] + [done[s][-1][1]])
        out.append(_PanelSet(edges, np.array([v for (_, _, v) in done[s]])))
    return out


def _invert_cdf(density, panels, targets, totals, cdf_tol, max_iter=80):
    b = len(panels)
    lo = np.empty(b)
    hi = np.empty(b)
    base = np.empty(b)
    for s, p in enumerate(panels):
        cum = np.concatenate([[0.0], np.cumsum(p.integrals)])
        j = int(np.searchsorted(cum, targets[s], side="right") - 1)
        j = min(max(j, 0), len(p.integrals) - 1)
        lo[s], hi[s] = p.edges[j], p.edges[j + 1]
        base[s] = cum[j]
    left = lo.copy()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        # partial integral from panel start to mid, per sample, in one batch
        ts, idx, wts = [], [], []
        for s in range(b):
            pts, w = _gl_points(left[s], mid[s])
            ts.append(pts)
            idx.append(np.full(16, s))
            wts.append(w)
        vals = density(np.concatenate(ts), np.concatenate(idx)).reshape(b, 16)
        partial = np.einsum("bi,bi->b", vals, np.stack(wts))
        cdf = base + partial
        err = cdf - targets
        done = np.abs(err) <= cdf_tol * np.maximum(totals, 1e-300)
        if done.all() or np.max(hi - lo) < 1e-14 * np.max(np.abs(hi) + np.abs(lo) + 1.0):
            return mid
        hi = np.where(err > 0, mid, hi)
        lo = np.where(err > 0, lo, mid)
    return 0.5 * (lo + hi)
