"""Clamped B-spline bases: evaluation and exact product integrals.

A basis of order k over n interior knots in (a, b) uses the clamped knot
vector [a]*(k+1) + interior + [b]*(k+1) and spans n + k + 1 basis
functions.  Basis values come from the Cox-de Boor recursion; products of
two basis pieces are polynomials of degree <= 2k, so per-span
Gauss-Legendre with k+1 points integrates them exactly.
"""

from __future__ import annotations

import numpy as np

from pcsq.errors import ConfigError, DomainError


class BSplineBasis:
    def __init__(self, order, interior_knots, bounds):
        a, b = float(bounds[0]), float(bounds[1])
        if not a < b:
            raise ConfigError(f"spline bounds must satisfy a < b, got ({a}, {b})")
        interior = np.asarray(interior_knots, dtype=np.float64)
        if interior.ndim != 1:
            raise ConfigError("interior knots must be a 1-d sequence")
        if interior.size and not (np.all(np.diff(interior) > 0)):
            raise ConfigError("interior knots must be strictly increasing")
        if interior.size and (interior[0] <= a or interior[-1] >= b):
            raise ConfigError("interior knots must lie strictly inside (a, b)")
        self.order = int(order)
        if self.order < 0:
            raise ConfigError("spline order must be >= 0")
        self.bounds = (a, b)
        self.interior = interior
        k = self.order
        self.knots = np.concatenate([np.full(k + 1, a), interior, np.full(k + 1, b)])
        self.num_bases = interior.size + k + 1

    @classmethod
    def uniform(cls, order, num_knots, bounds):
        """Basis over ``num_knots`` uniformly placed interior knots."""
        a, b = bounds
        interior = np.linspace(a, b, num_knots + 2)[1:-1]
        return cls(order, interior, bounds)

    def check_domain(self, x):
        x = np.asarray(x, dtype=np.float64)
        bad = (x < self.bounds[0]) | (x > self.bounds[1])
        if bad.any():
            idx = int(np.argmax(bad))
            raise DomainError(
                f"value {x.reshape(-1)[np.argmax(bad.reshape(-1))]!r} outside spline "
                f"interval [{self.bounds[0]}, {self.bounds[1]}] (first bad index {idx})"
            )
        return x

    def design_matrix(self, x):
        """Evaluate all basis functions at ``x``: returns (len(x), num_bases).

        Points must lie inside [a, b]; the right endpoint is attached to the
        final span so the closed interval is covered.
        """
        x = self.check_domain(np.atleast_1d(x))
        t = self.knots
        k = self.order
        m = x.shape[0]
        n_cols = len(t) - 1
        # order-0: half-open spans [t_j, t_{j+1}), except x == b joins the last
        # non-degenerate span
        basis = np.zeros((m, n_cols))
        for j in range(n_cols):
            if t[j] < t[j + 1]:
                basis[:, j] = (t[j] <= x) & (x < t[j + 1])
        last = np.nonzero(np.diff(t) > 0)[0][-1]
        basis[x == self.bounds[1], last] = 1.0
        for d in range(1, k + 1):
            nxt = np.zeros((m, n_cols - d))
            for j in range(n_cols - d):
                left = 0.0
                if t[j + d] > t[j]:
                    left = (x - t[j]) / (t[j + d] - t[j]) * basis[:, j]
                right = 0.0
                if t[j + d + 1] > t[j + 1]:
                    right = (t[j + d + 1] - x) / (t[j + d + 1] - t[j + 1]) * basis[:, j + 1]
                nxt[:, j] = left + right
            basis = nxt
        return basis

    def _quad_nodes(self):
        """Gauss-Legendre nodes/weights on every non-degenerate knot span."""
        pts, wts = np.polynomial.legendre.leggauss(self.order + 1)
        edges = np.unique(self.knots)
        lo, hi = edges[:-1], edges[1:]
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        nodes = (mid[:, None] + half[:, None] * pts[None, :]).reshape(-1)
        weights = (half[:, None] * wts[None, :]).reshape(-1)
        return nodes, weights

    def basis_integrals(self):
        """Integral of each basis function over [a, b]."""
        nodes, weights = self._quad_nodes()
        design = self.design_matrix(nodes)
        return weights @ design

    def gram_matrix(self):
        """Exact pairwise product integrals: G[a, b] = integral of B_a * B_b."""
        nodes, weights = self._quad_nodes()
        design = self.design_matrix(nodes)
        return (design * weights[:, None]).T @ design

    def to_dict(self):
        return {
            "order": self.order,
            "interior_knots": self.interior.tolist(),
            "bounds": [self.bounds[0], self.bounds[1]],
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["order"], doc["interior_knots"], doc["bounds"])
