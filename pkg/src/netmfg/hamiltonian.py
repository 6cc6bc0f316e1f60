"""Numerical Legendre transforms of the running costs.

For an edge cost ``l_i`` the Hamiltonians are

    H_i(x, p, t)      = sup_{zeta}      { -p zeta - l_i(x, zeta, t) }
    H_i_down(x, p, t) = sup_{zeta >= 0} { -p zeta - l_i(x, zeta, t) }

and at a vertex ``H_0(p, t) = max(-l_0(t), max_i H_i_down(vertex, p_i, t))``,
where ``zeta >= 0`` means "pointing into the edge".  Suprema are taken over
a uniform control grid and polished by golden-section search; strict
convexity of the costs in the speed makes the inner problem unimodal.
"""

from __future__ import annotations

import numpy as np

from .costs import CostModel
from .errors import DomainError

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def golden_max(f, lo, hi, tol: float = 1e-10, max_iter: int = 200):
    """Vectorised golden-section search for the maximum of unimodal ``f``
    on ``[lo, hi]``; returns ``(argmax, max)``."""
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if np.all(hi - lo <= tol):
            break
        left = fc >= fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        # The surviving interior point is reused; one new evaluation per step.
        fresh = np.where(left, hi - _INVPHI * (hi - lo), lo + _INVPHI * (hi - lo))
        f_fresh = f(fresh)
        c, d = np.where(left, fresh, d), np.where(left, c, fresh)
        fc, fd = np.where(left, f_fresh, fd), np.where(left, fc, f_fresh)
    x = 0.5 * (lo + hi)
    return x, f(x)


class HamiltonianEval:
    """Evaluates ``H_i``, ``H_i_down``, ``H_0`` and ``d_p H_i`` for a cost model.

    Parameters
    ----------
    cost : CostModel
    A_max : float
        Half-width of the speed search interval.
    n_grid : int
        Number of grid atoms on ``[-A_max, A_max]``.
    closed_form : bool or None
        Use the power-family formulas when available (default: whenever
        every edge cost declares them).
    """

    def __init__(self, cost: CostModel, A_max: float, n_grid: int = 2 ** 9,
                 closed_form: bool | None = None, tol: float = 1e-10):
        if not A_max > 0:
            raise DomainError("A_max must be positive")
        self.cost = cost
        self.A_max = float(A_max)
        self.n_grid = int(n_grid)
        self.tol = tol
        self.closed_form = cost.closed_form if closed_form is None else bool(closed_form)
        if self.closed_form and not cost.closed_form:
            raise DomainError("closed forms are only available for the power family")

    def _sup(self, i, x, pbar, t, lo, hi):
        """Grid search plus golden polish; returns (value, maximiser)."""
        c = self.cost.edge_costs[i]
        x, pbar, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(pbar, float),
                                         np.asarray(t, float))
        shape = x.shape
        x, pbar, t = x.ravel(), pbar.ravel(), t.ravel()
        zs = np.linspace(lo, hi, self.n_grid)
        step = zs[1] - zs[0]
        obj = -pbar[:, None] * zs[None, :] - c(x[:, None], zs[None, :], t[:, None])
        k = np.argmax(obj, axis=1)
        z0 = zs[k]
        a = np.maximum(z0 - step, lo)
        b = np.minimum(z0 + step, hi)
        f = lambda z: -pbar * z - c(x, z, t)
        z, val = golden_max(f, a, b, tol=self.tol)
        # Endpoints of the feasible interval can be the exact maximiser.
        for edge_z in (lo, hi, 0.0):
            if lo <= edge_z <= hi:
                fz = f(np.full_like(z, edge_z))
                better = (fz > val) | ((fz >= val - 1e-15) & (abs(edge_z) < np.abs(z)))
                z = np.where(better, edge_z, z)
                val = np.where(better, fz, val)
        return val.reshape(shape), z.reshape(shape)

    def _closed(self, i, x, pbar, t, one_sided=False, sign=1):
        return self.cost.edge_costs[i].legendre(x, pbar, t, one_sided=one_sided, sign=sign)

    def h_edge(self, i: int, x, pbar, t):
        if self.closed_form:
            return self._closed(i, x, pbar, t)[0]
        return self._sup(i, x, pbar, t, -self.A_max, self.A_max)[0]

    def h_edge_grid(self, i: int, x, pbar, t):
        """Always the numerical route (used to cross-check closed forms)."""
        return self._sup(i, x, pbar, t, -self.A_max, self.A_max)[0]

    def h_edge_oneside(self, i: int, pbar, t, sign: int = 1, x=None):
        """``H_i_down``; ``sign=-1`` when the edge is entered towards
        decreasing arc coordinate.  ``x`` defaults to the edge tail."""
        if x is None:
            x = 0.0 if sign > 0 else self.cost.geometry.edges[i].length
        if self.closed_form:
            return self._closed(i, x, pbar, t, one_sided=True, sign=sign)[0]
        lo, hi = (0.0, self.A_max) if sign > 0 else (-self.A_max, 0.0)
        return self._sup(i, x, pbar, t, lo, hi)[0]

    def h_vertex(self, v: int, p, t) -> float:
        """``H_0`` at vertex ``v``; ``p`` holds one inward slope per incident
        edge, in the order of ``geometry.incident_edges(v)``."""
        g = self.cost.geometry
        edges = g.incident_edges(v)
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.shape != (len(edges),):
            raise DomainError(f"vertex {v} has {len(edges)} incident edges, got {p.size} slopes")
        best = -float(self.cost.vertex_running_cost(v, t))
        for pi, i in zip(p, edges):
            sign = g.inward_sign(i, v)
            y0 = g.endpoint_arc(i, v)
            # Inward slope pi corresponds to arc slope sign * pi.
            best = max(best, float(self.h_edge_oneside(i, sign * pi, t, sign=sign, x=y0)))
        return best

    def maximiser(self, i: int, x, pbar, t):
        if self.closed_form:
            return self._closed(i, x, pbar, t)[1]
        return self._sup(i, x, pbar, t, -self.A_max, self.A_max)[1]

    def dp_h_edge(self, i: int, x, pbar, t):
        """``d_p H_i = -zeta*`` so that the optimal speed is ``-d_p H_i``."""
        return -self.maximiser(i, x, pbar, t)

    def radius_is_stationary(self, i: int, pbar, x=0.0, t=0.0, tol: float = 1e-12) -> bool:
        """True if doubling ``A_max`` leaves the numerical ``H_i`` unchanged."""
        wide = HamiltonianEval(self.cost, 2 * self.A_max, self.n_grid, closed_form=False, tol=self.tol)
        h1 = self.h_edge_grid(i, x, pbar, t)
        h2 = wide.h_edge_grid(i, x, pbar, t)
        return bool(np.max(np.abs(h1 - h2)) < tol)


def h_edge(he: HamiltonianEval, i, x, pbar, t):
    return he.h_edge(i, x, pbar, t)


def h_edge_oneside(he: HamiltonianEval, i, pbar, t, sign: int = 1):
    return he.h_edge_oneside(i, pbar, t, sign=sign)


def h_vertex(he: HamiltonianEval, v, p, t):
    return he.h_vertex(v, p, t)


def dp_h_edge(he: HamiltonianEval, i, x, pbar, t):
    return he.dp_h_edge(i, x, pbar, t)
