"""Backward semi-Lagrangian dynamic programming for the value function.

One step of the scheme at an edge node ``x`` and time ``t_n`` reads

    u(x, t_n) = min_a  dt * l_i(x + a dt / 2, a, t_n + dt / 2) + u(x + a dt, t_{n+1})

over a uniform speed grid on ``[-V, V]``, with ``u(., t_{n+1})`` linearly
interpolated inside the edge.  Targets beyond an endpoint are not allowed;
instead each node may land exactly on an adjacent vertex.  A vertex either
waits (paying the vertex cost ``l_0``) or enters one of its edges with an
inward speed.  The scheme is monotone: raising the terminal data never
lowers ``u``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .costs import CostModel
from .errors import ConfigurationError, SolverError
from .geometry import NetPoint, NetworkGeometry
from .grid import SpaceTimeGrid

logger = logging.getLogger(__name__)

# Slope jumps (difference of one-sided difference quotients) above
# SMOOTH_FACTOR * spacing mark a node as non-smooth.
SMOOTH_FACTOR = 10.0


def default_control_bound(cost: CostModel, grid: SpaceTimeGrid, V_user: float | None = None,
                          safety: float = 4.0) -> float:
    """Speed bound from the coercivity estimate: any speed above it costs
    more than the whole available span of terminal and running costs."""
    ymax = max(grid.edge_extent(i) for i in range(cost.geometry.n_edges))
    b = cost.bounds(ymax, grid.T)
    budget = b["g_span"] + b["C0"] * grid.T + max(b["lambda_max"], 0.0)
    V = safety * (budget / b["C0"]) ** (1.0 / b["p"])
    return max(V, V_user or 0.0)


def control_grid(V: float, n_controls: int) -> np.ndarray:
    """Odd-sized uniform speed grid on ``[-V, V]`` (contains 0), ordered by
    increasing ``|a|`` so that ``argmin`` prefers the slowest speed."""
    if n_controls % 2 == 0:
        n_controls += 1
    a = np.linspace(-V, V, n_controls)
    a[n_controls // 2] = 0.0
    order = np.lexsort((a, np.abs(a)))
    return a[order]


@dataclass
class ValueField:
    """Value function on a :class:`SpaceTimeGrid`.

    ``u[n, j]`` is the value at global node ``j`` and time ``grid.times[n]``.
    """

    grid: SpaceTimeGrid
    cost: CostModel
    V: float
    controls: np.ndarray
    u: np.ndarray
    max_speed_used: float = 0.0

    @property
    def geometry(self) -> NetworkGeometry:
        return self.grid.geometry

    def edge_values(self, n: int, i: int) -> np.ndarray:
        return self.u[n, self.grid.node_index[i]]

    def value(self, p: NetPoint, t: float) -> float:
        """Bilinear interpolation of ``u`` at an arbitrary point and time."""
        g = self.geometry
        p = g.canonicalize(p)
        f = np.clip(t / self.grid.dt, 0, self.grid.n_steps)
        n = min(int(f), self.grid.n_steps - 1)
        w = f - n
        vals = []
        for m in (n, n + 1):
            if p.is_vertex:
                vals.append(self.u[m, p.vertex])
            else:
                vals.append(float(np.interp(p.s, self.grid.s[p.edge], self.edge_values(m, p.edge))))
        return float((1 - w) * vals[0] + w * vals[1])

    def node_value(self, p: NetPoint, n: int) -> float:
        p = self.grid.snap(p)
        if p.is_vertex:
            return float(self.u[n, p.vertex])
        k = int(np.argmin(np.abs(self.grid.s[p.edge] - p.s)))
        return float(self.edge_values(n, p.edge)[k])

    def slopes(self, n: int, i: int) -> np.ndarray:
        """Arc-coordinate derivative on edge ``i`` at slice ``n``: central
        differences inside, one-sided differences at the two ends."""
        return np.gradient(self.edge_values(n, i), self.grid.s[i])

    # -- one-step Bellman right-hand sides -------------------------------

    def edge_rhs(self, i: int, s: np.ndarray, n: int, tau: float, t: float, speeds: bool = False):
        """Bellman minimum at edge points ``s`` (not vertices) from time
        ``t`` to slice ``n + 1`` (``tau = t_{n+1} - t``)."""
        return edge_rhs(self.cost, self.grid, self.controls, self.V, i, s, tau, t,
                        self.edge_values(n + 1, i), speeds=speeds)

    def vertex_rhs(self, v: int, n: int, tau: float, t: float, speeds: bool = False):
        return vertex_rhs(self.cost, self.grid, self.controls, v, tau, t, self.u[n + 1], speeds=speeds)


def edge_rhs(cost, grid, controls, V, i, s, tau, t, U_next, speeds=False):
    """Vectorised one-step minimum over the control grid plus exact landing
    on the edge endpoints.  Returns values (and optionally argmin speeds)."""
    g = cost.geometry
    e = g.edges[i]
    xs = grid.s[i]
    ext = xs[-1]
    s = np.asarray(s, dtype=float)
    t_mid = t + 0.5 * tau
    target = s[:, None] + controls[None, :] * tau
    ok = (target >= 0.0) & (target <= ext)
    tgt = np.clip(target, 0.0, ext)
    run = cost.running(i, 0.5 * (s[:, None] + tgt), controls[None, :], t_mid)
    vals = tau * run + np.interp(tgt, xs, U_next)
    vals = np.where(ok, vals, np.inf)
    k = np.argmin(vals, axis=1)
    best = vals[np.arange(len(s)), k]
    spd = controls[k]
    ends = [(0.0, U_next[0])]
    if e.finite:
        ends.append((ext, U_next[-1]))
    for at, u_end in ends:
        a_land = (at - s) / tau
        feasible = np.abs(a_land) <= V
        land = tau * cost.running(i, 0.5 * (s + at), a_land, t_mid) + u_end
        land = np.where(feasible, land, np.inf)
        take = land < best
        best = np.where(take, land, best)
        spd = np.where(take, a_land, spd)
    if speeds:
        return best, spd
    return best


def vertex_rhs(cost, grid, controls, v, tau, t, U_next_all, speeds=False):
    """One-step minimum at vertex ``v``: wait, or enter an incident edge."""
    g = cost.geometry
    t_mid = t + 0.5 * tau
    best = tau * float(cost.vertex_running_cost(v, t_mid)) + U_next_all[v]
    best_speed, best_edge = 0.0, -1
    inward = controls[controls > 0]
    for i in g.incident_edges(v):
        sign = g.inward_sign(i, v)
        y0 = g.endpoint_arc(i, v)
        xs = grid.s[i]
        U_edge = U_next_all[grid.node_index[i]]
        a = sign * inward
        target = y0 + a * tau
        ok = (target >= 0.0) & (target <= xs[-1])
        tgt = np.clip(target, 0.0, xs[-1])
        run = cost.running(i, 0.5 * (y0 + tgt), a, t_mid)
        vals = np.where(ok, tau * run + np.interp(tgt, xs, U_edge), np.inf)
        k = int(np.argmin(vals))
        if vals[k] < best:
            best, best_speed, best_edge = float(vals[k]), float(a[k]), i
    if speeds:
        return best, best_speed, best_edge
    return best


def _check_cfl(grid: SpaceTimeGrid, V: float):
    reach = V * grid.dt
    g = grid.geometry
    finite = [e.length for e in g.edges if e.finite]
    limit = min(finite) if finite else math.inf
    if grid.truncation is not None:
        limit = min(limit, grid.truncation)
    if reach >= limit:
        raise ConfigurationError(
            f"one step can travel {reach:.4g}, not below the shortest edge / truncation {limit:.4g}; "
            "reduce dt or V")


def solve_value(geometry: NetworkGeometry, grid: SpaceTimeGrid, cost: CostModel,
                V: float | None = None, n_controls: int | None = None, threads: int = 1,
                auto_V: bool = True) -> ValueField:
    """Solve the value function backward from the terminal cost.

    ``V`` is raised to the coercivity estimate of :func:`default_control_bound`
    unless ``auto_V`` is False.  The speed grid has ``n_controls`` atoms
    (default 1025).  After the solve, any optimal speed on the
    boundary of the control grid raises :class:`SolverError`.
    """
    if grid.geometry is not geometry or cost.geometry is not geometry:
        raise ConfigurationError("grid, costs and geometry must describe the same network")
    if auto_V or V is None:
        V = default_control_bound(cost, grid, V)
    _check_cfl(grid, V)
    if n_controls is None:
        n_controls = 1025
    controls = control_grid(V, n_controls)
    M = grid.n_steps
    u = np.empty((M + 1, grid.n_nodes))
    for i in range(geometry.n_edges):
        u[M, grid.node_index[i]] = cost.terminal_edge_values(i, grid.s[i])
    for v in range(geometry.n_vertices):
        u[M, v] = cost.terminal_vertex_value(v)

    vmax = 0.0
    dt = grid.dt
    pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def edge_job(i, n):
        e = geometry.edges[i]
        inner = slice(1, -1) if e.finite else slice(1, None)
        s = grid.s[i][inner]
        vals, spd = edge_rhs(cost, grid, controls, V, i, s, dt, grid.times[n], u[n + 1, grid.node_index[i]],
                             speeds=True)
        return grid.node_index[i][inner], vals, spd

    try:
        for n in range(M - 1, -1, -1):
            t = grid.times[n]
            jobs = range(geometry.n_edges)
            results = pool.map(lambda i: edge_job(i, n), jobs) if pool else (edge_job(i, n) for i in jobs)
            for idx, vals, spd in results:
                u[n, idx] = vals
                if spd.size:
                    vmax = max(vmax, float(np.max(np.abs(spd))))
            for v in range(geometry.n_vertices):
                val, spd, _ = vertex_rhs(cost, grid, controls, v, dt, t, u[n + 1], speeds=True)
                u[n, v] = val
                vmax = max(vmax, abs(spd))
    finally:
        if pool:
            pool.shutdown()
    if vmax >= V * (1 - 1e-12):
        raise SolverError(f"optimal speeds reach the control bound V={V:.4g}; increase V")
    return ValueField(grid, cost, V, controls, u, vmax)


# -- residual checks ------------------------------------------------------


def dpp_residual(vf: ValueField, samples) -> float:
    """Max over samples of ``|u(x, t) - min one-step Bellman RHS(x, t)|``.

    ``samples`` is a sequence of ``(NetPoint, n, theta)``: the probe time is
    ``t_n + theta * dt`` with ``0 <= theta < 1`` and ``n < n_steps``.  At
    grid nodes with ``theta == 0`` the residual vanishes identically.
    """
    grid = vf.grid
    g = vf.geometry
    worst = 0.0
    for p, n, theta in samples:
        p = g.canonicalize(p)
        if not 0 <= n < grid.n_steps or not 0 <= theta < 1:
            raise ConfigurationError("probe time outside [0, T)")
        tau = (1.0 - theta) * grid.dt
        t = grid.times[n] + theta * grid.dt
        if p.is_vertex:
            rhs = vf.vertex_rhs(p.vertex, n, tau, t)
            here = (1 - theta) * vf.u[n, p.vertex] + theta * vf.u[n + 1, p.vertex]
        else:
            rhs = float(vf.edge_rhs(p.edge, np.array([p.s]), n, tau, t)[0])
            xs = grid.s[p.edge]
            here = ((1 - theta) * np.interp(p.s, xs, vf.edge_values(n, p.edge))
                    + theta * np.interp(p.s, xs, vf.edge_values(n + 1, p.edge)))
        worst = max(worst, abs(float(here) - rhs))
    return worst


def grid_dpp_residual(vf: ValueField) -> float:
    """DPP residual at every grid node and slice (exactly zero for a field
    produced by :func:`solve_value`)."""
    grid = vf.grid
    g = vf.geometry
    worst = 0.0
    for n in range(grid.n_steps):
        t = grid.times[n]
        for i, e in enumerate(g.edges):
            inner = slice(1, -1) if e.finite else slice(1, None)
            s = grid.s[i][inner]
            if s.size == 0:
                continue
            rhs = vf.edge_rhs(i, s, n, grid.dt, t)
            worst = max(worst, float(np.max(np.abs(vf.edge_values(n, i)[inner] - rhs))))
        for v in range(g.n_vertices):
            worst = max(worst, abs(float(vf.u[n, v]) - vf.vertex_rhs(v, n, grid.dt, t)))
    return worst


def random_probes(vf: ValueField, n_probes: int, rng: np.random.Generator):
    """Random off-grid probes ``(NetPoint, n, theta)`` inside the grid."""
    grid = vf.grid
    g = vf.geometry
    out = []
    for _ in range(n_probes):
        i = int(rng.integers(g.n_edges))
        s = float(rng.uniform(0.0, grid.edge_extent(i)))
        n = int(rng.integers(grid.n_steps))
        theta = float(rng.uniform(0.0, 1.0))
        out.append((NetPoint.on_edge(i, s), n, theta))
    return out


def _slope_jump(U, h):
    """|forward - backward difference quotient| at interior indices."""
    return np.abs((U[2:] - U[1:-1]) - (U[1:-1] - U[:-2])) / h


def viscosity_residual(vf: ValueField, he, t_min: float = 0.0) -> dict:
    """Residuals of the Hamilton-Jacobi system at nodes where ``u`` looks
    smooth.

    Interior equation at ``(x_k, t_{n+1/2})``: ``-(U_{n+1} - U_n)/dt +
    H_i(x_k, Du, t_{n+1/2})`` with ``Du`` the central difference averaged
    over the two slices.  A node is smooth when the spatial slope jump at
    both slices and the temporal slope jump at both slices are at most
    ``SMOOTH_FACTOR`` times the respective spacing; other nodes are counted
    as kinks and skipped.  At a vertex the inward slopes come from
    second-order one-sided differences and are used only where they agree
    with the first-order ones to the same threshold.
    """
    grid = vf.grid
    g = vf.geometry
    dt = grid.dt
    M = grid.n_steps
    interior_max, n_smooth, n_kink = 0.0, 0, 0
    vertex_max, n_vertex, n_vertex_skipped = 0.0, 0, 0
    slices = [n for n in range(1, M - 1) if grid.times[n] >= t_min - 1e-12]
    for i, e in enumerate(g.edges):
        h = grid.h[i]
        xs = grid.s[i]
        U = vf.u[:, grid.node_index[i]]
        for n in slices:
            tj_n = np.abs((U[n + 1] - U[n]) - (U[n] - U[n - 1])) / dt
            tj_n1 = np.abs((U[n + 2] - U[n + 1]) - (U[n + 1] - U[n])) / dt
            smooth = ((_slope_jump(U[n], h) <= SMOOTH_FACTOR * h)
                      & (_slope_jump(U[n + 1], h) <= SMOOTH_FACTOR * h)
                      & (tj_n[1:-1] <= SMOOTH_FACTOR * dt) & (tj_n1[1:-1] <= SMOOTH_FACTOR * dt))
            Du = 0.5 * ((U[n][2:] - U[n][:-2]) + (U[n + 1][2:] - U[n + 1][:-2])) / (2 * h)
            dudt = (U[n + 1][1:-1] - U[n][1:-1]) / dt
            t_half = grid.times[n] + 0.5 * dt
            res = np.abs(-dudt + he.h_edge(i, xs[1:-1], Du, t_half))
            n_smooth += int(smooth.sum())
            n_kink += int((~smooth).sum())
            if smooth.any():
                interior_max = max(interior_max, float(res[smooth].max()))
    for v in range(g.n_vertices):
        edges = g.incident_edges(v)
        for n in slices:
            ps, stable = [], True
            for i in edges:
                idx = grid.node_index[i]
                if g.inward_sign(i, v) < 0:
                    idx = idx[::-1]
                h = grid.h[i]
                p_slices = []
                for m in (n, n + 1):
                    U0, U1, U2 = vf.u[m, idx[0]], vf.u[m, idx[1]], vf.u[m, idx[2]]
                    p1 = (U1 - U0) / h
                    p2 = (-3 * U0 + 4 * U1 - U2) / (2 * h)
                    stable &= abs(p1 - p2) <= SMOOTH_FACTOR * h
                    p_slices.append(p2)
                ps.append(0.5 * sum(p_slices))
            Uv = vf.u[:, v]
            for m in (n, n + 1):
                stable &= abs((Uv[m + 1] - Uv[m]) - (Uv[m] - Uv[m - 1])) / dt <= SMOOTH_FACTOR * dt
            if not stable:
                n_vertex_skipped += 1
                continue
            t_half = grid.times[n] + 0.5 * dt
            res = abs(-(Uv[n + 1] - Uv[n]) / dt + he.h_vertex(v, ps, t_half))
            vertex_max = max(vertex_max, res)
            n_vertex += 1
    return {"interior_max": interior_max, "n_smooth": n_smooth, "n_kink": n_kink,
            "vertex_max": vertex_max, "n_vertex": n_vertex, "n_vertex_skipped": n_vertex_skipped}


def value_bounds_check(vf: ValueField) -> dict:
    """Lower bound ``-C0 (T - t) + min g`` and the discrete stay-put upper
    bound, both compared exactly."""
    grid = vf.grid
    g = vf.geometry
    cost = vf.cost
    b = cost.bounds(max(grid.edge_extent(i) for i in range(g.n_edges)), grid.T)
    gmin = min(float(vf.u[-1].min()), b["g_min"])
    C0 = b["C0"]
    lower_ok = True
    for n in range(grid.n_steps + 1):
        lower = -C0 * (grid.T - grid.times[n]) + gmin
        lower_ok &= bool(np.all(vf.u[n] >= lower - 1e-12 * max(1.0, abs(lower))))
    upper = vf.u[-1].copy()
    upper_ok = True
    t_mid = grid.times[:-1] + 0.5 * grid.dt
    for n in range(grid.n_steps - 1, -1, -1):
        rate = np.empty(grid.n_nodes)
        for i in range(g.n_edges):
            rate[grid.node_index[i]] = cost.running(i, grid.s[i], 0.0, t_mid[n])
        for v in range(g.n_vertices):
            rate[v] = cost.vertex_running_cost(v, t_mid[n])
        upper = grid.dt * rate + upper
        upper_ok &= bool(np.all(vf.u[n] <= upper))
    return {"lower_ok": lower_ok, "upper_ok": upper_ok}
