"""Time-gridded trajectories, optimal synthesis and optimality checks.

A :class:`Trajectory` stores one network point per time slice from its start
slice to ``T``.  Between slices it moves along a single edge at constant
speed, or waits at a vertex.  Synthesis re-solves the one-step Bellman
problem at the current (generally off-grid) point against a C^1 cubic
interpolant of the next value slice, so the recovered speeds vary smoothly
along interior arcs.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .costs import CostModel
from .errors import ConfigurationError, DomainError, SolverError
from .geometry import VERTEX_SNAP, NetPoint, NetworkGeometry
from .hamiltonian import golden_max

logger = logging.getLogger(__name__)

# Candidates within this much of the best one-step value count as ties.
TIE_TOL = 1e-10


@dataclass
class Trajectory:
    """Points ``points[k]`` at times ``t_{start + k}``, ``k = 0..n``."""

    start_index: int
    dt: float
    points: list
    ties: int = 0

    def __post_init__(self):
        if len(self.points) < 1:
            raise DomainError("a trajectory needs at least one point")

    @property
    def n_steps(self) -> int:
        return len(self.points) - 1

    @property
    def times(self) -> np.ndarray:
        return (self.start_index + np.arange(len(self.points))) * self.dt

    def _step(self, g: NetworkGeometry, k: int):
        """(edge or -1 for waiting, arc at start, arc at end, vertex)."""
        a, b = self.points[k], self.points[k + 1]
        if a.is_vertex and b.is_vertex:
            if a.vertex == b.vertex:
                return -1, 0.0, 0.0, a.vertex
            for i in g.incident_edges(a.vertex):
                if b.vertex in g.endpoints(i):
                    return i, g.endpoint_arc(i, a.vertex), g.endpoint_arc(i, b.vertex), None
            raise DomainError(f"step {k} jumps between non-adjacent vertices")
        if a.is_vertex or b.is_vertex:
            v, q = (a, b) if a.is_vertex else (b, a)
            if v.vertex not in g.endpoints(q.edge):
                raise DomainError(f"step {k} leaves the edge containing the trajectory")
            y_v = g.endpoint_arc(q.edge, v.vertex)
            if a.is_vertex:
                return q.edge, y_v, q.s, None
            return q.edge, q.s, y_v, None
        if a.edge != b.edge:
            raise DomainError(f"step {k} switches edges without passing a vertex")
        return a.edge, a.s, b.s, None

    def steps(self, g: NetworkGeometry):
        return [self._step(g, k) for k in range(self.n_steps)]

    def speeds(self, g: NetworkGeometry) -> np.ndarray:
        """Arc-coordinate speed of each step (0 while waiting)."""
        return np.array([(y1 - y0) / self.dt for _, y0, y1, _ in self.steps(g)])

    def labels(self, g: NetworkGeometry) -> list[int]:
        """Edge occupied during each step, ``-1`` while waiting at a vertex."""
        return [i for i, *_ in self.steps(g)]

    def check_admissible(self, g: NetworkGeometry, V: float | None = None) -> None:
        for p in self.points:
            g.check_point(p)
        sp = self.speeds(g)
        if V is not None and sp.size and np.max(np.abs(sp)) > V * (1 + 1e-12):
            raise DomainError(f"speed {np.max(np.abs(sp)):.4g} exceeds the bound {V}")

    def step_costs(self, cm: CostModel) -> np.ndarray:
        """Midpoint-rule running cost of each step."""
        g = cm.geometry
        out = np.empty(self.n_steps)
        t = self.times
        for k, (i, y0, y1, v) in enumerate(self.steps(g)):
            t_mid = t[k] + 0.5 * self.dt
            if i < 0:
                out[k] = self.dt * float(cm.vertex_running_cost(v, t_mid))
            else:
                a = (y1 - y0) / self.dt
                out[k] = self.dt * float(cm.running(i, 0.5 * (y0 + y1), a, t_mid))
        return out

    def point_at(self, n: int) -> NetPoint:
        """Point at global slice ``n``."""
        return self.points[n - self.start_index]

    def key(self):
        """Hashable description used to merge identical paths."""
        return (self.start_index, tuple((p.vertex, p.edge, p.s) for p in self.points))

    def to_csv(self, path, g: NetworkGeometry) -> None:
        """Columns ``time, edge_id, arc_coord, speed``; vertex points have
        ``edge_id = VERTEX:<v>``.  The speed is that of the step leaving the
        point (the last step for the final point)."""
        sp = self.speeds(g)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "edge_id", "arc_coord", "speed"])
            for k, (t, p) in enumerate(zip(self.times, self.points)):
                a = sp[min(k, len(sp) - 1)] if len(sp) else 0.0
                if p.is_vertex:
                    w.writerow([f"{t:.17g}", f"VERTEX:{p.vertex}", "0", f"{a:.17g}"])
                else:
                    w.writerow([f"{t:.17g}", p.edge, f"{p.s:.17g}", f"{a:.17g}"])


class Synthesizer:
    """Optimal feedback from a solved value field.

    Cubic splines of every (slice, edge) pair are built lazily and cached,
    so one instance can serve many start points.
    """

    def __init__(self, vf, n_search: int | None = None):
        self.vf = vf
        self.grid = vf.grid
        self.g = vf.geometry
        self.cost = vf.cost
        self.V = vf.V
        self.search = np.asarray(vf.controls if n_search is None else np.linspace(-vf.V, vf.V, n_search))
        self.search = np.sort(self.search)
        self.step = float(self.search[1] - self.search[0])
        self._splines = {}

    def spline(self, n: int, i: int):
        key = (n, i)
        sp = self._splines.get(key)
        if sp is None:
            sp = CubicSpline(self.grid.s[i], self.vf.edge_values(n, i), bc_type="not-a-knot")
            self._splines[key] = sp
        return sp

    def _edge_min(self, i, y0, n, lo_a, hi_a):
        """Continuous minimum over speeds in ``[lo_a, hi_a]`` of the one-step
        cost from arc ``y0`` on edge ``i`` at slice ``n``; returns (val, a)."""
        dt = self.grid.dt
        t_mid = self.grid.times[n] + 0.5 * dt
        sp = self.spline(n + 1, i)
        ext = self.grid.edge_extent(i)
        lo_a = max(lo_a, -y0 / dt)
        hi_a = min(hi_a, (ext - y0) / dt)
        if hi_a < lo_a:
            return math.inf, 0.0

        def f(a):
            return -(dt * self.cost.running(i, y0 + 0.5 * a * dt, a, t_mid) + sp(np.clip(y0 + a * dt, 0.0, ext)))

        cand = self.search[(self.search >= lo_a) & (self.search <= hi_a)]
        cand = np.unique(np.concatenate([cand, [lo_a, hi_a]]))
        vals = f(cand)
        k = int(np.argmax(vals))
        a, b = cand[max(k - 1, 0)], cand[min(k + 1, len(cand) - 1)]
        if b > a:
            z, fz = golden_max(f, np.array([a]), np.array([b]), tol=1e-13)
            z, fz = float(z[0]), float(fz[0])
            if fz > vals[k]:
                return -fz, z
        return -float(vals[k]), float(cand[k])

    def _landing(self, i, y0, n, end):
        dt = self.grid.dt
        t_mid = self.grid.times[n] + 0.5 * dt
        a = (end - y0) / dt
        if abs(a) > self.V:
            return math.inf, a
        v = self.g.edges[i].tail if end == 0.0 else self.g.edges[i].head
        return dt * float(self.cost.running(i, 0.5 * (y0 + end), a, t_mid)) + float(self.vf.u[n + 1, v]), a

    def next_point(self, p: NetPoint, n: int):
        """One optimal step from ``p`` at slice ``n``; returns (point, tie)."""
        dt = self.grid.dt
        cands = []  # (value, |speed|, edge order, point)
        if p.is_vertex:
            v = p.vertex
            t_mid = self.grid.times[n] + 0.5 * dt
            cands.append((dt * float(self.cost.vertex_running_cost(v, t_mid)) + float(self.vf.u[n + 1, v]),
                          0.0, -1, p))
            for i in self.g.incident_edges(v):
                sign = self.g.inward_sign(i, v)
                y0 = self.g.endpoint_arc(i, v)
                lo, hi = (0.0, self.V) if sign > 0 else (-self.V, 0.0)
                val, a = self._edge_min(i, y0, n, lo, hi)
                if abs(a) * dt <= VERTEX_SNAP:
                    continue
                cands.append((val, abs(a), i, NetPoint.on_edge(i, y0 + a * dt)))
        else:
            i, y0 = p.edge, p.s
            val, a = self._edge_min(i, y0, n, -self.V, self.V)
            cands.append((val, abs(a), i, NetPoint.on_edge(i, y0 + a * dt)))
            ends = [0.0] + ([self.g.edges[i].length] if self.g.edges[i].finite else [])
            for end in ends:
                val, a = self._landing(i, y0, n, end)
                cands.append((val, abs(a), i, NetPoint.on_edge(i, end)))
        best = min(c[0] for c in cands)
        if not math.isfinite(best):
            raise SolverError(f"no admissible move from {p} at slice {n}")
        close = [c for c in cands if c[0] <= best + TIE_TOL]
        close.sort(key=lambda c: (c[1], c[2]))
        chosen = close[0]
        tie = any(abs(c[1] - chosen[1]) > self.step or c[2] != chosen[2] for c in close[1:])
        if chosen[1] >= self.V * (1 - 1e-9):
            raise SolverError(f"synthesised speed reaches the control bound V={self.V:.4g}")
        return self.g.canonicalize(chosen[3]), tie

    def run(self, x: NetPoint, n0: int) -> Trajectory:
        pts = [x]
        ties = 0
        for n in range(n0, self.grid.n_steps):
            q, tie = self.next_point(pts[-1], n)
            pts.append(q)
            ties += int(tie)
        return Trajectory(n0, self.grid.dt, pts, ties=ties)


def synthesize_optimal(vf, he, x: NetPoint, t: float, synth: Synthesizer | None = None) -> Trajectory:
    """Optimal trajectory from ``x`` at grid time ``t``.

    ``he`` is accepted for interface symmetry (speeds come from the Bellman
    argmin, not from ``-d_p H``).  Off-grid starts are snapped to the nearest
    node with a warning.
    """
    g = vf.geometry
    n0 = vf.grid.time_index(t)
    x = g.canonicalize(x)
    if not vf.grid.on_grid(x):
        snapped = vf.grid.snap(x)
        warnings.warn(f"start point {x} is off the grid; snapped to {snapped}", stacklevel=2)
        x = snapped
    synth = synth or Synthesizer(vf)
    return synth.run(x, n0)


# -- optimality conditions ------------------------------------------------


def interior_arcs(tr: Trajectory, g: NetworkGeometry):
    """Maximal runs of steps whose endpoints all lie inside one edge:
    list of (edge, first step, number of steps)."""
    arcs = []
    k = 0
    pts = tr.points
    while k < tr.n_steps:
        p = pts[k]
        if p.is_vertex:
            k += 1
            continue
        j = k
        while j < tr.n_steps and not pts[j + 1].is_vertex and pts[j + 1].edge == p.edge:
            j += 1
        if j > k:
            arcs.append((p.edge, k, j - k))
        k = max(j, k + 1)
    return arcs


def euler_lagrange_residual(tr: Trajectory, cm: CostModel, min_steps: int = 3) -> dict:
    """Discrete Euler-Lagrange residual on interior arcs.

    With ``P_k = d_a l`` and ``Q_k = d_y l`` evaluated at the midpoint of
    step ``k`` (position, speed, time), the residual at the node between
    steps ``k`` and ``k+1`` is ``(P_{k+1} - P_k)/dt - (Q_k + Q_{k+1})/2``.
    This is exactly the stationarity condition of the midpoint-rule action,
    so discrete optima have zero residual.
    """
    g = cm.geometry
    dt = tr.dt
    t = tr.times
    arcs, skipped = [], []
    for i, k0, m in interior_arcs(tr, g):
        if m < min_steps:
            skipped.append((i, k0, m))
            continue
        y = np.array([tr.points[k].s for k in range(k0, k0 + m + 1)])
        a = np.diff(y) / dt
        ym = 0.5 * (y[1:] + y[:-1])
        tm = t[k0:k0 + m] + 0.5 * dt
        c = cm.edge_costs[i]
        P = c.d_a(ym, a, tm)
        Q = c.d_y(ym, a, tm)
        r = np.diff(P) / dt - 0.5 * (Q[1:] + Q[:-1])
        arcs.append({"edge": i, "start": k0, "steps": m, "max_abs": float(np.max(np.abs(r)))})
    worst = max((a["max_abs"] for a in arcs), default=0.0)
    return {"arcs": arcs, "skipped": skipped, "max_abs": worst}


def transversality_residual(tr: Trajectory, cm: CostModel):
    """``|d_a l_i(y(T), a(T), T) + g_i'(y(T))|`` using the last step speed;
    ``None`` when the trajectory ends at a vertex or has no step."""
    end = tr.points[-1]
    if end.is_vertex or tr.n_steps == 0:
        return None
    prev = tr.points[-2]
    y0 = cm.geometry.endpoint_arc(end.edge, prev.vertex) if prev.is_vertex else prev.s
    a = (end.s - y0) / tr.dt
    T = tr.times[-1]
    c = cm.edge_costs[end.edge]
    return float(abs(c.d_a(end.s, a, T) + cm.terminal_slope(end.edge, end.s)))


def lipschitz_bound_check(trajectories, g: NetworkGeometry, V: float) -> dict:
    """Empirical maximal speed of a batch and whether it comes within 10%
    of the configured bound."""
    vmax = 0.0
    for tr in trajectories:
        sp = tr.speeds(g)
        if sp.size:
            vmax = max(vmax, float(np.max(np.abs(sp))))
    return {"max_speed": vmax, "V": V, "near_bound": vmax >= 0.9 * V, "within_bound": vmax <= V}


def value_along_trajectory_gap(vf, tr: Trajectory, cm: CostModel | None = None) -> float:
    """Max over grid times of ``|u(x, t) - u(y(t'), t') - running cost on [t, t']|``."""
    cm = cm or vf.cost
    costs = np.concatenate([[0.0], np.cumsum(tr.step_costs(cm))])
    u0 = vf.value(tr.points[0], tr.times[0])
    gaps = [abs(u0 - vf.value(p, t) - c) for p, t, c in zip(tr.points, tr.times, costs)]
    return float(max(gaps))


def superdifferential_gap(vf, tr: Trajectory, cm: CostModel | None = None) -> float:
    """Max over interior-arc steps of ``|D_x u + d_a l|`` with ``D_x u`` the
    spline slope of the value at the step midpoint (arc coordinates)."""
    cm = cm or vf.cost
    g = cm.geometry
    synth = Synthesizer(vf)
    worst = 0.0
    for i, k0, m in interior_arcs(tr, g):
        for k in range(k0, k0 + m):
            y0, y1 = tr.points[k].s, tr.points[k + 1].s
            n = tr.start_index + k
            a = (y1 - y0) / tr.dt
            ym = 0.5 * (y0 + y1)
            D = 0.5 * (synth.spline(n, i)(ym, 1) + synth.spline(n + 1, i)(ym, 1))
            tm = tr.times[k] + 0.5 * tr.dt
            worst = max(worst, abs(float(D) + float(cm.edge_costs[i].d_a(ym, a, tm))))
    return worst
