"""Particle trajectory measures, Wasserstein-1 distance and fictitious play.

A :class:`TrajectoryMeasure` is a finite mixture of trajectories with exact
rational weights, so pushforwards and mixtures conserve mass exactly.
Equilibria are approximated by fictitious play

    mu_{k+1} = (1 - d_k) mu_k + d_k BR(mu_k),   d_k = 1 / (k + 1),

started from the measure whose particles stay at their initial atoms.
"""

from __future__ import annotations

import logging
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import linprog

from .costs import MfgCostFamily, build_mfg_costs, exact_weights, trajectory_cost
from .errors import ConfigurationError, DomainError
from .geometry import NetPoint, NetworkGeometry
from .grid import SpaceTimeGrid
from .hj import SMOOTH_FACTOR, solve_value
from .trajectory import Synthesizer, Trajectory

logger = logging.getLogger(__name__)

PRUNE_WEIGHT = 1e-8


def _point_key(p: NetPoint):
    return (p.vertex, p.edge, p.s)


def normalize_atoms(g: NetworkGeometry, atoms) -> list:
    """Canonical points with exact rational weights summing to one."""
    if not atoms:
        raise ConfigurationError("the initial distribution needs at least one atom")
    pts = [g.canonicalize(p) for p, _ in atoms]
    w = exact_weights([w for _, w in atoms])
    if any(x < 0 for x in w):
        raise ConfigurationError("initial weights must be nonnegative")
    total = sum(w)
    if total <= 0:
        raise ConfigurationError("initial weights must have positive total")
    merged = OrderedDict()
    for p, x in zip(pts, w):
        merged[_point_key(p)] = (p, merged.get(_point_key(p), (p, Fraction(0)))[1] + x / total)
    return [(p, x) for p, x in merged.values() if x > 0]


@dataclass
class TrajectoryMeasure:
    """Weighted trajectories on the full horizon; weights are Fractions."""

    particles: list  # (Fraction, Trajectory)
    origins: list = field(default_factory=list)  # index of the m0 atom per particle

    def __post_init__(self):
        if not self.particles:
            raise DomainError("a trajectory measure needs particles")
        total = sum(w for w, _ in self.particles)
        if total != 1:
            raise DomainError(f"weights sum to {total}, not 1")
        if any(w < 0 for w, _ in self.particles):
            raise DomainError("weights must be nonnegative")
        lengths = {len(tr.points) for _, tr in self.particles}
        if len(lengths) != 1 or any(tr.start_index != 0 for _, tr in self.particles):
            raise DomainError("all trajectories must cover the full horizon")
        if not self.origins:
            self.origins = [0] * len(self.particles)

    @property
    def n_slices(self) -> int:
        return len(self.particles[0][1].points)

    def __len__(self):
        return len(self.particles)

    def marginal(self, n: int) -> list:
        """Pushforward by evaluation at slice ``n``: merged ``(point, weight)``."""
        if not 0 <= n < self.n_slices:
            raise ConfigurationError(f"slice {n} is not on the grid")
        out = OrderedDict()
        for w, tr in self.particles:
            p = tr.points[n]
            k = _point_key(p)
            out[k] = (p, out[k][1] + w) if k in out else (p, w)
        return list(out.values())

    def marginals(self) -> list:
        return [self.marginal(n) for n in range(self.n_slices)]

    def float_marginals(self) -> list:
        return [[(p, float(w)) for p, w in m] for m in self.marginals()]

    def mix(self, other: "TrajectoryMeasure", delta: Fraction) -> "TrajectoryMeasure":
        """``(1 - delta) self + delta other`` with identical paths merged."""
        merged = OrderedDict()
        for scale, meas in ((1 - delta, self), (delta, other)):
            if scale == 0:
                continue
            for (w, tr), o in zip(meas.particles, meas.origins):
                k = tr.key()
                if k in merged:
                    merged[k][0] += scale * w
                else:
                    merged[k] = [scale * w, tr, o]
        particles = [(w, tr) for w, tr, _ in merged.values()]
        origins = [o for _, _, o in merged.values()]
        return TrajectoryMeasure(particles, origins)

    def pruned(self, threshold: float = PRUNE_WEIGHT) -> tuple["TrajectoryMeasure", Fraction]:
        """Drop particles lighter than ``threshold``; the survivors from each
        initial atom are rescaled so every atom keeps its exact mass."""
        groups = {}
        for (w, tr), o in zip(self.particles, self.origins):
            groups.setdefault(o, []).append((w, tr))
        particles, origins, removed = [], [], Fraction(0)
        for o, items in groups.items():
            total = sum(w for w, _ in items)
            keep = [(w, tr) for w, tr in items if w >= threshold]
            if not keep:
                keep = [max(items, key=lambda x: x[0])]
            kept = sum(w for w, _ in keep)
            removed += total - kept
            for w, tr in keep:
                particles.append((w * total / kept, tr))
                origins.append(o)
        if removed:
            logger.info("pruned particles of total weight %.3g", float(removed))
        return TrajectoryMeasure(particles, origins), removed


def stay_put_measure(g: NetworkGeometry, atoms, grid: SpaceTimeGrid) -> TrajectoryMeasure:
    atoms = normalize_atoms(g, atoms)
    parts = [(w, Trajectory(0, grid.dt, [p] * (grid.n_steps + 1))) for p, w in atoms]
    return TrajectoryMeasure(parts, list(range(len(atoms))))


def marginal(mu: TrajectoryMeasure, t: float, grid: SpaceTimeGrid) -> list:
    return mu.marginal(grid.time_index(t))


# -- Wasserstein-1 --------------------------------------------------------


def _check_masses(m1, m2):
    a = sum(float(w) for _, w in m1)
    b = sum(float(w) for _, w in m2)
    if abs(a - b) > 1e-9:
        raise DomainError(f"mass mismatch {a} vs {b}")


def w1_tree(g: NetworkGeometry, m1, m2) -> float:
    """Exact distance on a tree: integral over the network of the absolute
    net mass lying beyond each point, the tree being rooted at vertex 0."""
    if not g.is_tree:
        raise DomainError("the tree formula needs a tree network")
    _check_masses(m1, m2)
    vertex_net = np.zeros(g.n_vertices)
    edge_atoms = [[] for _ in range(g.n_edges)]
    for atoms, sign in ((m1, 1.0), (m2, -1.0)):
        for p, w in atoms:
            p = g.canonicalize(p)
            if p.is_vertex:
                vertex_net[p.vertex] += sign * float(w)
            else:
                edge_atoms[p.edge].append((p.s, sign * float(w)))
    # Orient finite edges away from the root by breadth-first search.
    parent_edge = {0: None}
    order = [0]
    child_of = {}
    k = 0
    while k < len(order):
        v = order[k]
        k += 1
        for i in g.incident_edges(v):
            e = g.edges[i]
            if not e.finite:
                continue
            w = e.head if e.tail == v else e.tail
            if w not in parent_edge:
                parent_edge[w] = i
                child_of[i] = w
                order.append(w)
    subtree = vertex_net.copy()
    total = 0.0
    for v in reversed(order):
        for i in g.incident_edges(v):
            e = g.edges[i]
            if not e.finite:
                # Arc coordinate grows away from the root.
                pts = sorted(edge_atoms[i], reverse=True)
                beyond, prev = 0.0, None
                for s, w in pts:
                    if prev is not None:
                        total += abs(beyond) * (prev - s)
                    beyond += w
                    prev = s
                if prev is not None:
                    total += abs(beyond) * prev
                subtree[v] += beyond
        i = parent_edge[v]
        if i is None:
            continue
        e = g.edges[i]
        # Distance from the child end v along the edge.
        pts = sorted((s if e.tail == v else e.length - s, w) for s, w in edge_atoms[i])
        beyond, prev = subtree[v], 0.0
        for r, w in pts:
            total += abs(beyond) * (r - prev)
            beyond += w
            prev = r
        total += abs(beyond) * (e.length - prev)
        parent = e.tail if e.head == v else e.head
        subtree[parent] += beyond
    return float(total)


def w1_lp(g: NetworkGeometry, m1, m2) -> float:
    """Transport linear program with geodesic ground costs."""
    _check_masses(m1, m2)
    a = np.array([float(w) for _, w in m1])
    b = np.array([float(w) for _, w in m2])
    C = np.array([[g.distance(p, q) for q, _ in m2] for p, _ in m1])
    n1, n2 = C.shape
    A = np.zeros((n1 + n2, n1 * n2))
    for r in range(n1):
        A[r, r * n2:(r + 1) * n2] = 1.0
    for c in range(n2):
        A[n1 + c, c::n2] = 1.0
    b_eq = np.concatenate([a, b])
    b_eq[n1:] *= a.sum() / b.sum()
    res = linprog(C.ravel(), A_eq=A[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise DomainError(f"transport LP failed: {res.message}")
    return float(res.fun)


def wasserstein1(g: NetworkGeometry, m1, m2) -> float:
    """Kantorovich-Rubinstein distance: tree formula on trees, LP otherwise."""
    if g.is_tree:
        return w1_tree(g, m1, m2)
    return w1_lp(g, m1, m2)


# -- best responses and fictitious play ------------------------------------


@dataclass
class Frozen:
    """Costs, value field and synthesiser frozen against one measure."""

    cost: object
    vf: object
    synth: Synthesizer


def freeze(family: MfgCostFamily, mu: TrajectoryMeasure, grid: SpaceTimeGrid, **solver) -> Frozen:
    cm = build_mfg_costs(family, mu.float_marginals(), grid)
    vf = solve_value(family.geometry, grid, cm, **solver)
    return Frozen(cm, vf, Synthesizer(vf))


def best_response(family: MfgCostFamily, mu: TrajectoryMeasure, atoms, grid: SpaceTimeGrid,
                  frozen: Frozen | None = None, **solver) -> TrajectoryMeasure:
    """Scheme-optimal trajectory from every initial atom against the costs
    frozen at ``mu``'s marginals."""
    fr = frozen or freeze(family, mu, grid, **solver)
    atoms = normalize_atoms(family.geometry, atoms)
    parts = [(w, fr.synth.run(p, 0)) for p, w in atoms]
    return TrajectoryMeasure(parts, list(range(len(atoms))))


def _gaps(family, mu, grid, fr: Frozen, atoms):
    """Per-particle ``J(y) - J(best response from the same atom)`` and the
    value-based gap ``J(y) - u(x, 0)``."""
    br = {}
    cost_gap, u_gap = [], []
    for (w, tr), o in zip(mu.particles, mu.origins):
        x = tr.points[0]
        k = _point_key(x)
        if k not in br:
            y = fr.synth.run(x, 0)
            br[k] = (y, trajectory_cost(fr.cost, y))
        J = trajectory_cost(fr.cost, tr)
        cost_gap.append(J - br[k][1])
        u_gap.append(J - fr.vf.value(x, 0.0))
    return br, np.array(cost_gap), np.array(u_gap)


def exploitability(family: MfgCostFamily, mu: TrajectoryMeasure, grid: SpaceTimeGrid,
                   frozen: Frozen | None = None, detail: bool = False, **solver):
    """``sum_k w_k max(0, J(y_k) - J(BR_k))`` with ``BR_k`` the synthesised
    best response from ``y_k``'s start point; both costs use the same frozen
    running costs and the same quadrature."""
    fr = frozen or freeze(family, mu, grid, **solver)
    _, cost_gap, u_gap = _gaps(family, mu, grid, fr, None)
    w = np.array([float(x) for x, _ in mu.particles])
    val = float(np.sum(w * np.maximum(cost_gap, 0.0)))
    if detail:
        return val, {"value_gap": float(np.sum(w * u_gap)), "min_cost_gap": float(cost_gap.min())}
    return val


def sup_d1(g: NetworkGeometry, ma: list, mb: list) -> float:
    return max(wasserstein1(g, a, b) for a, b in zip(ma, mb))


@dataclass
class FictitiousPlayResult:
    measure: TrajectoryMeasure
    converged: bool
    iterations: int
    exploitability: list
    value_gap: list
    d1_steps: list
    particles: list
    pruned_mass: float
    best_iteration: int


def fictitious_play(family: MfgCostFamily, atoms, grid: SpaceTimeGrid, max_iter: int = 200,
                    tol: float = 1e-3, prune: float = PRUNE_WEIGHT, track_d1: bool = True,
                    **solver) -> FictitiousPlayResult:
    """Averaged best-response iteration; stops once the exploitability of the
    current measure is at most ``tol`` or after ``max_iter`` best responses.

    On non-convergence the iterate with the smallest exploitability is
    returned with ``converged=False`` and a warning.
    """
    g = family.geometry
    atoms = normalize_atoms(g, atoms)
    mu = stay_put_measure(g, atoms, grid)
    hist_e, hist_u, hist_d1, hist_n = [], [], [], []
    best = (np.inf, mu, 0)
    pruned_total = Fraction(0)
    converged = False
    k = 0
    while True:
        fr = freeze(family, mu, grid, **solver)
        br, cost_gap, u_gap = _gaps(family, mu, grid, fr, atoms)
        w = np.array([float(x) for x, _ in mu.particles])
        e = float(np.sum(w * np.maximum(cost_gap, 0.0)))
        hist_e.append(e)
        hist_u.append(float(np.sum(w * u_gap)))
        hist_n.append(len(mu))
        if e < best[0]:
            best = (e, mu, k)
        logger.debug("iteration %d: exploitability %.3e, %d particles", k, e, len(mu))
        if e <= tol and k > 0:
            converged = True
            break
        if k >= max_iter:
            break
        parts = [(x_w, br[_point_key(p)][0]) for p, x_w in atoms]
        response = TrajectoryMeasure(parts, list(range(len(atoms))))
        new = mu.mix(response, Fraction(1, k + 1))
        new, removed = new.pruned(prune)
        pruned_total += removed
        if track_d1:
            hist_d1.append(sup_d1(g, mu.marginals(), new.marginals()))
        mu = new
        k += 1
    if not converged:
        warnings.warn(f"fictitious play stopped after {k} iterations with exploitability "
                      f"{best[0]:.3g} > {tol:g}; returning the best iterate", RuntimeWarning, stacklevel=2)
        mu = best[1]
    return FictitiousPlayResult(mu, converged, k, hist_e, hist_u, hist_d1, hist_n, float(pruned_total),
                                best[2] if not converged else k)


def mild_solution(family: MfgCostFamily, mu: TrajectoryMeasure, grid: SpaceTimeGrid, **solver):
    """Value field for the costs frozen at ``mu`` and the flow of marginals."""
    cm = build_mfg_costs(family, mu.float_marginals(), grid)
    vf = solve_value(family.geometry, grid, cm, **solver)
    return vf, mu.marginals()


def support_differentiability(vf, marginals) -> float:
    """Fraction of interior support atoms (over all slices before ``T``)
    where the discrete slopes on both sides of the atom's cell agree within
    ``2 * SMOOTH_FACTOR * h``."""
    grid = vf.grid
    good = total = 0
    for n, atoms in enumerate(marginals[:-1]):
        for p, _ in atoms:
            if p.is_vertex:
                continue
            s = grid.s[p.edge]
            U = vf.edge_values(n, p.edge)
            h = grid.h[p.edge]
            j = int(np.clip(np.searchsorted(s, p.s) - 1, 1, len(s) - 3))
            left = (U[j] - U[j - 1]) / h
            right = (U[j + 2] - U[j + 1]) / h
            total += 1
            good += abs(right - left) <= 2 * SMOOTH_FACTOR * h
    return good / total if total else 1.0
