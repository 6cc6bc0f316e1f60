"""Convex envelope of the vertex costs in velocity space.

At a vertex with ``N`` incident edges, velocities live in ``R^N``; edge ``i``
contributes the line ``R e_i`` with cost ``a -> l_i(vertex, a, s)`` (speeds
measured positive into the edge), the origin carries ``min_i l_i(vertex, 0,
s)``, and an extra origin atom carries the waiting cost ``l_0(s)``.  The
envelope ``L_0(., s)`` is the greatest convex function below all of them.
On a finite set of atoms it is the value of the linear program

    min sum_k lam_k f_k   s.t.  sum_k lam_k a_k = alpha,  sum_k lam_k = 1,  lam >= 0,

whose basic solutions have at most ``N + 1`` atoms (Caratheodory).
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog

from .costs import CostModel
from .errors import DomainError, InfeasibleError


class EnvelopeProblem:
    """Atoms of the vertex envelope at vertex ``vertex``.

    Each line ``R e_i`` is sampled uniformly on ``[-A_max, A_max]`` with
    ``n_ray`` points (odd, so 0 is an atom).  Refining ``2^m + 1 -> 2^{m+1}
    + 1`` keeps the old atoms, so the discrete envelope can only decrease.
    """

    def __init__(self, cost: CostModel, vertex: int = 0, A_max: float = 5.0, n_ray: int = 2 ** 10 + 1):
        if not A_max > 0:
            raise DomainError("A_max must be positive")
        if n_ray < 3 or n_ray % 2 == 0:
            raise DomainError("n_ray must be odd and at least 3")
        self.cost = cost
        self.vertex = int(vertex)
        self.A_max = float(A_max)
        self.n_ray = int(n_ray)
        self.edges = cost.geometry.incident_edges(self.vertex)
        self.N = len(self.edges)
        self.ray = np.linspace(-self.A_max, self.A_max, self.n_ray)
        self.ray[self.n_ray // 2] = 0.0

    @property
    def step(self) -> float:
        return 2 * self.A_max / (self.n_ray - 1)

    def refined(self) -> "EnvelopeProblem":
        return EnvelopeProblem(self.cost, self.vertex, self.A_max, 2 * self.n_ray - 1)

    def section(self, k: int, a, s):
        """Cost of speed ``a`` along the ``k``-th incident edge at time ``s``."""
        g = self.cost.geometry
        i = self.edges[k]
        sign = g.inward_sign(i, self.vertex)
        y0 = g.endpoint_arc(i, self.vertex)
        return self.cost.running(i, y0, sign * np.asarray(a, dtype=float), s)

    def waiting_cost(self, s) -> float:
        return float(self.cost.vertex_running_cost(self.vertex, s))

    def atoms(self, s: float):
        """``(coords, values)``: coords has shape ``(K, N)``."""
        coords, values = [], []
        nonzero = self.ray[self.ray != 0.0]
        at_zero = min(float(self.section(k, 0.0, s)) for k in range(self.N))
        for k in range(self.N):
            c = np.zeros((nonzero.size, self.N))
            c[:, k] = nonzero
            coords.append(c)
            values.append(np.asarray(self.section(k, nonzero, s), dtype=float))
        coords.append(np.zeros((2, self.N)))
        values.append(np.array([at_zero, self.waiting_cost(s)]))
        return np.vstack(coords), np.concatenate(values)

    def check_alpha(self, alpha) -> np.ndarray:
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        if alpha.shape != (self.N,):
            raise DomainError(f"alpha must have {self.N} components")
        # The hull of the sampled lines is the cross-polytope of radius A_max.
        if np.sum(np.abs(alpha)) > self.A_max * (1 + 1e-12):
            raise InfeasibleError(f"alpha={alpha} is not a convex combination of ray points within A_max")
        return alpha


def _lp(coords, values, alpha):
    K, N = coords.shape
    A_eq = np.vstack([coords.T, np.ones((1, K))])
    b_eq = np.concatenate([alpha, [1.0]])
    res = linprog(values, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise InfeasibleError(f"envelope LP failed: {res.message}")
    lam = res.x
    keep = lam > 1e-12
    return float(values[keep] @ lam[keep]), coords[keep], lam[keep], values[keep]


def _enumerate(coords, values, alpha):
    """Brute force over supports of size <= N + 1."""
    K, N = coords.shape
    best = (math.inf, None, None, None)
    for size in range(1, N + 2):
        for combo in itertools.combinations(range(K), size):
            c = coords[list(combo)]
            M = np.vstack([c.T, np.ones((1, size))])
            rhs = np.concatenate([alpha, [1.0]])
            lam, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            if np.max(np.abs(M @ lam - rhs)) > 1e-10 or np.min(lam) < -1e-12:
                continue
            lam = np.clip(lam, 0.0, None)
            val = float(values[list(combo)] @ lam)
            if val < best[0] - 1e-15:
                best = (val, c, lam, values[list(combo)])
    if best[1] is None:
        raise InfeasibleError("no feasible support found")
    return best


def envelope_value(ep: EnvelopeProblem, alpha, s: float, method: str = "lp", return_support: bool = False):
    """Discrete envelope value at velocity ``alpha`` and time ``s``.

    ``method="lp"`` solves the linear program over all atoms; ``"enumerate"``
    tries every support of at most ``N + 1`` atoms and is only practical for
    coarse ray grids.  With ``return_support`` the result is ``(value,
    atoms, weights, atom values)``.
    """
    alpha = ep.check_alpha(alpha)
    coords, values = ep.atoms(s)
    if method == "lp":
        out = _lp(coords, values, alpha)
    elif method == "enumerate":
        if coords.shape[0] > 200:
            raise DomainError("enumeration is limited to 200 atoms; coarsen the ray grid")
        out = _enumerate(coords, values, alpha)
    else:
        raise DomainError(f"unknown method {method!r}")
    return out if return_support else out[0]


def verify_envelope_lemma(ep: EnvelopeProblem, s_grid, alphas=None, lsc_levels: int = 6,
                          lsc_tol: float = 1e-9) -> dict:
    """Check ``L_0(0, s) = l_0(s)`` on ``s_grid`` and lower semicontinuity in
    ``s`` by lim-inf sampling.

    For each ``s`` and probe velocity, values at ``s +- 2^-k h`` for ``k =
    1..lsc_levels`` (``h`` the s-grid spacing) are sampled.  The drop of the
    finest-level minimum below the value at ``s`` is a violation when it
    exceeds ``lsc_tol`` and does not shrink from the previous level, which
    is how a downward jump into ``s`` shows up.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    diffs = []
    for s in s_grid:
        diffs.append(envelope_value(ep, np.zeros(ep.N), s) - ep.waiting_cost(s))
    diffs = np.array(diffs)
    if alphas is None:
        alphas = [np.zeros(ep.N)] + [0.25 * ep.A_max * np.eye(ep.N)[k] for k in range(ep.N)]
    h = float(np.min(np.diff(s_grid))) if s_grid.size > 1 else 1.0
    lo, hi = float(s_grid.min()), float(s_grid.max())
    violations = []
    for s in s_grid:
        for alpha in alphas:
            here = envelope_value(ep, alpha, s)
            levels = []
            for k in range(1, lsc_levels + 1):
                pts = [q for q in (s - h * 2.0 ** -k, s + h * 2.0 ** -k) if lo <= q <= hi]
                levels.append(min(envelope_value(ep, alpha, q) for q in pts))
            liminf = levels[-1]
            # A continuous function halves the gap per level; a jump keeps it.
            gap, prev = here - levels[-1], here - levels[-2]
            if gap > lsc_tol and gap > 0.75 * prev:
                violations.append({"s": float(s), "alpha": [float(x) for x in alpha],
                                   "value": here, "liminf": liminf})
    return {"max_violation_i": float(np.max(np.abs(diffs))), "min_diff_i": float(diffs.min()),
            "max_diff_i": float(diffs.max()), "lsc_violations": violations, "ray_step": ep.step}
