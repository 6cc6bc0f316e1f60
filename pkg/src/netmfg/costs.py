"""Running, vertex and terminal costs on a network.

Edge running costs are functions ``l_i(y, a, t)`` of the arc coordinate
``y``, the scalar speed ``a`` along the edge and time.  All evaluators are
vectorised over numpy arrays.  The built-in family is

    l_i(y, a, t) = kappa_i(y, t) |a|^p + lambda_i(y, t)

with ``kappa_i`` bounded below by a positive constant, for which the
Legendre transform has a closed form (see :meth:`PowerCost.legendre`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError
from .geometry import NetPoint, NetworkGeometry

# -- scalar profiles ------------------------------------------------------


@dataclass(frozen=True)
class Poly:
    """``sum_k coeffs[k] * y**k + t_coef * t``."""

    coeffs: tuple[float, ...] = (0.0,)
    t_coef: float = 0.0

    def __init__(self, coeffs=(0.0,), t_coef=0.0):
        if np.isscalar(coeffs):
            coeffs = (coeffs,)
        object.__setattr__(self, "coeffs", tuple(float(c) for c in coeffs))
        object.__setattr__(self, "t_coef", float(t_coef))

    def __call__(self, y, t=0.0):
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(y, np.asarray(t)).shape)
        for c in reversed(self.coeffs):
            out = out * y + c
        return out + self.t_coef * np.asarray(t, dtype=float)

    def d_y(self, y, t=0.0):
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(y, np.asarray(t)).shape)
        for k in range(len(self.coeffs) - 1, 0, -1):
            out = out * y + k * self.coeffs[k]
        return out

    def bounds(self, ymax: float, T: float, n: int = 257) -> tuple[float, float]:
        y = np.linspace(0.0, ymax, n)
        vals = np.concatenate([self(y, 0.0), self(y, T)])
        return float(vals.min()), float(vals.max())


@dataclass(frozen=True)
class TimeProfile:
    """``const + slope * t`` plus right-continuous jumps ``(time, delta)``.

    Used for vertex-specific running costs.
    """

    const: float = 0.0
    slope: float = 0.0
    jumps: tuple[tuple[float, float], ...] = ()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.const + self.slope * t
        for tj, dj in self.jumps:
            out = out + np.where(t >= tj, dj, 0.0)
        return out

    def bounds(self, T: float, n: int = 1025) -> tuple[float, float]:
        ts = np.concatenate([np.linspace(0, T, n), [tj for tj, _ in self.jumps if 0 <= tj <= T]])
        v = self(ts)
        return float(v.min()), float(v.max())


def _central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


# -- edge running costs ---------------------------------------------------


class EdgeCost:
    """Running cost on one edge given by user callables.

    Parameters
    ----------
    fn : callable ``(y, a, t) -> array``
    d_y, d_a : optional callables with the same signature; central finite
        differences are used when omitted.
    p : exponent of the coercivity bound ``l >= C0 (|a|^p - 1)``.
    C0 : coercivity constant.
    """

    closed_form = False

    def __init__(self, fn, p: float = 2.0, C0: float = 1.0, d_y=None, d_a=None,
                 convexity_margin: float = 0.0):
        if not p > 1:
            raise DomainError("the exponent p must exceed 1")
        if not C0 > 0:
            raise DomainError("the coercivity constant must be positive")
        self._fn = fn
        self._dy = d_y
        self._da = d_a
        self.p = float(p)
        self.C0 = float(C0)
        self.convexity_margin = float(convexity_margin)

    def __call__(self, y, a, t):
        return np.asarray(self._fn(y, a, t), dtype=float)

    def d_y(self, y, a, t):
        if self._dy is not None:
            return np.asarray(self._dy(y, a, t), dtype=float)
        return _central_diff(lambda z: self(z, a, t), np.asarray(y, dtype=float), 1e-6)

    def d_a(self, y, a, t):
        if self._da is not None:
            return np.asarray(self._da(y, a, t), dtype=float)
        return _central_diff(lambda b: self(y, b, t), np.asarray(a, dtype=float), 1e-6)


class PowerCost(EdgeCost):
    """``kappa(y, t) |a|^p + lam(y, t)``; ``kappa`` and ``lam`` are callables
    of ``(y, t)`` exposing a ``d_y`` method (e.g. :class:`Poly`)."""

    closed_form = True

    def __init__(self, kappa, lam, p: float = 2.0, kappa_min: float | None = None):
        self.kappa = Poly(kappa) if np.isscalar(kappa) else kappa
        self.lam = Poly(lam) if np.isscalar(lam) else lam
        if kappa_min is None:
            k = self.kappa
            if not (isinstance(k, Poly) and len(k.coeffs) == 1 and k.t_coef == 0):
                raise DomainError("pass kappa_min for a non-constant kappa")
            kappa_min = k.coeffs[0]
        if not kappa_min > 0:
            raise DomainError("kappa must be bounded below by a positive constant")
        self.kappa_min = float(kappa_min)
        margin = self.kappa_min / 4 if p == 2 else 0.0
        super().__init__(None, p=p, C0=self.kappa_min, convexity_margin=margin)

    def __call__(self, y, a, t):
        return self.kappa(y, t) * np.abs(a) ** self.p + self.lam(y, t)

    def d_y(self, y, a, t):
        return self.kappa.d_y(y, t) * np.abs(a) ** self.p + self.lam.d_y(y, t)

    def d_a(self, y, a, t):
        a = np.asarray(a, dtype=float)
        return self.kappa(y, t) * self.p * np.sign(a) * np.abs(a) ** (self.p - 1)

    def inverse_d_a(self, y, q, t):
        """Speed ``a`` with ``d_a l(y, a, t) = q``."""
        q = np.asarray(q, dtype=float)
        k = self.kappa(y, t)
        return np.sign(q) * (np.abs(q) / (k * self.p)) ** (1.0 / (self.p - 1))

    def legendre(self, y, pbar, t, one_sided: bool = False, sign: int = 1):
        """Closed-form ``sup_zeta {-pbar zeta - l(y, zeta, t)}`` and maximiser.

        With ``one_sided`` the supremum runs over ``sign * zeta >= 0``.
        """
        pbar = np.asarray(pbar, dtype=float)
        zeta = self.inverse_d_a(y, -pbar, t)
        if one_sided:
            zeta = np.where(sign * zeta > 0, zeta, 0.0)
        H = -pbar * zeta - self(y, zeta, t)
        return H, zeta

    def check_assumptions(self, ymax: float, T: float, n: int = 129) -> dict:
        """Sample the coercivity bound and report its tightest margin."""
        y = np.linspace(0, ymax, n)[:, None, None]
        a = np.linspace(-10, 10, 41)[None, :, None]
        t = np.linspace(0, T, 9)[None, None, :]
        slack = self(y, a, t) - self.C0 * (np.abs(a) ** self.p - 1)
        return {"coercivity_min_slack": float(slack.min()), "holds": bool(slack.min() >= 0)}


class TabulatedCost(EdgeCost):
    """Running cost from samples on a rectilinear ``(y, a, t)`` grid.

    Values between samples come from cubic spline interpolation; the
    derivative evaluators difference the interpolant.
    """

    def __init__(self, ys, as_, ts, values, p: float = 2.0, C0: float = 1.0):
        interp = RegularGridInterpolator((np.asarray(ys), np.asarray(as_), np.asarray(ts)),
                                         np.asarray(values, dtype=float), method="cubic",
                                         bounds_error=True)
        self._interp = interp
        super().__init__(self._eval, p=p, C0=C0)

    def _eval(self, y, a, t):
        y, a, t = np.broadcast_arrays(np.asarray(y, float), np.asarray(a, float), np.asarray(t, float))
        pts = np.stack([y.ravel(), a.ravel(), t.ravel()], axis=-1)
        return self._interp(pts).reshape(y.shape)


# -- the cost model -------------------------------------------------------


class CostModel:
    """Costs attached to every edge and vertex of a network.

    Parameters
    ----------
    geometry : NetworkGeometry
    edge_costs : one :class:`EdgeCost` per edge.
    vertex_costs : mapping vertex -> callable ``t -> l_*(t)``.  Vertices
        without an entry have no specific cost (``+inf``).
    terminal_edge : one callable ``y -> g_i(y)`` per edge, optionally with a
        ``d_y`` method.  Defaults to zero.
    terminal_vertex : mapping vertex -> ``g_*``; missing entries are ``+inf``.
    """

    def __init__(self, geometry: NetworkGeometry, edge_costs: Sequence[EdgeCost],
                 vertex_costs: Mapping[int, Callable] | None = None,
                 terminal_edge: Sequence | None = None,
                 terminal_vertex: Mapping[int, float] | None = None):
        if len(edge_costs) != geometry.n_edges:
            raise DomainError("need one running cost per edge")
        self.geometry = geometry
        self.edge_costs = tuple(edge_costs)
        self.vertex_costs = dict(vertex_costs or {})
        self.terminal_edge = tuple(terminal_edge) if terminal_edge is not None else (Poly(0.0),) * geometry.n_edges
        if len(self.terminal_edge) != geometry.n_edges:
            raise DomainError("need one terminal cost per edge")
        self.terminal_vertex = {int(k): float(v) for k, v in (terminal_vertex or {}).items()}
        for v in list(self.vertex_costs) + list(self.terminal_vertex):
            if not 0 <= v < geometry.n_vertices:
                raise DomainError(f"unknown vertex {v}")
        self.p = self.edge_costs[0].p

    @property
    def closed_form(self) -> bool:
        return all(c.closed_form for c in self.edge_costs)

    def running(self, i: int, y, a, t):
        return self.edge_costs[i](y, a, t)

    def vertex_running_cost(self, v: int, t):
        """Cost rate of waiting at ``v``: the vertex-specific cost or the
        cheapest zero-speed edge cost, whichever is smaller."""
        if not 0 <= v < self.geometry.n_vertices:
            raise DomainError(f"unknown vertex {v}")
        t = np.asarray(t, dtype=float)
        best = np.full(t.shape, np.inf)
        if v in self.vertex_costs:
            best = np.minimum(best, self.vertex_costs[v](t))
        for i in self.geometry.incident_edges(v):
            y0 = self.geometry.endpoint_arc(i, v)
            best = np.minimum(best, self.edge_costs[i](y0, 0.0, t))
        return best if best.ndim else float(best)

    def terminal_vertex_value(self, v: int) -> float:
        vals = [self.terminal_vertex.get(v, math.inf)]
        for i in self.geometry.incident_edges(v):
            vals.append(float(self.terminal_edge[i](self.geometry.endpoint_arc(i, v))))
        return min(vals)

    def terminal_cost(self, x: NetPoint) -> float:
        x = self.geometry.canonicalize(x)
        if x.is_vertex:
            return self.terminal_vertex_value(x.vertex)
        return float(self.terminal_edge[x.edge](x.s))

    def terminal_edge_values(self, i: int, s) -> np.ndarray:
        """``g`` at arc coordinates ``s`` of edge ``i``; endpoints use the
        vertex value."""
        s = np.asarray(s, dtype=float)
        out = np.asarray(self.terminal_edge[i](s), dtype=float).copy()
        for v in self.geometry.endpoints(i):
            at = self.geometry.endpoint_arc(i, v)
            out = np.where(np.abs(s - at) <= 1e-12, self.terminal_vertex_value(v), out)
        return out

    def terminal_slope(self, i: int, y) -> float:
        g = self.terminal_edge[i]
        if hasattr(g, "d_y"):
            return g.d_y(y)
        return _central_diff(g, np.asarray(y, float), 1e-6)

    def bounds(self, ymax: float, T: float) -> dict:
        """Crude sampled bounds used to size the control grid."""
        ys = np.linspace(0.0, ymax, 257)
        gvals = []
        for i, e in enumerate(self.geometry.edges):
            extent = min(e.length, ymax)
            gvals.append(self.terminal_edge_values(i, np.linspace(0, extent, 257)))
        g = np.concatenate(gvals)
        lam_max = -math.inf
        c0 = math.inf
        for c in self.edge_costs:
            vals = c(ys[:, None], 0.0, np.linspace(0, T, 9)[None, :])
            lam_max = max(lam_max, float(vals.max()))
            c0 = min(c0, c.C0)
        return {"g_span": float(g.max() - g.min()), "g_min": float(g.min()), "g_max": float(g.max()),
                "lambda_max": lam_max, "C0": c0, "p": self.p}


def vertex_running_cost(cm: CostModel, vertex: int, s):
    return cm.vertex_running_cost(vertex, s)


def terminal_cost(cm: CostModel, x: NetPoint) -> float:
    return cm.terminal_cost(x)


def trajectory_cost(cm: CostModel, traj, t: float | None = None) -> float:
    """Midpoint-rule cost of a time-gridded trajectory plus terminal cost.

    Steps that start and end at the same vertex pay the vertex waiting
    cost; other steps pay the edge cost at the midpoint arc coordinate,
    the step speed and the midpoint time.  ``t`` defaults to the
    trajectory's start time and must match it.
    """
    if t is not None and abs(t - traj.times[0]) > 1e-9:
        raise DomainError("start time does not match the trajectory")
    traj.check_admissible(cm.geometry)
    return float(np.sum(traj.step_costs(cm)) + cm.terminal_cost(traj.points[-1]))


# -- kernel-based mean field costs ----------------------------------------


def _bump(r, radius):
    r = np.asarray(r, dtype=float) / radius
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class Kernel:
    """Radial interaction kernel ``kappa(r)`` with values in ``[0, 1]``.

    ``kind`` is ``"bump"`` (smooth, compactly supported, flat at 0),
    ``"hat"`` (``max(0, 1 - r / radius)``) or ``"zero"``.
    """

    kind: str = "bump"
    radius: float = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "hat":
            return np.maximum(0.0, 1.0 - r / self.radius)
        if self.kind == "bump":
            return _bump(r, self.radius)
        raise DomainError(f"unknown kernel {self.kind!r}")

    @property
    def lipschitz(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "hat":
            return 1.0 / self.radius
        r = np.linspace(0, self.radius, 20001)[1:-1]
        vals = _bump(r, self.radius)
        return float(np.max(np.abs(np.diff(vals)) / np.diff(r)))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"


@dataclass(frozen=True)
class AffineOuter:
    """Outer function ``h(y, r) = base(y) + slope * r``."""

    base: Poly = field(default_factory=lambda: Poly(0.0))
    slope: float = 0.0

    def __call__(self, y, r):
        return self.base(y) + self.slope * np.asarray(r, dtype=float)


@dataclass
class MfgCostFamily:
    """Costs depending on the distribution of states through kernels.

    On edge ``i``:  ``L_i[m](y, a) = K1 |a|^p + K2`` with
    ``Kj = h_{i,j}(y, int kappa_{i,j}(d(y, z)) m(dz))``.  At vertex ``v`` the
    specific cost is ``h_*(int kappa_*(d(v, z)) m(dz))`` when configured.
    Terminal costs are ``g_i(y) + c_i int kappa_G(d(y, z)) m(T)(dz)`` with
    vertex constants ``g_*``.
    """

    geometry: NetworkGeometry
    h1: Sequence[AffineOuter]
    h2: Sequence[AffineOuter]
    kernel1: Sequence[Kernel]
    kernel2: Sequence[Kernel]
    p: float = 2.0
    vertex_outer: Mapping[int, AffineOuter] = field(default_factory=dict)
    vertex_kernel: Mapping[int, Kernel] = field(default_factory=dict)
    terminal_edge: Sequence[Poly] | None = None
    terminal_vertex: Mapping[int, float] = field(default_factory=dict)
    terminal_kernel: Kernel = field(default_factory=lambda: Kernel("zero"))
    terminal_slope: Sequence[float] | None = None

    def __post_init__(self):
        n = self.geometry.n_edges
        for name in ("h1", "h2", "kernel1", "kernel2"):
            if len(getattr(self, name)) != n:
                raise DomainError(f"{name} needs one entry per edge")
        if self.terminal_edge is None:
            self.terminal_edge = [Poly(0.0)] * n
        if self.terminal_slope is None:
            self.terminal_slope = [0.0] * n

    @property
    def decoupled(self) -> bool:
        kernels = list(self.kernel1) + list(self.kernel2) + list(self.vertex_kernel.values())
        return all(k.is_zero for k in kernels) and (
            self.terminal_kernel.is_zero or all(c == 0 for c in self.terminal_slope))

    def convolution(self, atoms, kernel: Kernel, edge: int, y) -> np.ndarray:
        """``sum_z w_z kernel(d((edge, y), z))`` over weighted atoms."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        if kernel.is_zero:
            return out
        for point, w in atoms:
            out = out + float(w) * kernel(self.geometry.distances_from(point, edge, y))
        return out

    def vertex_convolution(self, atoms, kernel: Kernel, v: int) -> float:
        if kernel.is_zero:
            return 0.0
        origin = NetPoint.at_vertex(v)
        return float(sum(float(w) * kernel(self.geometry.distance(origin, z)) for z, w in atoms))


def _check_probability(atoms, tol=1e-12):
    total = 0.0
    for _, w in atoms:
        if w < 0:
            raise DomainError("marginal weights must be nonnegative")
        total += float(w)
    if abs(total - 1.0) > tol:
        raise DomainError(f"marginal has total mass {total}, expected 1")


class GridField:
    """Values on (time slices x edge nodes), interpolated bilinearly."""

    def __init__(self, s: np.ndarray, times: np.ndarray, values: np.ndarray):
        self.s = s
        self.times = times
        self.values = values
        self._hs = s[1] - s[0]
        self._ht = times[1] - times[0]

    def _locate(self, y, t):
        y, t = np.broadcast_arrays(np.asarray(y, float), np.asarray(t, float))
        fy = np.clip(y / self._hs, 0, len(self.s) - 1)
        j = np.minimum(fy.astype(np.int64), len(self.s) - 2)
        wy = fy - j
        ft = np.clip(t / self._ht, 0, len(self.times) - 1)
        n = np.minimum(ft.astype(np.int64), len(self.times) - 2)
        wt = ft - n
        return j, wy, n, wt

    def __call__(self, y, t=0.0):
        j, wy, n, wt = self._locate(y, t)
        V = self.values
        lo = V[n, j] * (1 - wy) + V[n, j + 1] * wy
        hi = V[n + 1, j] * (1 - wy) + V[n + 1, j + 1] * wy
        return lo * (1 - wt) + hi * wt

    def d_y(self, y, t=0.0):
        j, wy, n, wt = self._locate(y, t)
        V = self.values
        lo = (V[n, j + 1] - V[n, j]) / self._hs
        hi = (V[n + 1, j + 1] - V[n + 1, j]) / self._hs
        return lo * (1 - wt) + hi * wt


class _SampledProfile:
    """Vertex cost from values at grid times, linear in between."""

    def __init__(self, times, values):
        self.times = np.asarray(times)
        self.values = np.asarray(values)

    def __call__(self, t):
        return np.interp(t, self.times, self.values)


def build_mfg_costs(family: MfgCostFamily, marginals: Sequence, grid) -> CostModel:
    """Freeze the family against a flow of marginals on the time grid.

    ``marginals[n]`` is a sequence of ``(NetPoint, weight)`` atoms at time
    ``grid.times[n]``.  Kernel convolutions are computed exactly at every
    grid node and grid time, then interpolated bilinearly in between.
    """
    if len(marginals) != grid.n_steps + 1:
        raise DomainError("need one marginal per grid time")
    for atoms in marginals:
        _check_probability(atoms)
    g = family.geometry
    edge_costs = []
    for i in range(g.n_edges):
        s = grid.s[i]
        parts = []
        for outer, kern in ((family.h1[i], family.kernel1[i]), (family.h2[i], family.kernel2[i])):
            if kern.is_zero or outer.slope == 0:
                # Independent of the measure: keep the exact closed form.
                parts.append(outer.base)
                continue
            vals = np.empty((grid.n_steps + 1, len(s)))
            for n, atoms in enumerate(marginals):
                vals[n] = outer(s, family.convolution(atoms, kern, i, s))
            parts.append(GridField(s, grid.times, vals))
        kappa, lam = parts
        if isinstance(kappa, Poly):
            kmin = kappa.bounds(grid.edge_extent(i), grid.T)[0]
        else:
            kmin = float(kappa.values.min())
        edge_costs.append(PowerCost(kappa, lam, p=family.p, kappa_min=kmin))
    vertex_costs = {}
    for v, outer in family.vertex_outer.items():
        kern = family.vertex_kernel.get(v, Kernel("zero"))
        if kern.is_zero or outer.slope == 0:
            vertex_costs[v] = TimeProfile(float(outer(0.0, 0.0)))
            continue
        vals = [float(outer(0.0, family.vertex_convolution(atoms, kern, v))) for atoms in marginals]
        vertex_costs[v] = _SampledProfile(grid.times, vals)
    terminal = []
    final = marginals[-1]
    for i in range(g.n_edges):
        base = family.terminal_edge[i]
        c = family.terminal_slope[i]
        if c == 0 or family.terminal_kernel.is_zero:
            terminal.append(base)
            continue
        s = grid.s[i]
        vals = base(s) + c * family.convolution(final, family.terminal_kernel, i, s)
        terminal.append(_SampledTerminal(s, vals))
    return CostModel(g, edge_costs, vertex_costs, terminal, family.terminal_vertex)


class _SampledTerminal:
    def __init__(self, s, values):
        self.s, self.values = s, values

    def __call__(self, y, t=0.0):
        return np.interp(y, self.s, self.values)

    def d_y(self, y, t=0.0):
        k = np.clip(np.searchsorted(self.s, y) - 1, 0, len(self.s) - 2)
        return (self.values[k + 1] - self.values[k]) / (self.s[k + 1] - self.s[k])


def exact_weights(weights: Sequence) -> list[Fraction]:
    """Rational copies of float weights (decimal literal semantics)."""
    return [w if isinstance(w, Fraction) else Fraction(repr(float(w))) for w in weights]
