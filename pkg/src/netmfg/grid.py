"""Space-time grids on a network."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError
from .geometry import NetPoint, NetworkGeometry


class SpaceTimeGrid:
    """Uniform nodes on every edge and uniform time slices on ``[0, T]``.

    Every vertex is a node.  Semi-infinite edges are cut at ``truncation``;
    the cut end is an ordinary boundary node, not a vertex.  Each edge gets
    ``ceil(length / dx)`` cells, so the local spacing ``h[i]`` never exceeds
    ``dx``.  Likewise ``dt`` is adjusted down so that ``T`` is a whole
    number of steps.

    Global node numbering: vertices first (``0 .. n_vertices-1``), then the
    non-vertex nodes of each edge in order of increasing arc coordinate.
    """

    def __init__(self, geometry: NetworkGeometry, dx: float, dt: float, T: float,
                 truncation: float | None = None):
        for name, val in (("dx", dx), ("dt", dt), ("T", T)):
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ConfigurationError(f"{name} must be a positive number, got {val!r}")
        self.geometry = geometry
        self.T = float(T)
        self.n_steps = max(1, math.ceil(T / dt - 1e-9))
        self.dt = self.T / self.n_steps
        self.times = np.linspace(0.0, self.T, self.n_steps + 1)
        has_infinite = any(not e.finite for e in geometry.edges)
        if has_infinite:
            if truncation is None or not truncation > 0:
                raise ConfigurationError("semi-infinite edges need a positive truncation radius")
        self.truncation = None if truncation is None else float(truncation)

        self.s: list[np.ndarray] = []
        self.h: list[float] = []
        self.node_index: list[np.ndarray] = []
        n_nodes = geometry.n_vertices
        for e in geometry.edges:
            length = e.length if e.finite else self.truncation
            cells = max(1, math.ceil(length / dx - 1e-9))
            s = np.linspace(0.0, length, cells + 1)
            idx = np.empty(cells + 1, dtype=np.int64)
            idx[0] = e.tail
            n_inner = cells - 1 if e.finite else cells
            idx[1:1 + n_inner] = np.arange(n_nodes, n_nodes + n_inner)
            n_nodes += n_inner
            if e.finite:
                idx[-1] = e.head
            self.s.append(s)
            self.h.append(length / cells)
            self.node_index.append(idx)
        self.n_nodes = n_nodes
        self.dx = max(self.h)

    def edge_extent(self, i: int) -> float:
        """Largest arc coordinate represented on edge ``i``."""
        return float(self.s[i][-1])

    def node_points(self) -> list[NetPoint]:
        """One canonical NetPoint per global node."""
        pts: list[NetPoint | None] = [None] * self.n_nodes
        for v in range(self.geometry.n_vertices):
            pts[v] = NetPoint.at_vertex(v)
        for i, (s, idx) in enumerate(zip(self.s, self.node_index)):
            for k in range(len(s)):
                if pts[idx[k]] is None:
                    pts[idx[k]] = NetPoint.on_edge(i, s[k])
        return pts

    def time_index(self, t: float) -> int:
        """Index of grid time ``t``; raises if ``t`` is not on the grid."""
        n = int(round(t / self.dt))
        if not 0 <= n <= self.n_steps or abs(n * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise ConfigurationError(f"time {t} is not on the grid")
        return n

    def snap(self, p: NetPoint) -> NetPoint:
        """Nearest grid node to ``p`` (same edge)."""
        p = self.geometry.canonicalize(p)
        if p.is_vertex:
            return p
        s = self.s[p.edge]
        if p.s > s[-1] + 1e-12:
            raise ConfigurationError(f"point {p} lies beyond the truncation radius")
        k = int(np.argmin(np.abs(s - p.s)))
        return self.geometry.canonicalize(NetPoint.on_edge(p.edge, s[k]))

    def on_grid(self, p: NetPoint) -> bool:
        p = self.geometry.canonicalize(p)
        if p.is_vertex:
            return True
        return bool(np.any(np.abs(self.s[p.edge] - p.s) <= 1e-12))

    def __repr__(self) -> str:
        return (f"SpaceTimeGrid(dx={self.dx:.4g}, dt={self.dt:.4g}, T={self.T}, "
                f"nodes={self.n_nodes}, steps={self.n_steps})")
