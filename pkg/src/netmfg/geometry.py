"""Metric networks: vertices, oriented edges, points and geodesic distance.

A network is a finite set of vertices joined by edges.  Finite edges join two
distinct vertices and are oriented from the lower to the higher vertex index;
the arc coordinate ``s`` runs from 0 at the tail to ``length`` at the head.
Semi-infinite edges leave a single vertex (their tail) and have
``length == inf``.  A junction is the special case of one vertex carrying
``N`` semi-infinite edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import DomainError

__all__ = ["Edge", "NetPoint", "NetworkGeometry", "canonicalize", "geodesic_distance"]

# Arc coordinates within this distance of an endpoint are identified with it.
VERTEX_SNAP = 1e-12


@dataclass(frozen=True)
class Edge:
    tail: int
    head: int | None
    length: float

    @property
    def finite(self) -> bool:
        return self.head is not None


@dataclass(frozen=True)
class NetPoint:
    """A point of the network, either ``(edge, s)`` or ``vertex``.

    Use :meth:`NetworkGeometry.canonicalize` before comparing points: the
    edge form with ``s`` at an endpoint and the vertex form describe the
    same point.
    """

    edge: int | None = None
    s: float | None = None
    vertex: int | None = None

    def __post_init__(self):
        on_edge = self.edge is not None
        if on_edge == (self.vertex is not None):
            raise DomainError("a NetPoint is either (edge, s) or a vertex")
        if on_edge and self.s is None:
            raise DomainError("edge points need an arc coordinate")

    @classmethod
    def at_vertex(cls, v: int) -> "NetPoint":
        return cls(vertex=int(v))

    @classmethod
    def on_edge(cls, edge: int, s: float) -> "NetPoint":
        return cls(edge=int(edge), s=float(s))

    @property
    def is_vertex(self) -> bool:
        return self.vertex is not None

    def __repr__(self) -> str:
        if self.is_vertex:
            return f"NetPoint(vertex={self.vertex})"
        return f"NetPoint(edge={self.edge}, s={self.s!r})"


class NetworkGeometry:
    """Immutable description of a connected metric network.

    Parameters
    ----------
    n_vertices : int
        Vertices are labelled ``0 .. n_vertices-1``.
    edges : sequence of (u, v, length) or Edge
        ``v`` may be ``None`` for a semi-infinite edge leaving ``u``; its
        length must then be ``inf``.  Finite edges are re-oriented from the
        lower to the higher vertex index.
    """

    def __init__(self, n_vertices: int, edges: Iterable):
        if n_vertices < 1:
            raise DomainError("a network needs at least one vertex")
        self.n_vertices = int(n_vertices)
        built = []
        for e in edges:
            if isinstance(e, Edge):
                u, v, length = e.tail, e.head, e.length
            else:
                u, v, length = e
            built.append(self._make_edge(u, v, length))
        if not built:
            raise DomainError("a network needs at least one edge")
        self.edges: tuple[Edge, ...] = tuple(built)
        self._validate()
        incident: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for i, e in enumerate(self.edges):
            incident[e.tail].append(i)
            if e.finite:
                incident[e.head].append(i)
        self._incident = tuple(tuple(x) for x in incident)

    def _make_edge(self, u, v, length) -> Edge:
        length = float(length)
        if not length > 0:
            raise DomainError(f"edge lengths must be positive, got {length}")
        if v is None:
            if math.isfinite(length):
                raise DomainError("a semi-infinite edge must have infinite length")
            return Edge(int(u), None, math.inf)
        u, v = int(u), int(v)
        if u == v:
            raise DomainError("a finite edge needs two distinct endpoints")
        if not math.isfinite(length):
            raise DomainError("an edge between two vertices must have finite length")
        return Edge(min(u, v), max(u, v), length)

    def _validate(self):
        pairs = set()
        for e in self.edges:
            for v in (e.tail, e.head):
                if v is not None and not 0 <= v < self.n_vertices:
                    raise DomainError(f"unknown vertex {v}")
            if e.finite:
                if (e.tail, e.head) in pairs:
                    raise DomainError("two edges may share at most one vertex")
                pairs.add((e.tail, e.head))
        if self.n_vertices > 1:
            n_comp, _ = connected_components(self._adjacency(), directed=False)
            if n_comp != 1:
                raise DomainError("the network must be connected")

    @classmethod
    def junction(cls, n_edges: int) -> "NetworkGeometry":
        """One vertex (0) with ``n_edges`` semi-infinite edges."""
        if n_edges < 1:
            raise DomainError("a junction needs at least one edge")
        return cls(1, [(0, None, math.inf)] * n_edges)

    # -- topology ---------------------------------------------------------

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def incident_edges(self, v: int) -> tuple[int, ...]:
        self._check_vertex(v)
        return self._incident[v]

    def endpoint_arc(self, edge: int, v: int) -> float:
        """Arc coordinate of vertex ``v`` on ``edge`` (0 or the length)."""
        e = self.edges[edge]
        if v == e.tail:
            return 0.0
        if v == e.head:
            return e.length
        raise DomainError(f"vertex {v} is not an endpoint of edge {edge}")

    def inward_sign(self, edge: int, v: int) -> int:
        """+1 if arc coordinates grow when leaving ``v`` along ``edge``."""
        return 1 if self.endpoint_arc(edge, v) == 0.0 else -1

    def endpoints(self, edge: int) -> tuple[int, ...]:
        e = self.edges[edge]
        return (e.tail,) if e.head is None else (e.tail, e.head)

    @cached_property
    def is_tree(self) -> bool:
        finite = sum(1 for e in self.edges if e.finite)
        return finite == self.n_vertices - 1

    def _adjacency(self) -> csr_matrix:
        rows, cols, vals = [], [], []
        for e in self.edges:
            if e.finite:
                rows += [e.tail, e.head]
                cols += [e.head, e.tail]
                vals += [e.length, e.length]
        n = self.n_vertices
        return csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def vertex_distances(self) -> np.ndarray:
        """All-pairs shortest path lengths between vertices."""
        if self.n_vertices == 1:
            return np.zeros((1, 1))
        return shortest_path(self._adjacency(), directed=False)

    # -- points -----------------------------------------------------------

    def _check_vertex(self, v):
        if v is None or not 0 <= v < self.n_vertices:
            raise DomainError(f"unknown vertex {v}")

    def check_point(self, p: NetPoint) -> None:
        if p.is_vertex:
            self._check_vertex(p.vertex)
            return
        if not 0 <= p.edge < self.n_edges:
            raise DomainError(f"unknown edge {p.edge}")
        e = self.edges[p.edge]
        if not (-VERTEX_SNAP <= p.s <= e.length + VERTEX_SNAP) or math.isnan(p.s):
            raise DomainError(f"arc coordinate {p.s} outside edge {p.edge}")

    def canonicalize(self, p: NetPoint) -> NetPoint:
        """Map endpoint arc coordinates to the vertex form; idempotent."""
        self.check_point(p)
        if p.is_vertex:
            return p
        e = self.edges[p.edge]
        if p.s <= VERTEX_SNAP:
            return NetPoint.at_vertex(e.tail)
        if e.finite and p.s >= e.length - VERTEX_SNAP:
            return NetPoint.at_vertex(e.head)
        return p

    def same_point(self, a: NetPoint, b: NetPoint) -> bool:
        return self.canonicalize(a) == self.canonicalize(b)

    def _anchors(self, p: NetPoint) -> list[tuple[int, float]]:
        """(vertex, distance to it) for the vertices bounding ``p``'s edge."""
        if p.is_vertex:
            return [(p.vertex, 0.0)]
        e = self.edges[p.edge]
        out = [(e.tail, p.s)]
        if e.finite:
            out.append((e.head, e.length - p.s))
        return out

    def distance(self, a: NetPoint, b: NetPoint) -> float:
        """Geodesic (shortest path) distance between two points."""
        a, b = self.canonicalize(a), self.canonicalize(b)
        best = math.inf
        if not a.is_vertex and not b.is_vertex and a.edge == b.edge:
            best = abs(a.s - b.s)
        D = self.vertex_distances
        for va, da in self._anchors(a):
            for vb, db in self._anchors(b):
                best = min(best, da + D[va, vb] + db)
        return float(best)

    def distances_from(self, a: NetPoint, edge: int, s: np.ndarray) -> np.ndarray:
        """Vectorised distance from ``a`` to the points ``(edge, s)``."""
        a = self.canonicalize(a)
        s = np.asarray(s, dtype=float)
        e = self.edges[edge]
        D = self.vertex_distances
        best = np.full(s.shape, np.inf)
        if not a.is_vertex and a.edge == edge:
            best = np.abs(s - a.s)
        for va, da in self._anchors(a):
            best = np.minimum(best, da + D[va, e.tail] + s)
            if e.finite:
                best = np.minimum(best, da + D[va, e.head] + (e.length - s))
        return best

    def __repr__(self) -> str:
        return f"NetworkGeometry(n_vertices={self.n_vertices}, edges={list(self.edges)})"


def canonicalize(g: NetworkGeometry, p: NetPoint) -> NetPoint:
    return g.canonicalize(p)


def geodesic_distance(g: NetworkGeometry, a: NetPoint, b: NetPoint) -> float:
    return g.distance(a, b)


def path_graph(lengths: Sequence[float]) -> NetworkGeometry:
    """Vertices ``0..n`` joined in a line by edges of the given lengths."""
    return NetworkGeometry(len(lengths) + 1, [(k, k + 1, l) for k, l in enumerate(lengths)])
