"""Optimal control and mean field games on metric networks.

Semi-Lagrangian value functions, optimal trajectory synthesis, vertex
envelopes, fictitious play for relaxed equilibria and continuity-equation
checks on junctions and general metric graphs.
"""

__version__ = "0.1.0"

from .errors import ConfigurationError, DomainError, InfeasibleError, SolverError  # noqa: E402
from .geometry import NetPoint, NetworkGeometry, path_graph  # noqa: E402
from .grid import SpaceTimeGrid  # noqa: E402

__all__ = [
    "ConfigurationError", "DomainError", "InfeasibleError", "SolverError",
    "NetPoint", "NetworkGeometry", "SpaceTimeGrid", "path_graph", "__version__",
]
