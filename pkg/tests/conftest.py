import math
from pathlib import Path

import numpy as np
import pytest

from netmfg.costs import CostModel, Poly, PowerCost
from netmfg.geometry import NetworkGeometry
from netmfg.grid import SpaceTimeGrid

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

# Acceptance outcomes, criterion number -> list of (ok, detail); printed after the run.
ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[c]
        status = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        terminalreporter.write_line(f"criterion {c:2d} {status}: " + "; ".join(
            d + ("" if ok else " [FAIL]") for ok, d in checks))


def hopf_lax_costs(g=None):
    """l = a^2 on both edges of a two-edge junction, g = x on edge 0, 0 on edge 1."""
    g = g or NetworkGeometry.junction(2)
    cm = CostModel(g, [PowerCost(1.0, 0.0), PowerCost(1.0, 0.0)],
                   terminal_edge=[Poly((0.0, 1.0)), Poly(0.0)])
    return g, cm


def hopf_lax_exact(x, tau):
    """min over the vertex route and the straight route of (y - x)^2 / tau + g(y)."""
    x = np.asarray(x, dtype=float)
    return np.minimum(np.where(x >= tau / 2, x - tau / 4, x ** 2 / tau), x ** 2 / tau)


@pytest.fixture(scope="session")
def hopf_lax_field():
    from netmfg.hj import solve_value

    g, cm = hopf_lax_costs()
    grid = SpaceTimeGrid(g, 0.02, 0.02, 1.0, truncation=2.0)
    return solve_value(g, grid, cm, n_controls=513)


@pytest.fixture(scope="session")
def quad_y2_field():
    from netmfg.hj import solve_value

    g = NetworkGeometry.junction(2)
    lam = Poly((0.0, 0.0, 1.0))
    cm = CostModel(g, [PowerCost(1.0, lam), PowerCost(1.0, lam)], terminal_edge=[Poly((0.0, 1.0)), Poly(0.0)])
    grid = SpaceTimeGrid(g, 0.02, 0.02, 1.0, truncation=2.0)
    return solve_value(g, grid, cm, n_controls=513)


def shooting_y2(x0=1.0, T=1.0):
    """Optimal arc of a^2 + y^2 with terminal cost y: y'' = y, y(0) = x0, 2 y'(T) = -1.

    y = A cosh t + B sinh t; returns (A, B) solved from the two linear conditions.
    """
    A = x0
    B = (-0.5 - A * math.sinh(T)) / math.cosh(T)
    return A, B
