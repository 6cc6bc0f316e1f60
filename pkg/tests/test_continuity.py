from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netmfg.continuity import (Bump, Ramp, balance_residual, counting_flux, edge_balance_residual, edge_mass,
                               total_mass_drift, transport_identity_residual, vertex_flux, vertex_mass)
from netmfg.costs import CostModel, Poly, PowerCost
from netmfg.errors import ConfigurationError
from netmfg.geometry import NetPoint, NetworkGeometry
from netmfg.grid import SpaceTimeGrid
from netmfg.hj import solve_value
from netmfg.mfg import TrajectoryMeasure, normalize_atoms
from netmfg.trajectory import Synthesizer, Trajectory

J3 = NetworkGeometry.junction(3)


def _grid(d=0.05, T=1.0):
    return SpaceTimeGrid(J3, d, d, T, truncation=1.5)


def test_ramp_shape():
    psi = Ramp(0.25)
    r = np.linspace(0, 2, 401)
    v = psi(r, 0.5)
    assert np.all(v[r <= 0.125] == 0.0) and np.all(v[r >= 0.5] == 1.0)
    assert np.all(np.diff(v) >= 0)
    h = 1e-6
    x = 0.3
    assert psi.d(x, 0.5) == pytest.approx((psi(x + h, 0.5) - psi(x - h, 0.5)) / (2 * h), rel=1e-6)
    with pytest.raises(ConfigurationError):
        Ramp(1.5)


def test_mass_bookkeeping():
    g = J3
    grid = _grid()
    n = grid.n_steps + 1
    parts = [(Fraction(1, 4), Trajectory(0, grid.dt, [NetPoint.at_vertex(0)] * n)),
             (Fraction(3, 4), Trajectory(0, grid.dt, [NetPoint.on_edge(1, 0.5)] * n))]
    mu = TrajectoryMeasure(parts)
    assert edge_mass(mu, 0, 0) == 0 and edge_mass(mu, 1, 0) == Fraction(3, 4) and edge_mass(mu, 2, 0) == 0
    assert vertex_mass(mu, 0, 3) == Fraction(1, 4)
    assert sum(edge_mass(mu, i, 5) for i in range(3)) + vertex_mass(mu, 0, 5) == 1
    fs = vertex_flux(mu, grid, 0, 0.2)
    for i in range(3):
        assert not np.any(fs.mollified[i]) and not np.any(fs.counting[i])
    assert balance_residual(mu, fs) == 0.0 and balance_residual(mu, fs, exact=False) == 0.0


def test_entering_particle_is_counted_once():
    grid = _grid()
    n = grid.n_steps + 1
    v = 0.4
    pts = [NetPoint.at_vertex(0)] * 11 + [NetPoint.on_edge(0, v * grid.dt * k) for k in range(1, n - 10)]
    mu = TrajectoryMeasure([(Fraction(1), Trajectory(0, grid.dt, pts))])
    q = counting_flux(mu, J3, 0, grid.dt)
    assert sum(q[0]) * Fraction(grid.dt) == 1
    assert q[0][10] * Fraction(grid.dt) == 1 and sum(1 for x in q[0] if x) == 1
    fs = vertex_flux(mu, grid, 0, 0.15)
    assert np.sum(fs.mollified[0]) * grid.dt == pytest.approx(1.0, abs=1e-12)


def test_window_limits():
    grid = _grid()
    mu = TrajectoryMeasure([(Fraction(1), Trajectory(0, grid.dt, [NetPoint.at_vertex(0)] * (grid.n_steps + 1)))])
    with pytest.raises(ConfigurationError):
        vertex_flux(mu, grid, 0, 0.05)
    g = NetworkGeometry(2, [(0, 1, 0.4)])
    gg = SpaceTimeGrid(g, 0.05, 0.05, 0.2)
    mu = TrajectoryMeasure([(Fraction(1), Trajectory(0, gg.dt, [NetPoint.at_vertex(0)] * (gg.n_steps + 1)))])
    with pytest.raises(ConfigurationError):
        vertex_flux(mu, gg, 0, 0.3)


@st.composite
def lattice_walks(draw, n_steps=12):
    """Random walks on the node lattice of a three-edge junction."""
    parts = []
    k = draw(st.integers(1, 4))
    weights = [draw(st.integers(1, 9)) for _ in range(k)]
    total = sum(weights)
    for w in weights:
        state = draw(st.sampled_from([("v",), ("e", 0, 2), ("e", 1, 1), ("e", 2, 3)]))
        pts = []
        for _ in range(n_steps + 1):
            pts.append(NetPoint.at_vertex(0) if state[0] == "v" else NetPoint.on_edge(state[1], 0.05 * state[2]))
            if state[0] == "v":
                e = draw(st.integers(-1, 2))
                state = ("v",) if e < 0 else ("e", e, draw(st.integers(1, 3)))
            else:
                j = state[2] + draw(st.integers(-3, 3))
                j = max(0, min(j, 30))
                state = ("v",) if j == 0 else ("e", state[1], j)
        parts.append((Fraction(w, total), Trajectory(0, 0.05, pts)))
    return TrajectoryMeasure(parts)


@settings(max_examples=60, deadline=None)
@given(lattice_walks())
def test_counting_balance_is_exact_for_any_particle_system(mu):
    grid = SpaceTimeGrid(J3, 0.05, 0.05, 0.6, truncation=1.5)
    fs = vertex_flux(mu, grid, 0, 0.1)
    assert balance_residual(mu, fs, exact=True) == 0.0
    assert edge_balance_residual(mu, J3, grid.dt) == 0.0
    assert total_mass_drift(mu) == 0.0


def _crossing(d, eps):
    g = NetworkGeometry.junction(2)
    cm = CostModel(g, [PowerCost(1.0, 0.0)] * 2, terminal_edge=[Poly((0.0, 0.5)), Poly((0.0, -1.0))])
    grid = SpaceTimeGrid(g, d, d, 1.0, truncation=2.0)
    vf = solve_value(g, grid, cm, n_controls=257)
    synth = Synthesizer(vf)
    atoms = normalize_atoms(g, [(NetPoint.on_edge(0, 0.3), 0.5), (NetPoint.on_edge(0, 0.6), 0.5)])
    mu = TrajectoryMeasure([(w, synth.run(p, 0)) for p, w in atoms], [0, 1])
    return mu, vertex_flux(mu, vf, 0, eps)


def test_mollified_flux_approaches_counting_flux():
    out = []
    for d, eps in ((0.04, 0.2), (0.02, 0.1), (0.01, 0.05)):
        mu, fs = _crossing(d, eps)
        assert balance_residual(mu, fs) == 0.0
        out.append(max(x["time_l1"] for x in fs.discrepancy().values()))
        assert balance_residual(mu, fs, exact=False) <= 5 * (eps + d)
    assert out[0] > out[1] > out[2]
    assert out[2] <= 5 * (0.05 + 0.01)


def test_transport_identity_on_smooth_test_function():
    res = []
    for d in (0.04, 0.02):
        mu, _ = _crossing(d, 0.1)
        res.append(transport_identity_residual(mu, NetworkGeometry.junction(2), Bump(0, 0.45, 0.3), d))
    assert 0 < res[1] < res[0] / 3
