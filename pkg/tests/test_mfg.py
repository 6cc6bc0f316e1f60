import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netmfg.costs import AffineOuter, CostModel, Kernel, MfgCostFamily, Poly, PowerCost
from netmfg.errors import DomainError
from netmfg.geometry import NetPoint, NetworkGeometry, path_graph
from netmfg.grid import SpaceTimeGrid
from netmfg.hj import solve_value
from netmfg.mfg import (TrajectoryMeasure, best_response, exploitability, fictitious_play, freeze,
                        mild_solution, normalize_atoms, stay_put_measure, w1_lp, w1_tree, wasserstein1)
from netmfg.trajectory import Synthesizer, Trajectory

J2 = NetworkGeometry.junction(2)
SOLVER = {"n_controls": 65}


def _family(slope=0.0, kernel=Kernel("zero"), terminal=(Poly((0.0, 0.5)), Poly((0.0, 0.8))), **kw):
    return MfgCostFamily(J2, h1=[AffineOuter(Poly(1.0))] * 2, h2=[AffineOuter(Poly(0.1), slope)] * 2,
                         kernel1=[Kernel("zero")] * 2, kernel2=[kernel] * 2, terminal_edge=list(terminal), **kw)


@pytest.fixture(scope="module")
def grid():
    return SpaceTimeGrid(J2, 0.1, 0.1, 0.5, truncation=1.0)


ATOMS = [(NetPoint.on_edge(0, 0.4), 0.5), (NetPoint.on_edge(1, 0.6), 0.5)]


def test_marginal_examples(grid):
    mu = stay_put_measure(J2, [(NetPoint.at_vertex(0), 1.0)], grid)
    assert all(m == [(NetPoint.at_vertex(0), Fraction(1))] for m in mu.marginals())
    mu = stay_put_measure(J2, ATOMS, grid)
    assert [w for _, w in mu.marginal(3)] == [Fraction(1, 2), Fraction(1, 2)]
    for m in mu.marginals():
        assert sum(w for _, w in m) == 1


def test_atoms_are_merged_and_normalised():
    atoms = normalize_atoms(J2, [(NetPoint.on_edge(0, 0.0), 1.0), (NetPoint.at_vertex(0), 1.0),
                                 (NetPoint.on_edge(1, 0.2), 2.0)])
    assert atoms == [(NetPoint.at_vertex(0), Fraction(1, 2)), (NetPoint.on_edge(1, 0.2), Fraction(1, 2))]


def test_measure_validation(grid):
    tr = Trajectory(0, grid.dt, [NetPoint.at_vertex(0)] * 6)
    with pytest.raises(DomainError):
        TrajectoryMeasure([(Fraction(1, 2), tr)])


def test_w1_worked_examples():
    a, b = NetPoint.on_edge(0, 1.0), NetPoint.on_edge(1, 1.0)
    assert wasserstein1(J2, [(a, 1.0)], [(b, 1.0)]) == 2.0
    v = NetPoint.at_vertex(0)
    assert wasserstein1(J2, [(v, 1.0)], [(a, 0.5), (b, 0.5)]) == 1.0
    assert w1_lp(J2, [(v, 1.0)], [(a, 0.5), (b, 0.5)]) == pytest.approx(1.0, abs=1e-12)
    m = [(a, 0.3), (v, 0.7)]
    assert wasserstein1(J2, m, m) == 0.0


def test_w1_on_a_cycle_uses_the_lp():
    g = NetworkGeometry(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
    assert not g.is_tree
    with pytest.raises(DomainError):
        w1_tree(g, [(NetPoint.at_vertex(0), 1.0)], [(NetPoint.at_vertex(1), 1.0)])
    assert wasserstein1(g, [(NetPoint.at_vertex(0), 1.0)], [(NetPoint.on_edge(1, 0.5), 1.0)]) == pytest.approx(1.5)


TREE = NetworkGeometry(5, [(0, 1, 1.0), (1, 2, 0.5), (1, 3, 2.0), (3, 4, 0.7), (0, None, float("inf")),
                           (4, None, float("inf"))])


@st.composite
def measures(draw):
    n = draw(st.integers(1, 5))
    pts = []
    for _ in range(n):
        i = draw(st.integers(0, TREE.n_edges - 1))
        L = TREE.edges[i].length
        pts.append(NetPoint.on_edge(i, draw(st.floats(0.0, 2.0 if L == float("inf") else L))))
    w = np.array([draw(st.floats(0.05, 1.0)) for _ in range(n)])
    return list(zip(pts, w / w.sum()))


@settings(max_examples=60, deadline=None)
@given(measures(), measures())
def test_tree_formula_matches_transport_lp(m1, m2):
    assert w1_tree(TREE, m1, m2) == pytest.approx(w1_lp(TREE, m1, m2), abs=1e-9)


def test_mixture_marginals_are_mixtures(grid):
    vf = solve_value(J2, grid, freeze(_family(), stay_put_measure(J2, ATOMS, grid), grid, **SOLVER).cost, **SOLVER)
    synth = Synthesizer(vf)
    a = stay_put_measure(J2, ATOMS, grid)
    b = TrajectoryMeasure([(w, synth.run(p, 0)) for p, w in normalize_atoms(J2, ATOMS)], [0, 1])
    d = Fraction(1, 3)
    mix = a.mix(b, d)
    for n in range(grid.n_steps + 1):
        expect = {}
        for meas, scale in ((a, 1 - d), (b, d)):
            for p, w in meas.marginal(n):
                expect[p] = expect.get(p, 0) + scale * w
        assert dict(mix.marginal(n)) == expect


def test_pruning_keeps_each_atom_mass(grid):
    pts = [NetPoint.on_edge(0, 0.4)] * 6
    heavy = Trajectory(0, grid.dt, pts)
    light = Trajectory(0, grid.dt, [NetPoint.on_edge(0, 0.4)] * 5 + [NetPoint.on_edge(0, 0.5)])
    other = Trajectory(0, grid.dt, [NetPoint.on_edge(1, 0.6)] * 6)
    eps = Fraction(1, 10 ** 9)
    mu = TrajectoryMeasure([(Fraction(1, 2) - eps, heavy), (eps, light), (Fraction(1, 2), other)], [0, 0, 1])
    pruned, removed = mu.pruned(1e-8)
    assert removed == eps and len(pruned) == 2
    assert [w for w, _ in pruned.particles] == [Fraction(1, 2), Fraction(1, 2)]


def test_decoupled_best_response_is_the_plain_optimum(grid):
    fam = _family()
    plain = CostModel(J2, [PowerCost(1.0, 0.1)] * 2, terminal_edge=[Poly((0.0, 0.5)), Poly((0.0, 0.8))])
    vf = solve_value(J2, grid, plain, **SOLVER)
    mu0 = stay_put_measure(J2, ATOMS, grid)
    br = best_response(fam, mu0, ATOMS, grid, **SOLVER)
    synth = Synthesizer(vf)
    for (w, tr), (p, _) in zip(br.particles, ATOMS):
        assert tr.points == synth.run(p, 0).points
    vf2, _ = mild_solution(fam, br, grid, **SOLVER)
    np.testing.assert_array_equal(vf2.u, vf.u)
    one = best_response(fam, mu0, [(NetPoint.on_edge(0, 0.4), 1.0)], grid, **SOLVER)
    assert len(one) == 1 and one.particles[0][0] == 1


def test_decoupled_fictitious_play_converges_in_one_step(grid):
    res = fictitious_play(_family(), ATOMS, grid, tol=1e-10, **SOLVER)
    assert res.converged and res.iterations == 1
    assert res.exploitability[-1] <= 1e-10


def test_suboptimal_particles_are_exploitable_and_splitting_is_neutral(grid):
    fam = _family(0.5, Kernel("bump", 0.5))
    g = J2
    slow = Trajectory(0, grid.dt, [NetPoint.on_edge(0, 0.4 + 0.05 * k) for k in range(6)])
    mu = TrajectoryMeasure([(Fraction(1), slow)])
    e = exploitability(fam, mu, grid, **SOLVER)
    assert e > 0.01
    split = TrajectoryMeasure([(Fraction(1, 2), slow), (Fraction(1, 2), slow)], [0, 0])
    assert exploitability(fam, split, grid, **SOLVER) == pytest.approx(e, abs=1e-14)


def test_terminal_coupling_reaches_the_value_field(grid):
    fam = _family(terminal_kernel=Kernel("bump", 0.6), terminal_slope=[1.0, 1.0])
    a = stay_put_measure(J2, ATOMS, grid)
    moved = Trajectory(0, grid.dt, [NetPoint.on_edge(0, 0.4)] * 5 + [NetPoint.on_edge(0, 0.6)])
    b = TrajectoryMeasure([(Fraction(1, 2), moved), (Fraction(1, 2), a.particles[1][1])], [0, 1])
    ua, _ = mild_solution(fam, a, grid, **SOLVER)
    ub, _ = mild_solution(fam, b, grid, **SOLVER)
    assert np.max(np.abs(ua.u[-1] - ub.u[-1])) > 0.1


def test_mirrored_instances_give_mirrored_responses(grid):
    fam = _family(0.5, Kernel("bump", 0.5), terminal=(Poly((0.09, -0.6, 1.0)),) * 2)
    atoms = [(NetPoint.on_edge(0, 0.6), 0.5), (NetPoint.on_edge(1, 0.6), 0.5)]
    mu = stay_put_measure(J2, atoms, grid)
    br = best_response(fam, mu, atoms, grid, **SOLVER)
    (_, t0), (_, t1) = br.particles
    for p, q in zip(t0.points, t1.points):
        assert (p.is_vertex and q.is_vertex) or (p.edge == 0 and q.edge == 1 and abs(p.s - q.s) < 1e-12)


def test_non_convergence_returns_best_iterate_with_warning(grid):
    fam = _family(2.0, Kernel("bump", 0.8))
    with pytest.warns(RuntimeWarning):
        res = fictitious_play(fam, ATOMS, grid, max_iter=1, tol=1e-12, **SOLVER)
    assert not res.converged
    assert min(res.exploitability) == res.exploitability[res.best_iteration]


def test_w1_on_path_graph_between_vertices():
    g = path_graph([1.0, 2.0])
    assert wasserstein1(g, [(NetPoint.at_vertex(0), 1.0)], [(NetPoint.at_vertex(2), 1.0)]) == pytest.approx(3.0)
