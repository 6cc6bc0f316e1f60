import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netmfg.costs import CostModel, Poly, PowerCost, TimeProfile
from netmfg.envelope import EnvelopeProblem, envelope_value, verify_envelope_lemma
from netmfg.errors import DomainError, InfeasibleError
from netmfg.geometry import NetworkGeometry


def _quadratic(n_edges=2, lam=(0.0, 1.0), vertex=None):
    g = NetworkGeometry.junction(n_edges)
    return CostModel(g, [PowerCost(1.0, lam[k % len(lam)]) for k in range(n_edges)], vertex_costs=vertex)


def test_envelope_at_zero_equals_waiting_cost():
    ep = EnvelopeProblem(_quadratic(), A_max=4.0, n_ray=257)
    rep = verify_envelope_lemma(ep, np.linspace(0, 1, 11), alphas=[np.zeros(2)], lsc_levels=2)
    assert rep["max_violation_i"] <= ep.step ** 2
    assert not rep["lsc_violations"]


def test_specific_vertex_cost_is_the_envelope_at_zero():
    ep = EnvelopeProblem(_quadratic(vertex={0: TimeProfile(-0.3)}), A_max=4.0, n_ray=129)
    assert envelope_value(ep, [0.0, 0.0], 0.5) == pytest.approx(-0.3, abs=1e-12)


def test_ray_value_against_caratheodory_enumeration():
    ep = EnvelopeProblem(_quadratic(lam=(0.0, 0.0)), A_max=4.0, n_ray=1025)
    assert envelope_value(ep, [2.0, 0.0], 0.0) == pytest.approx(4.0, abs=1e-9)
    coarse = EnvelopeProblem(_quadratic(lam=(0.0, 0.0)), A_max=4.0, n_ray=9)
    val, atoms, lam, _ = envelope_value(coarse, [2.0, 0.0], 0.0, method="enumerate", return_support=True)
    assert val == pytest.approx(4.0, abs=1e-12)
    assert len(lam) <= 3
    assert envelope_value(coarse, [2.0, 0.0], 0.0) == pytest.approx(val, abs=1e-9)


def test_mixed_velocity_is_a_convex_combination_of_rays():
    # alpha = (1, 1): half of 2 e_0 plus half of 2 e_1 costs (4 + 4 + 1) / 2
    ep = EnvelopeProblem(_quadratic(lam=(0.0, 1.0)), A_max=4.0, n_ray=17)
    v_lp = envelope_value(ep, [1.0, 1.0], 0.0)
    v_en = envelope_value(ep, [1.0, 1.0], 0.0, method="enumerate")
    assert v_lp == pytest.approx(v_en, abs=1e-9)
    assert v_lp <= 4.5 + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1))
def test_lp_and_enumeration_agree_on_three_edges(a0, a1, a2, s):
    cm = _quadratic(3, lam=(0.0, 0.5, Poly(0.2, t_coef=1.0)), vertex={0: TimeProfile(0.3)})
    ep = EnvelopeProblem(cm, A_max=3.0, n_ray=9)
    alpha = np.array([a0, a1, a2])
    if np.abs(alpha).sum() > 3.0:
        return
    assert envelope_value(ep, alpha, s) == pytest.approx(envelope_value(ep, alpha, s, method="enumerate"), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_envelope_is_convex(a0, a1, b0, b1):
    ep = EnvelopeProblem(_quadratic(lam=(0.2, 1.0)), A_max=4.0, n_ray=65)
    a, b = np.array([a0, a1]), np.array([b0, b1])
    mid = envelope_value(ep, 0.5 * (a + b), 0.3)
    assert mid <= 0.5 * (envelope_value(ep, a, 0.3) + envelope_value(ep, b, 0.3)) + 1e-9


def test_refining_the_rays_can_only_lower_the_envelope():
    ep = EnvelopeProblem(_quadratic(lam=(0.3, 1.0)), A_max=4.0, n_ray=33)
    fine = ep.refined()
    for alpha in ([0.7, 0.0], [0.3, -0.4], [0.0, 1.3]):
        assert envelope_value(fine, alpha, 0.0) <= envelope_value(ep, alpha, 0.0) + 1e-12


def test_downward_jump_in_waiting_cost_is_lower_semicontinuous():
    cm = _quadratic(vertex={0: TimeProfile(0.5, 0.0, ((0.5, -0.4),))}, lam=(1.0, 1.0))
    ep = EnvelopeProblem(cm, A_max=4.0, n_ray=65)
    s = np.linspace(0, 1, 11)
    rep = verify_envelope_lemma(ep, s, lsc_levels=4)
    assert rep["lsc_violations"] == []
    assert envelope_value(ep, [0.0, 0.0], 0.5) == pytest.approx(0.1, abs=1e-12)
    assert envelope_value(ep, [0.0, 0.0], 0.45) == pytest.approx(0.5, abs=1e-12)


def test_input_validation():
    cm = _quadratic()
    with pytest.raises(DomainError):
        EnvelopeProblem(cm, n_ray=10)
    ep = EnvelopeProblem(cm, A_max=2.0, n_ray=9)
    with pytest.raises(InfeasibleError):
        envelope_value(ep, [1.5, 1.0], 0.0)
    with pytest.raises(DomainError):
        envelope_value(ep, [0.0], 0.0)
    with pytest.raises(DomainError):
        envelope_value(EnvelopeProblem(cm, A_max=2.0, n_ray=257), [0.0, 0.0], 0.0, method="enumerate")


def test_upward_jump_is_reported_and_smooth_drift_is_not():
    cm = _quadratic(vertex={0: TimeProfile(0.2, 0.0, ((0.5, 0.4),))}, lam=(1.0, 1.0))
    ep = EnvelopeProblem(cm, A_max=4.0, n_ray=65)
    rep = verify_envelope_lemma(ep, np.linspace(0, 1, 11), alphas=[np.zeros(2)], lsc_levels=4)
    assert [v["s"] for v in rep["lsc_violations"]] == [pytest.approx(0.5)]
    drift = _quadratic(vertex={0: TimeProfile(0.6, -0.5)}, lam=(1.0, 1.0))
    rep = verify_envelope_lemma(EnvelopeProblem(drift, A_max=4.0, n_ray=65), np.linspace(0, 1, 11), lsc_levels=2)
    assert rep["lsc_violations"] == []
