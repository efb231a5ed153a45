import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bowen_lab import charts as ch
from bowen_lab import linearization as lin
from bowen_lab import systems as sysm
from bowen_lab.errors import DomainError, PinchViolation, RadiusError

X0 = np.array([0.2, 0.7])
PCAT5 = sysm.with_block(sysm.pcat(0.03), 5)
PCAT5_CHART = ch.Atlas(PCAT5, X0, back=16, fwd=4).chart(0)
CAT_CHART = ch.Atlas(sysm.cat(), X0, back=16, fwd=4).chart(0)
P4_CHART = ch.Atlas(sysm.prod4(0.0), np.array([0.1, 0.2, 0.3, 0.4]), back=16, fwd=4).chart(0)


def test_block_exponent_closed_form():
    # smallest k with 8 C^3 exp(-alpha k / 2) < 0.9, solved directly
    for C, alpha in [(1.0, math.log(sysm.LAMBDA_PLUS)), (1.2, 0.5), (1.0, 2.0)]:
        k_star = math.floor(2.0 / alpha * math.log(8 * C ** 3 / 0.9)) + 1
        assert lin.block_exponent(C, alpha) == k_star
    assert lin.gamma_of(1.0, 2.0, 3) == pytest.approx(8 * math.exp(-3.0))
    with pytest.raises(DomainError):
        lin.block_exponent(1.0, 0.0)


def test_pinch_constants_validation():
    with pytest.raises(DomainError):
        lin.PinchConstants(1.0, 1.0, 0.5, 1, 0.5, 1.0)
    with pytest.raises(DomainError):
        lin.PinchConstants(1.0, 0.5, 1.0, 1, 0.5, -1.0)
    pc = lin.PinchConstants(1.0, 0.5, 0.5, 1, 0.5, 2.0)
    assert pc.C1 == pytest.approx(40.0)
    assert math.isinf(lin.PinchConstants(1.0, 0.5, 0.5, 1, 1.0, 2.0).C1)


def test_working_radii_records_theory():
    pc = lin.PinchConstants(1.0, 0.5, 0.5, 1, 0.5, 2.0)
    r = lin.working_radii(pc)
    assert r.eps2 == r.eps1 == ch.EPS1
    assert r.eps2_theory == pytest.approx(min(0.1 / 80.0, 0.5 / 120.0))
    assert lin.working_radii(lin.PinchConstants(1.0, 0.5, 0.5, 1, 0.5, 0.0)).eps2_theory == ch.EPS1


def test_pcat_block_exponent():
    pc = lin.pinch_constants(sysm.pcat(0.03), X0)
    assert pc.t0_blocks == 5
    assert pc.gamma < lin.GAMMA_TARGET
    assert pc.alpha <= pc.beta


def test_taylor_constant_zero_for_linear():
    at = ch.Atlas(sysm.cat(), X0, back=2, fwd=4)
    assert lin.estimate_taylor_D(sysm.cat(), [at.chart(j) for j in range(3)]) < 1e-4


@given(st.floats(-0.1, 0.1), st.integers(0, 12))
def test_linear_approximants_are_identity(u, p):
    assert abs(lin.F_p(sysm.cat(), CAT_CHART, np.array([u]), p)[0] - u) < 1e-15


@given(st.floats(-0.07, 0.07), st.floats(-0.07, 0.07), st.integers(0, 12))
def test_linear_approximants_are_identity_prod4(a, b, p):
    u = np.array([a, b])
    assert np.max(np.abs(lin.F_p(P4_CHART.system, P4_CHART, u, p) - u)) < 1e-15


def test_F0_is_identity_and_errors():
    u = np.array([[0.03]])
    assert np.array_equal(lin.F_p(PCAT5, PCAT5_CHART, u, 0), u)
    with pytest.raises(DomainError):
        lin.F_p(PCAT5, PCAT5_CHART, u, -1)
    with pytest.raises(RadiusError):
        lin.F_p(PCAT5, PCAT5_CHART, np.array([[0.2]]), 3, eps2=0.1)
    with pytest.raises(DomainError):
        lin.linearization_state(PCAT5, PCAT5_CHART, u, p_max=lin.P_CAP + 1)


def test_pinch_violation_raised_when_range_bound_fails(monkeypatch):
    chart = ch.Atlas(sysm.cat(), X0, back=4, fwd=4).chart(0)
    assert abs(lin.F_p(sysm.cat(), chart, np.array([[0.1]]), 2, eps2=0.1)[0, 0] - 0.1) < 1e-15
    # an approximant that triples lengths must leave the 2 * eps2 ball
    orig = chart.atlas.df0_power
    monkeypatch.setattr(chart.atlas, "df0_power", lambda j, m: 3.0 * orig(j, m))
    with pytest.raises(PinchViolation):
        lin.F_p(sysm.cat(), chart, np.array([[0.1]]), 2, eps2=0.1)


@given(st.floats(0.05, 0.95), st.floats(0.1, 10.0))
def test_fit_geometric_recovers_rate(gamma, C):
    norms = np.array([0.01, 0.02, 0.05])
    p = np.arange(1, 13)
    inc = C * gamma ** p[None, :] * norms[:, None] ** 2
    g, c, used = lin.fit_geometric(inc, norms)
    floor = lin.round_off_floor(norms[:, None], p[None, :])
    if (inc > floor)[:, 2:].sum() < 2 or np.unique(np.nonzero((inc > floor)[:, 2:])[1]).size < 2:
        assert math.isnan(g)
        return
    assert g == pytest.approx(gamma, rel=1e-9)
    assert c == pytest.approx(C, rel=1e-8)
    assert not used[:, : lin.FIT_FROM - 1].any()


def test_fit_geometric_all_roundoff_is_nan():
    inc = np.full((2, 12), 1e-30)
    g, c, used = lin.fit_geometric(inc, np.array([0.01, 0.02]))
    assert math.isnan(g) and not used.any()


def test_pcat_linearization_state():
    probes = np.array([[0.1], [-0.05], [0.025], [-0.0125]])
    st_ = lin.linearization_state(PCAT5, PCAT5_CHART, probes, 12)
    assert st_.gamma_hat <= 0.95
    assert st_.spread() <= 10.0
    assert st_.increments.shape == (4, 12)
    # Cauchy increments shrink
    assert np.all(st_.increments[:, -1] < st_.increments[:, 0])


def test_spread_nan_when_nothing_fitted():
    st_ = lin.linearization_state(sysm.cat(), CAT_CHART, np.array([[0.05]]), 6)
    assert math.isnan(st_.gamma_hat)
    assert math.isnan(st_.spread())


def test_equivariance_and_conjugacy_identities():
    u = np.array([[0.05], [-0.08]])
    assert lin.equivariance_residual(PCAT5, PCAT5_CHART, u, 8) < 1e-10
    assert lin.conjugacy_residual(PCAT5, PCAT5_CHART, u, 8, 2) < 1e-12
    with pytest.raises(DomainError):
        lin.conjugacy_residual(PCAT5, PCAT5_CHART, u, 8, 0)


def test_L_operator_identity_on_linear_system():
    L = lin.L_operator(sysm.cat(), CAT_CHART, np.array([0.04]), 6, h_rel=1e-3)
    assert abs(L[0, 0] - 1.0) < 1e-12
    with pytest.raises(RadiusError):
        lin.L_operator(sysm.cat(), CAT_CHART, np.array([0.06]), 6)


def test_L_operator_near_identity_pcat():
    L = lin.L_operator(PCAT5, PCAT5_CHART, np.array([0.04]), 10)
    assert abs(L[0, 0] - 1.0) < 1e-2


def test_quadratic_error_check():
    chart = ch.make_chart(sysm.pcat(0.03), X0)
    q = lin.quadratic_error_check(sysm.pcat(0.03), chart, np.array([0.01]), 2)
    assert q.lhs <= 100 * q.rhs_base
    assert q.comparable
    qc = lin.quadratic_error_check(sysm.cat(), CAT_CHART, np.array([0.01]), 2)
    assert qc.lhs < 1e-16
    with pytest.raises(RadiusError):
        lin.quadratic_error_check(sysm.cat(), CAT_CHART, np.array([0.05]), 2)


def test_near_isometry_check():
    lhs, rhs = lin.near_isometry_check(PCAT5, PCAT5_CHART, np.array([0.03]), np.array([0.01]), 10, 100.0)
    assert lhs <= rhs


def test_chart_transfer_identity_linear():
    res = lin.chart_transfer_residual(sysm.prod4(0.0), P4_CHART, np.array([0.02, 0.01]),
                                      np.array([0.03, -0.02]), 4)
    assert res < 1e-8


def test_chart_transfer_identity_pcat():
    chart = ch.Atlas(sysm.pcat(0.03), X0, back=16, fwd=4).chart(0)
    assert lin.chart_transfer_residual(sysm.pcat(0.03), chart, np.array([0.02]), np.array([0.03]), 4) < 1e-8
