import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bowen_lab import bowen as bw
from bowen_lab import charts as ch
from bowen_lab import linearization as lin
from bowen_lab import splitting as sp
from bowen_lab import systems as sysm
from bowen_lab.errors import DomainError, DominationError, RadiusError
from bowen_lab.linalg import Subspace, subspace_angle

X4 = np.array([0.1, 0.2, 0.3, 0.4])
LOG_L = sysm.LOG_LAMBDA
P4 = sysm.prod4(0.0)
P4P = sysm.prod4(0.02)
EST_LIN = sp.estimate_splitting(P4, X4, 40)
EST_PERT = sp.estimate_splitting(P4P, X4, 60)


def _block_eigvecs():
    w, V = np.linalg.eigh(sysm.CAT_MATRIX)
    slow = np.zeros(4)
    slow[:2] = V[:, 1]
    fast = np.zeros(4)
    fast[2:] = V[:, 1]
    return slow, fast


# -- splitting estimates ---------------------------------------------------------

def test_prod4_linear_splitting_closed_form():
    slow, fast = _block_eigvecs()
    assert subspace_angle(EST_LIN.E1, Subspace(slow[:, None])) < 1e-9
    assert subspace_angle(EST_LIN.E2, Subspace(fast[:, None])) < 1e-9
    assert EST_LIN.rates1 == pytest.approx((LOG_L, LOG_L), abs=1e-10)
    assert EST_LIN.rates2 == pytest.approx((2 * LOG_L, 2 * LOG_L), abs=1e-10)
    assert EST_LIN.dominated and EST_LIN.dim1 == 1


def test_cat_degenerate_split():
    est = sp.estimate_splitting(sysm.cat(), np.array([0.2, 0.7]), 30)
    assert est.E2 is None and est.rates2 is None
    assert est.dim1 == 1
    assert est.angle == pytest.approx(math.pi / 2)
    assert not est.dominated
    with pytest.raises(DominationError):
        sp.require_domination(est)


def test_perturbed_splitting_converges_in_horizon():
    slow, _ = _block_eigvecs()
    assert subspace_angle(EST_PERT.E1, Subspace(slow[:, None])) < 0.05
    longer = sp.estimate_splitting(P4P, X4, 120)
    assert subspace_angle(EST_PERT.E1, longer.E1) < 1e-6


@pytest.mark.parametrize("system,horizon", [(P4, 40), (P4P, 40), (P4P, 60)])
def test_domination_gap(system, horizon):
    est = sp.estimate_splitting(system, X4, horizon)
    assert est.rates1[1] + 0.1 <= est.rates2[0]
    lam1, mu2 = sp.domination_constants(est)
    assert mu2 > lam1 > 1


@pytest.mark.parametrize("system,tol", [(P4, 1e-6), (P4P, 1e-3)])
def test_splitting_invariance(system, tol):
    est = EST_LIN if system is P4 else EST_PERT
    pushed = Subspace.span(sysm.jacobian(system, X4) @ est.E1.basis)
    est1 = sp.estimate_splitting(system, sysm.step(system, X4), est.horizon)
    assert subspace_angle(pushed, est1.E1) <= tol


def test_estimate_splitting_errors():
    with pytest.raises(DomainError):
        sp.estimate_splitting(P4, X4, 5)
    with pytest.raises(DomainError):
        sp.estimate_splitting(P4, X4, 20, r2=2)


# -- pinching spectra -------------------------------------------------------------

def test_pinching_report_cat():
    rows = sp.pinching_report(sysm.cat(), np.array([[0.2, 0.7], [0.5, 0.1]]), alpha=0.9)
    for r in rows:
        assert r.alpha_hat == pytest.approx(LOG_L, abs=1e-10)
        assert r.beta_hat == pytest.approx(LOG_L, abs=1e-10)
        assert r.verdict == "pass"


def test_pinching_report_solenoid(solenoid_sample):
    rows = sp.pinching_report(sysm.solenoid(), solenoid_sample.points[:3])
    for r in rows:
        assert r.alpha_hat == pytest.approx(math.log(2), abs=1e-12)
        assert r.beta_hat == pytest.approx(math.log(2), abs=1e-12)


def test_pinching_report_pcat(pcat_sample):
    centers = pcat_sample.points[:6]
    rows = sp.pinching_report(sysm.pcat(0.03), centers)
    flat = sp.pinching_report(sysm.pcat(0.0), centers)
    for r, r0 in zip(rows, flat):
        assert r.beta_hat - r.alpha_hat <= 0.2
        assert r.pinch_margin >= 0.5
        # an eta-small perturbation of the constant rate
        assert abs(r.alpha_hat - r0.alpha_hat) < 0.1
    assert [r.center_ix for r in rows] == list(range(6))


# -- the max-component norm -----------------------------------------------------------

@pytest.mark.parametrize("est", [EST_LIN, EST_PERT], ids=["linear", "perturbed"])
def test_prime_norm_projectors(est):
    ctx = sp.PrimeNormContext.from_splitting(est)
    assert np.max(np.abs(ctx.P1 @ ctx.P1 - ctx.P1)) < 1e-10
    assert np.max(np.abs(ctx.P2 @ ctx.P2 - ctx.P2)) < 1e-10
    assert np.max(np.abs(ctx.P1 + ctx.P2 - np.eye(2))) < 1e-10


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_norm_equivalence(a, b):
    u = np.array([a, b])
    n = np.linalg.norm(u)
    # orthogonal bundles: |u|/sqrt(2) <= |u|' <= |u|
    pn = float(sp.PrimeNormContext.from_splitting(EST_LIN).norm(u))
    assert n / math.sqrt(2) - 1e-15 <= pn <= n + 1e-15
    # oblique bundles at angle theta: sin(theta) |u| / sqrt(2) <= |u|' <= |u| / sin(theta)
    s = math.sin(EST_PERT.angle)
    pn = float(sp.PrimeNormContext.from_splitting(EST_PERT).norm(u))
    assert s * n / math.sqrt(2) - 1e-15 <= pn <= n / s + 1e-15


def test_prime_diam():
    ctx = sp.PrimeNormContext.from_splitting(EST_LIN)
    U = np.array([[0.0, 0.0], [0.3, 0.1], [-0.1, 0.4]])
    assert ctx.diam(U) == pytest.approx(max(0.4, 0.4))
    assert ctx.diam(U[:1]) == 0.0


# -- projection to the slow bundle ----------------------------------------------------

@given(st.floats(-0.07, 0.07), st.floats(-0.07, 0.07))
def test_project_u1_linear_is_coordinate(a, b):
    u = np.array([a, b])
    assert np.allclose(sp.project_u1(P4, EST_LIN, u), [a], atol=1e-15)


def test_project_u1_zero_and_errors():
    assert abs(sp.project_u1(P4P, EST_PERT, np.zeros(2))[0]) < 1e-12
    with pytest.raises(RadiusError):
        sp.project_u1(P4, EST_LIN, np.array([0.1, 0.1]))


def test_project_u1_perturbed_equivariance():
    for u in (np.array([0.03, -0.02]), np.array([-0.05, 0.04])):
        assert sp.projection_equivariance(P4P, EST_PERT, u) <= 1e-6


def test_project_u1_perturbed_close_to_oblique():
    u = np.array([0.03, 0.02])
    a = sp.project_u1(P4P, EST_PERT, u)
    b = sp.PrimeNormContext.from_splitting(EST_PERT).slow_coordinate(u)
    assert abs(a[0] - b[0]) < 1e-3


# -- omega and p_eps ---------------------------------------------------------------

def test_p_eps_examples():
    assert sp.p_eps(0.1, 0.1, 2.0, 1.0) == 1
    assert sp.p_eps(8.0, 1.0, 2.0, 1.0) == 3
    assert sp.p_eps(8.01, 1.0, 2.0, 1.0) == 4
    assert sp.p_eps(0.1, 1.0, 2.0, 1.0) == 1
    with pytest.raises(DominationError):
        sp.p_eps(0.1, 0.05, 1.0, 1.0)
    with pytest.raises(DomainError):
        sp.p_eps(0.1, 0.0, 2.0, 1.0)


@given(st.floats(1.05, 10.0), st.floats(1e-3, 0.1))
def test_p_eps_is_least_integer(ratio, omega):
    eps = 0.1
    p = sp.p_eps(eps, omega, ratio, 1.0)
    assert p >= 1
    assert ratio ** p >= eps / omega
    assert p == 1 or ratio ** (p - 1) < eps / omega


@given(st.floats(1e-3, 0.05))
def test_p_eps_doubling_omega(omega):
    lam1, mu2 = sp.domination_constants(EST_LIN)
    r = mu2 / lam1
    drop = sp.p_eps(0.1, omega, mu2, lam1) - sp.p_eps(0.1, 2 * omega, mu2, lam1)
    k = math.log(2) / math.log(r)
    assert math.floor(k) <= drop <= math.ceil(k)


@pytest.fixture(scope="module")
def p4_traces(prod4_sample):
    at = ch.Atlas(P4, X4, back=2, fwd=4)
    return [ch.local_trace(at.chart(0), prod4_sample, e) for e in (0.1, 0.05)]


def test_omega_eps_grid_oracle(p4_traces):
    ctx = sp.PrimeNormContext.from_splitting(EST_LIN)
    om, used = sp.omega_eps([p4_traces[0]], [ctx])
    assert used == 1 and om >= 0.09
    om_half, _ = sp.omega_eps([p4_traces[1]], [ctx])
    assert om / 2 - 0.01 <= om_half <= om


def test_omega_eps_negative_control():
    ctx = sp.PrimeNormContext.from_splitting(EST_LIN)
    chart = EST_LIN.chart
    confined = ch.LocalTrace(chart, 0.1, np.outer(np.linspace(-0.1, 0.1, 11), EST_LIN.c2[:, 0]))
    om, used = sp.omega_eps([confined], [ctx])
    assert om == pytest.approx(0.0, abs=1e-15) and used == 1
    empty = ch.LocalTrace(chart, 0.1, np.zeros((0, 2)))
    assert sp.omega_eps([empty], [ctx]) == (0.0, 0)


# -- slow Bowen sets ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def p4_refined(prod4_sample):
    est = sp.estimate_splitting(P4, X4, 40)
    tr = bw.refined_trace(est.chart, prod4_sample, 0.1, 6)
    return est, tr


@pytest.mark.parametrize("p", [0, 2, 4, 6])
def test_b1_set_closed_form(p4_refined, p):
    est, tr = p4_refined
    res = sp.check_b1_set(P4, est, tr, p, 0.1)
    assert res.count > 0
    assert np.all(np.abs(res.slow) <= 0.1 * sysm.LAMBDA_PLUS ** -p * (1 + 1e-9))
    assert res.diam_prime_b1 == pytest.approx(2 * 0.1 * sysm.LAMBDA_PLUS ** -p, rel=0.05)
    assert res.below_full


def test_b1_set_p0_is_slow_projection(p4_refined):
    est, tr = p4_refined
    res = sp.check_b1_set(P4, est, tr, 0, 0.1)
    ctx = sp.PrimeNormContext.from_splitting(est)
    keep = ctx.norm(tr.coords) <= 0.1
    assert np.allclose(np.sort(res.slow[:, 0]), np.sort(ctx.slow_coordinate(tr.coords[keep])[:, 0]))
    with pytest.raises(DomainError):
        sp.check_b1_set(P4, est, tr, -1, 0.1)


# -- slow-bundle linearization -----------------------------------------------------------

@given(st.floats(-0.1, 0.1), st.integers(0, 12))
def test_linearize_E1_identity_on_linear(u, p):
    assert abs(sp.linearize_E1(P4, EST_LIN, np.array([u]), p)[0] - u) < 1e-15


def test_linearize_E1_zero_and_ladder():
    assert np.all(sp.linearize_E1(P4P, EST_PERT, np.zeros(1), 8) == 0)
    U = np.array([[0.05], [-0.03]])
    lad = sp.linearize_E1_ladder(P4P, EST_PERT, U, 8)
    for p in (0, 3, 8):
        ref = np.array([sp.linearize_E1(P4P, EST_PERT, u, p) for u in U])
        assert np.allclose(lad[p], ref, atol=1e-15)


def test_linearize_E1_perturbed_geometric_rate():
    U = np.array([[0.1], [-0.05], [0.025], [-0.0125]])
    lad = sp.linearize_E1_ladder(P4P, EST_PERT, U, 12)
    inc = np.linalg.norm(np.diff(lad, axis=0), axis=2).T
    g, C, used = lin.fit_geometric(inc, np.linalg.norm(U, axis=1), p_from=1)
    assert g < 1.0
    bound = C * g ** np.arange(1, 13)[None, :] * np.linalg.norm(U, axis=1)[:, None] ** 2
    assert np.all(inc[used] <= 10 * bound[used])


# -- holonomy proximity of linearized slow traces --------------------------------------

def test_stable_proximity_trend(prod4_sample):
    """Slow linearized traces at x and at an approximately stable-related y
    come closer as the stable distance shrinks."""
    slow, fast = _block_eigvecs()
    w, V = np.linalg.eigh(sysm.CAT_MATRIX)
    stable = np.zeros(4)
    stable[:2] = V[:, 0]
    at_x = ch.Atlas(P4, X4, back=2, fwd=4)
    tx = ch.local_trace(at_x.chart(0), prod4_sample, 0.05, slab=0.1)
    ctx = sp.PrimeNormContext.from_splitting(EST_LIN)
    ux = ctx.slow_coordinate(tx.coords)[:, 0]
    deltas = []
    for d in (1e-2, 1e-3, 1e-4):
        # second-order approximation of the stable leaf through x
        y = np.mod(X4 + d * stable + d * d * slow, 1.0)
        est_y = sp.estimate_splitting(P4, y, 40)
        ty = ch.local_trace(est_y.chart, prod4_sample, 0.1)
        uy = np.sort(sp.PrimeNormContext.from_splitting(est_y).slow_coordinate(ty.coords)[:, 0])
        i = np.clip(np.searchsorted(uy, ux), 1, len(uy) - 1)
        nearest = np.minimum(np.abs(ux - uy[i - 1]), np.abs(ux - uy[i]))
        deltas.append(float(nearest.max()))
    assert deltas[0] > deltas[1] > deltas[2]
    assert deltas[2] < 1e-6


def test_chart_transfer_smoke_prod4():
    chart = ch.Atlas(P4, X4, back=16, fwd=4).chart(0)
    assert lin.chart_transfer_residual(P4, chart, np.array([0.02, -0.01]), np.array([0.01, 0.03]), 6) < 1e-8
