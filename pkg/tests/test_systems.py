import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bowen_lab import systems as sysm
from bowen_lab.errors import DomainError
from bowen_lab.linalg import Subspace, subspace_angle

unit = st.floats(0.0, 0.999, allow_nan=False)
SMOOTH = ["cat", "pcat", "prod4-linear", "prod4-perturbed"]


def point_for(system, coords):
    return np.array(coords[: system.ambient_dim], dtype=float)


def solenoid_point(seed=0):
    sample = sysm.sample_lambda(sysm.solenoid(), 50, seed)
    return sample.points


def test_lambda_plus_is_the_cat_eigenvalue():
    ev = np.linalg.eigvalsh(sysm.CAT_MATRIX)
    assert sysm.LAMBDA_PLUS == pytest.approx(ev.max(), rel=1e-15)
    assert sysm.LOG_LAMBDA == pytest.approx(math.log(ev.max()), rel=1e-15)
    assert np.array_equal(sysm.CAT_MATRIX @ sysm.CAT_INVERSE, np.eye(2))
    assert np.array_equal(sysm.PROD4_MATRIX @ sysm.PROD4_INVERSE, np.eye(4))


def test_cat_step_closed_form():
    x = np.array([0.3, 0.45])
    assert np.allclose(sysm.step(sysm.cat(), x), np.mod(sysm.CAT_MATRIX @ x, 1.0), atol=1e-15)
    assert np.allclose(sysm.jacobian(sysm.cat(), x), sysm.CAT_MATRIX)


@pytest.mark.parametrize("name", SMOOTH)
@given(st.lists(unit, min_size=4, max_size=4))
def test_inverse_step_inverts_step(name, coords):
    system = sysm.make_system(name)
    x = point_for(system, coords)
    back = sysm.inverse_step(system, sysm.step(system, x))
    assert sysm.distance(system, back, x) < 1e-12


def test_solenoid_inverse_on_attractor():
    system = sysm.solenoid()
    pts = solenoid_point()
    back = sysm.inverse_step(system, sysm.step(system, pts))
    assert np.max(sysm.distance(system, back, pts)) < 1e-9


@pytest.mark.parametrize("name", SMOOTH + ["solenoid"])
@given(st.lists(unit, min_size=4, max_size=4))
def test_jacobian_matches_central_differences(name, coords):
    system = sysm.make_system(name)
    x = point_for(system, coords)
    if name == "solenoid":
        x[1:] = 0.3 * (np.array(coords[1:3]) - 0.5)
    h = 1e-6
    J = sysm.jacobian(system, x)
    for i in range(system.ambient_dim):
        e = np.zeros(system.ambient_dim)
        e[i] = h
        col = (sysm.displacement(system, x, e) - sysm.displacement(system, x, -e)) / (2 * h)
        assert np.max(np.abs(col - J[:, i])) < 1e-7


@pytest.mark.parametrize("name", SMOOTH)
@given(st.lists(unit, min_size=4, max_size=4), st.floats(-0.01, 0.01))
def test_displacement_agrees_with_wrapped_difference(name, coords, s):
    system = sysm.make_system(name)
    x = point_for(system, coords)
    d = s * np.linspace(1.0, 0.3, system.ambient_dim)
    e = sysm.displacement(system, x, d)
    ref = sysm.lift_difference(system, sysm.step(system, np.mod(x + d, 1.0)), sysm.step(system, x))
    assert np.max(np.abs(e - ref)) < 1e-12
    assert np.max(np.abs(sysm.inverse_displacement(system, x, e) - d)) < 1e-13


def test_blocked_system_is_iterate():
    system = sysm.pcat(0.03)
    b = sysm.with_block(system, 3)
    x = np.array([0.1, 0.8])
    y = x
    for _ in range(3):
        y = sysm.step(system, y)
    assert np.allclose(sysm.step(b, x), y, atol=1e-14)
    J = sysm.jacobian(b, x)
    ref = np.eye(2)
    for p in sysm.orbit(system, x, 2):
        ref = sysm.jacobian(system, p) @ ref
    assert np.allclose(J, ref)
    assert sysm.base_system(b) == system
    with pytest.raises(DomainError):
        sysm.with_block(system, 0)


def test_make_system_errors():
    with pytest.raises(DomainError):
        sysm.make_system("baker")
    with pytest.raises(DomainError):
        sysm.make_system("pcat", eta=0.1)
    with pytest.raises(DomainError):
        sysm.make_system("cat", eta=0.1)
    with pytest.raises(DomainError):
        sysm.solenoid(lam=0.5)
    assert sysm.make_system("prod4-perturbed").label == "prod4-perturbed"
    assert sysm.make_system("prod4-linear").linear


def test_orbit_forward_and_backward():
    system = sysm.pcat(0.03)
    x = np.array([0.4, 0.6])
    fwd = sysm.orbit(system, x, 5)
    back = sysm.orbit(system, fwd[-1], -5)
    assert fwd.shape == (6, 2)
    assert sysm.distance(system, back[-1], x) < 1e-11


def test_solenoid_backward_orbit_stays_on_attractor():
    system = sysm.solenoid()
    x = solenoid_point()[7]
    back = sysm.orbit(system, x, -30)
    R = sysm.attractor_radius(system)
    assert np.all(np.linalg.norm(back[:, 1:], axis=1) <= R + 1e-9)
    # stepping forward again reproduces the orbit
    fwd = sysm.step(system, back[1:])
    assert np.max(sysm.distance(system, fwd, back[:-1])) < 1e-9


def test_sample_lambda_grid_properties():
    s = sysm.sample_lambda(sysm.cat(), 10_000, 3)
    assert s.points.shape == (10_000, 2)
    assert s.provenance == "dense_grid"
    assert np.all((s.points >= 0) & (s.points < 1))
    again = sysm.sample_lambda(sysm.cat(), 10_000, 3)
    assert np.array_equal(s.points, again.points)
    other = sysm.sample_lambda(sysm.cat(), 10_000, 4)
    assert not np.array_equal(s.points, other.points)
    with pytest.raises(DomainError):
        sysm.sample_lambda(sysm.cat(), 0, 0)


def test_solenoid_sample_is_invariant(solenoid_sample):
    assert solenoid_sample.provenance == "attractor_orbit"
    assert sysm.invariance_defect(sysm.solenoid(), solenoid_sample) <= solenoid_sample.hausdorff_tol


def test_grid_sample_invariance_defect_small():
    s = sysm.sample_lambda(sysm.cat(), 20_000, 0)
    assert sysm.invariance_defect(sysm.cat(), s, steps=3) <= s.hausdorff_tol


def test_cat_invariant_directions():
    x = np.array([0.2, 0.7])
    w, V = np.linalg.eigh(sysm.CAT_MATRIX)
    Eu = Subspace(V[:, [1]])
    Es = Subspace(V[:, [0]])
    assert subspace_angle(sysm.unstable_direction(sysm.cat(), x), Eu) < 1e-12
    assert subspace_angle(sysm.stable_direction(sysm.cat(), x), Es) < 1e-12


def test_pcat_unstable_direction_invariant():
    system = sysm.pcat(0.03)
    x = np.array([0.2, 0.7])
    E = sysm.unstable_direction(system, x)
    pushed = Subspace.span(sysm.jacobian(system, x) @ E.basis)
    assert subspace_angle(pushed, sysm.unstable_direction(system, sysm.step(system, x))) < 1e-10
