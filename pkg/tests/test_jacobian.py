import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from laserplan.field import CostParams, GridSpec, ScalarField3, obstacle_cost_grad, sobel_gradient
from laserplan.geometry import (AblationFrame, BeamParams, ablate_point, incident_vector,
                                projected_distance_sq)
from laserplan.jacobian import (GRADCHECK_COLUMNS, SingularConfigurationError, affine_field,
                                central_difference, check_configuration, d_s2_dv, d_s2_dv_at,
                                d_sides_dv, d_sides_dv_at, dQ_dtheta, dQ_dv, dQ_dv_at, dv_dtheta,
                                finite_difference_suite, objective, objective_gradient,
                                random_configuration)

BEAM = BeamParams(1.4376, 0.6486)
seeds = st.integers(0, 2**32 - 1)


def rel(a, f):
    return np.max(np.abs(a - f)) / max(np.max(np.abs(f)), 1e-12)


def test_side_gradient_example():
    frame = AblationFrame(np.zeros(3), L_ref=5.0)
    q, v = np.array([3.0, 0, 0]), np.array([0.0, 0, -1])
    da, db, dc = d_sides_dv_at(q, v, frame)
    np.testing.assert_allclose(db, np.array([3.0, 0, -5]) * 5 / math.sqrt(34), atol=1e-15)
    assert not da.any() and not dc.any()
    fd = central_difference(lambda w: np.linalg.norm(q - frame.q_c + w * 5.0), v)
    np.testing.assert_allclose(db, fd, rtol=1e-8)


def test_side_gradient_singular_when_q_is_incident_center():
    frame = AblationFrame(np.zeros(3))
    q = frame.q_c - incident_vector(np.zeros(3), frame) * frame.L_ref
    with pytest.raises(SingularConfigurationError):
        d_sides_dv(q, np.zeros(3), frame)


def test_s2_gradient_vanishes_at_center():
    frame = AblationFrame(np.array([0.2, 0.1, 0.0]))
    assert not np.any(d_s2_dv(frame.q_c, np.array([0.3, -0.1, 0.2]), frame))


@given(seeds)
def test_s2_gradient_on_axis_is_parallel_to_beam(seed):
    rng = np.random.default_rng(seed)
    frame, _, theta, _ = random_configuration(rng)
    v = incident_vector(theta, frame)
    q = frame.q_c - v * rng.uniform(0.1, 3.0)
    g = d_s2_dv_at(q, v, frame)
    perp = g - (g @ v) * v
    assert np.linalg.norm(perp) < 1e-9


@given(seeds)
def test_s2_gradient_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    frame, _, theta, q = random_configuration(rng)
    v = incident_vector(theta, frame)
    fd = central_difference(lambda w: projected_distance_sq(q, w, frame, clamp=False), v)
    assert rel(d_s2_dv_at(q, v, frame), fd) < 1e-6


@given(seeds)
def test_s2_gradient_near_perpendicular_offsets(seed):
    # derivative is tiny here; bound the absolute error instead
    rng = np.random.default_rng(seed)
    frame, _, theta, _ = random_configuration(rng)
    v = incident_vector(theta, frame)
    r = rng.normal(size=3)
    r -= (r @ v) * v
    q = frame.q_c + r + 1e-4 * rng.normal() * v
    fd = central_difference(lambda w: projected_distance_sq(q, w, frame, clamp=False), v)
    assert np.max(np.abs(d_s2_dv_at(q, v, frame) - fd)) < 1e-8


def test_dQ_dv_examples():
    frame = AblationFrame(np.zeros(3))
    np.testing.assert_allclose(dQ_dv(frame.q_c, np.zeros(3), frame, BEAM), BEAM.L_G * np.eye(3))
    far = np.array([20.0 * BEAM.sigma_G, 0, 0])
    assert np.linalg.norm(dQ_dv(far, np.zeros(3), frame, BEAM)) < 1e-12


@given(seeds)
def test_dQ_dv_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    frame, beam, theta, q = random_configuration(rng)
    v = incident_vector(theta, frame)

    def Q(w):
        s2 = projected_distance_sq(q, w, frame, clamp=False)
        return q + w * beam.L_G * np.exp(-s2 / (2 * beam.sigma_G**2))

    assert rel(dQ_dv_at(q, v, frame, beam), central_difference(Q, v)) < 1e-5


def test_dv_dtheta_at_zero():
    J = dv_dtheta(np.zeros(3), AblationFrame(np.zeros(3)))
    np.testing.assert_allclose(J[:, 0], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(J[:, 1], [-1, 0, 0], atol=1e-15)
    np.testing.assert_array_equal(J[:, 2], [0, 0, 0])


def test_dv_dtheta_matches_finite_difference_on_1000_angles(rng):
    frame = AblationFrame(np.zeros(3))
    for theta in rng.uniform(-math.pi, math.pi, size=(1000, 3)):
        fd = central_difference(lambda t: incident_vector(t, frame), theta)
        assert rel(dv_dtheta(theta, frame), fd) < 1e-6


def test_dQ_dtheta_examples():
    frame = AblationFrame(np.zeros(3))
    theta = np.array([0.2, -0.4, 0.1])
    np.testing.assert_allclose(dQ_dtheta(frame.q_c, theta, frame, BEAM),
                               BEAM.L_G * dv_dtheta(theta, frame), atol=1e-15)
    J = dQ_dtheta(np.array([0.3, -0.2, 0.0]), np.zeros(3), frame, BEAM)
    np.testing.assert_array_equal(J[:, 2], 0.0)


@given(seeds)
def test_dQ_dtheta_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    frame, beam, theta, q = random_configuration(rng)
    fd = central_difference(lambda t: ablate_point(q, t, frame, beam), theta)
    assert rel(dQ_dtheta(q, theta, frame, beam), fd) < 1e-5


def test_dQ_dtheta_broadcasts(rng):
    frame = AblationFrame(np.zeros(3))
    q = rng.normal(scale=0.5, size=(7, 3))
    theta = np.array([0.1, 0.2, -0.3])
    J = dQ_dtheta(q, theta, frame, BEAM)
    assert J.shape == (7, 3, 3)
    np.testing.assert_allclose(J[4], dQ_dtheta(q[4], theta, frame, BEAM), atol=1e-15)


# -- objective -------------------------------------------------------------------

def ramp(n=40, spacing=0.1):
    spec = GridSpec((-2, -2, -2), spacing, (n, n, n))
    phi = ScalarField3(spec, spec.centers()[..., 2].copy())
    return phi, sobel_gradient(phi)


def test_gradient_zero_when_every_point_is_safe():
    phi, g = ramp()
    frame = AblationFrame(np.array([0, 0, 1.6]))
    pts = np.array([[0.0, 0, 1.6], [0.2, 0.1, 1.6]])
    cost = CostParams(0.1)
    res = objective_gradient(pts, np.zeros(3), frame, BEAM, phi, g, cost)
    np.testing.assert_array_equal(res.grad, 0.0)
    assert objective(pts, np.zeros(3), frame, BEAM, phi, cost)[0] == 0.0


def test_single_point_gradient_equals_factor_product():
    phi, g = ramp()
    frame = AblationFrame(np.array([0, 0, 0.5]))
    q = np.array([0.3, -0.2, 0.5])
    theta = np.array([0.2, 0.1, 0.0])
    cost = CostParams(0.6)
    Q = ablate_point(q, theta, frame, BEAM)
    expected = obstacle_cost_grad(Q[2], cost) * np.array([0, 0, 1.0]) @ dQ_dtheta(q, theta, frame, BEAM)
    res = objective_gradient(q[None], theta, frame, BEAM, phi, g, cost)
    np.testing.assert_allclose(res.grad, expected, atol=1e-14)


@given(seeds)
def test_objective_gradient_matches_directional_difference(seed):
    out = check_configuration(np.random.default_rng(seed))
    assert out["objective"] < 1e-3


def test_active_subset_sums_selected_rows(rng):
    phi, g = ramp()
    frame = AblationFrame(np.array([0, 0, 0.3]))
    pts = np.column_stack([rng.uniform(-1, 1, (10, 2)), np.full(10, 0.3)])
    theta = np.array([0.1, -0.1, 0.0])
    cost = CostParams(0.6)
    full = objective_gradient(pts, theta, frame, BEAM, phi, g, cost)
    sub = objective_gradient(pts, theta, frame, BEAM, phi, g, cost, active=[7, 2, 5])
    np.testing.assert_array_equal(sub.active, [2, 5, 7])
    np.testing.assert_allclose(sub.grad, full.rows[[2, 5, 7]].sum(axis=0), atol=1e-15)


def test_affine_field_helper_is_exact():
    phi, g = affine_field([0.3, -0.4, 0.5], 0.1, np.array([1.0, 2.0, 3.0]), 0.25, 10)
    np.testing.assert_allclose(g.values[1:-1, 1:-1, 1:-1], np.broadcast_to([0.3, -0.4, 0.5], (8, 8, 8, 3)),
                               atol=1e-12)


def test_suite_rows_and_columns():
    rows = finite_difference_suite(25, seed=3)
    assert len(rows) == 25
    assert all(set(r) == set(GRADCHECK_COLUMNS) for r in rows)
    assert rows == finite_difference_suite(25, seed=3)
