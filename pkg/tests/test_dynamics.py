import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recbf.dynamics import (
    CRAZYFLIE_J,
    MAX_TILT,
    QuadParams,
    QuadState,
    TiltClampWarning,
    acceleration_to_attitude,
    double_integrator_model,
    euler_rates,
    hold_attitude,
    linearize,
    quad_step,
    realized_acceleration,
    rotation_matrix,
    wrap_angle,
)

P = QuadParams()
angle = st.floats(-math.pi, math.pi, allow_nan=False)


def test_params_validation():
    with pytest.raises(ValueError):
        QuadParams(m=0.0)
    with pytest.raises(ValueError):
        QuadParams(J=-np.eye(3))
    assert P.m == 0.037 and P.g == -9.81 and P.dt == 0.01
    assert np.array_equal(P.J, CRAZYFLIE_J)


def test_state_wraps_angles():
    s = QuadState([0, 0, 0], [0, 0, 0], [3 * math.pi / 2, -math.pi, 0.0], [0, 0, 0])
    assert s.att[0] == pytest.approx(-math.pi / 2)
    assert s.att[1] == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == math.pi
    with pytest.raises(ValueError):
        QuadState([0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0])


def test_rotation_identity_and_yaw():
    assert np.array_equal(rotation_matrix(0, 0, 0), np.eye(3))
    assert np.allclose(rotation_matrix(0, 0, math.pi / 2)[:, 0], [0, 1, 0], atol=1e-15)


@settings(max_examples=100)
@given(angle, angle, angle)
def test_rotation_orthogonal(phi, theta, psi):
    R = rotation_matrix(phi, theta, psi)
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_rotation_is_zxy_composition(rng):
    def rx(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])

    def ry(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])

    def rz(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

    for _ in range(20):
        phi, theta, psi = rng.uniform(-math.pi, math.pi, 3)
        assert np.allclose(rotation_matrix(phi, theta, psi), rz(psi) @ rx(phi) @ ry(theta), atol=1e-14)


def test_euler_rates_consistent_with_rotation(rng):
    # dR/dt = R hat(Omega) checked with a finite difference of the angles
    for _ in range(10):
        att = rng.uniform(-0.5, 0.5, 3)
        Om = rng.normal(size=3)
        rates = euler_rates(att, Om)
        eps = 1e-6
        dR = (rotation_matrix(*(att + eps * rates)) - rotation_matrix(*(att - eps * rates))) / (2 * eps)
        hat = np.array([[0, -Om[2], Om[1]], [Om[2], 0, -Om[0]], [-Om[1], Om[0], 0]])
        assert np.allclose(dR, rotation_matrix(*att) @ hat, atol=1e-7)


def test_hover_fixed_point():
    s = QuadState.at([1.0, 2.0, 3.0])
    nxt = quad_step(s, P.m * abs(P.g), np.zeros(3), P, np.zeros(3), np.zeros(3))
    assert np.allclose(nxt.pos_vel(), s.pos_vel(), atol=1e-12)


def test_free_fall_one_step():
    s = QuadState.at([0.0, 0.0, 1.0])
    nxt = quad_step(s, 0.0, np.zeros(3), P)
    assert nxt.v[2] == pytest.approx(P.g * P.dt, abs=1e-15)


def test_disturbance_and_noise_enter_velocity():
    s = QuadState.at([0.0, 0.0, 1.0])
    d = np.array([0.01, -0.02, 0.03])
    w = np.array([0.001, 0.0, -0.001])
    a = quad_step(s, 0.0, np.zeros(3), P, d, w)
    b = quad_step(s, 0.0, np.zeros(3), P)
    assert np.allclose(a.v - b.v, d + w, atol=1e-15)
    assert np.array_equal(a.r, b.r)


def test_free_fall_conserves_horizontal_momentum(rng):
    s = QuadState([0, 0, 5], rng.normal(size=3), rng.uniform(-0.3, 0.3, 3), np.zeros(3))
    for _ in range(50):
        nxt = quad_step(s, 0.0, np.zeros(3), P)
        assert np.max(np.abs(nxt.v[:2] - s.v[:2])) < 1e-12
        s = nxt


def test_principal_axis_spin_conserves_rate():
    p = QuadParams(J=np.diag([1.6e-5, 1.7e-5, 2.9e-5]))
    s = QuadState([0, 0, 0], [0, 0, 0], [0, 0, 0], [0.0, 0.0, 3.0])
    for _ in range(1000):
        s = quad_step(s, p.m * abs(p.g), np.zeros(3), p)
    assert abs(np.linalg.norm(s.Omega) - 3.0) < 1e-9


def test_double_integrator_recurrences(rng):
    model = double_integrator_model(0.01)
    x = np.zeros(6)
    assert np.array_equal(model.step(x, np.zeros(3)), x)
    a = rng.normal(size=3)
    x = np.zeros(6)
    pos = np.zeros(3)
    vel = np.zeros(3)
    for k in range(1, 101):
        x = model.step(x, a)
        pos, vel = pos + 0.01 * vel, vel + 0.01 * a
        assert np.allclose(x[3:], k * 0.01 * a, atol=1e-13)
    assert np.allclose(x[:3], pos, atol=1e-13)


def test_linearize(rng):
    model = double_integrator_model(0.01)
    sys = linearize(model, rng.normal(size=6), np.zeros(3))
    assert np.array_equal(sys.A, np.block([[np.eye(3), 0.01 * np.eye(3)], [np.zeros((3, 3)), np.eye(3)]]))
    assert np.array_equal(sys.C, np.eye(6))
    x = rng.normal(size=6)
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1e-3
        col = (model.step(x, e) - model.step(x, -e)) / 2e-3
        assert np.allclose(col, sys.B[:, j], rtol=1e-6, atol=1e-12)


def test_linearize_falls_back_to_finite_differences():
    from dataclasses import replace

    model = replace(double_integrator_model(0.01), drift_jacobian=None, output_jacobian=None)
    sys = linearize(model, np.ones(6), np.zeros(3))
    assert np.allclose(sys.A, double_integrator_model(0.01).drift_jacobian(None), atol=1e-9)


def test_attitude_hover_and_vertical():
    phi, theta, T, clamped = acceleration_to_attitude(np.zeros(3), 0.0, P)
    assert (phi, theta, clamped) == (0.0, 0.0, False)
    assert T == pytest.approx(0.037 * 9.81, abs=1e-15)
    phi, theta, T, _ = acceleration_to_attitude([0.0, 0.0, 1.0], 0.0, P)
    assert phi == 0.0 and theta == 0.0
    assert T == pytest.approx(0.037 * 10.81, abs=1e-15)


@settings(max_examples=200)
@given(st.floats(0, math.radians(60)), st.floats(-math.pi, math.pi), st.floats(0.2, 20.0), angle)
def test_attitude_round_trip(tilt, heading, f_norm, psi):
    f = f_norm * np.array([math.sin(tilt) * math.cos(heading), math.sin(tilt) * math.sin(heading), math.cos(tilt)])
    a = f + P.g * np.array([0, 0, 1.0])
    phi, theta, T, clamped = acceleration_to_attitude(a, psi, P)
    assert not clamped
    assert np.max(np.abs(realized_acceleration(phi, theta, psi, T, P) - a)) < 1e-9


def test_attitude_tilt_clamp_warns():
    with pytest.warns(TiltClampWarning):
        phi, theta, T, clamped = acceleration_to_attitude([100.0, 0.0, 0.0], 0.0, P)
    assert clamped
    n = rotation_matrix(phi, theta, 0.0) @ np.array([0, 0, 1.0])
    assert math.acos(n[2]) == pytest.approx(MAX_TILT, abs=1e-12)


def test_attitude_downward_command_gives_zero_thrust():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(TiltClampWarning):
            acceleration_to_attitude([0.0, 0.0, -20.0], 0.0, P)
    phi, theta, T, clamped = acceleration_to_attitude([0.0, 0.0, -20.0], 0.0, P, warn=False)
    assert (phi, theta, T, clamped) == (0.0, 0.0, 0.0, True)


def test_truth_tracks_double_integrator(rng):
    # smooth commands, ideal attitude loop: truth and reduced model agree within 5 cm over 5 s
    model = double_integrator_model(P.dt)
    s = QuadState.at([0, 0, 1])
    x = s.pos_vel()
    for k in range(500):
        t = k * P.dt
        a = np.array([0.5 * math.sin(t), 0.3 * math.cos(2 * t), 0.2 * math.sin(0.5 * t)])
        phi, theta, T, _ = acceleration_to_attitude(a, 0.0, P)
        s = quad_step(hold_attitude(s, phi, theta, 0.0), T, np.zeros(3), P)
        x = model.step(x, a)
    assert np.max(np.abs(s.r - x[:3])) < 0.05
