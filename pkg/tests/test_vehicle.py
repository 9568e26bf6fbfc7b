import numpy as np
import pytest

from tandem_mpc.vehicle import (ControlInput, DrydenParams, RotorForces, VehicleParams,
                                VehicleState, WindState, body_force, dryden_coefficients,
                                dryden_step, dynamics_deriv, mix, propagate, step_rk4, unmix)
from oracles import random_dcm

ZERO = np.zeros(3)


def torque_free_params():
    z = np.zeros((3, 3))
    return VehicleParams(drag_force=z, drag_torque_E=z, drag_torque_F=z, gravity=0.0)


def spinning_body():
    return VehicleState.from_parts(np.eye(3), [1.0, 0.0, 0.0], ZERO, [1.0, 0.5, 2.0])


def integrate(x, u, p, dt, T):
    for _ in range(round(T / dt)):
        x = step_rk4(x, u, ZERO, p, dt, reorthonormalize=False)
    return x


def rk4_error_ratio(dt=0.05, T=2.0):
    p = torque_free_params()
    u = ControlInput(0.0, ZERO)
    x0 = spinning_body()
    ref = integrate(x0, u, p, dt / 128, T)

    def err(x):
        return np.linalg.norm(x.C - ref.C) + np.linalg.norm(x.omega - ref.omega)

    return err(integrate(x0, u, p, dt, T)) / err(integrate(x0, u, p, dt / 2, T))


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(mass_kg=-1.0)
    with pytest.raises(ValueError):
        VehicleParams(inertia=np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        VehicleParams(drag_force=np.diag([1.0, -1.0, 1.0]))
    assert np.isclose(VehicleParams().hover_thrust, 2138.58)


def test_hover_is_equilibrium():
    p = VehicleParams()
    x = VehicleState.from_parts(np.eye(3), ZERO, [1.0, 2.0, -3.0], ZERO)
    d = dynamics_deriv(x, ControlInput(p.hover_thrust, ZERO), ZERO, p)
    for field in (d.C_dot, d.v_dot, d.r_dot, d.omega_dot):
        assert np.allclose(field, 0.0, atol=1e-12)


def test_thrust_points_up_at_level_attitude():
    p = VehicleParams()
    x = VehicleState.from_parts(np.eye(3), ZERO, ZERO, ZERO)
    d = dynamics_deriv(x, ControlInput(2.0 * p.hover_thrust, ZERO), ZERO, p)
    assert d.v_dot[2] < 0.0  # NED: climbing means negative down-rate


def test_drag_is_dissipative(rng):
    p = VehicleParams()
    for _ in range(20):
        C = random_dcm(rng)
        v = rng.standard_normal(3) * 5
        x = VehicleState.from_parts(C, v, ZERO, ZERO)
        f = body_force(x, ControlInput(0.0, ZERO), ZERO, p)
        drag = C @ f - np.array([0.0, 0.0, p.mass_kg * p.gravity])
        assert drag @ v <= 1e-12


def test_step_rk4_matches_deriv_for_tiny_step(rng):
    p = VehicleParams()
    x = VehicleState.from_parts(random_dcm(rng), rng.standard_normal(3), rng.standard_normal(3),
                                0.3 * rng.standard_normal(3))
    u = ControlInput(2000.0, [10.0, -5.0, 3.0])
    wind = np.array([0.0, -5.0, 0.0])
    h = 1e-6
    d = dynamics_deriv(x, u, wind, p)
    y = step_rk4(x, u, wind, p, h, reorthonormalize=False)
    assert np.allclose((y.v - x.v) / h, d.v_dot, atol=1e-5)
    assert np.allclose((y.omega - x.omega) / h, d.omega_dot, atol=1e-5)
    assert np.allclose((y.C - x.C) / h, d.C_dot, atol=1e-5)


def test_rk4_fourth_order():
    assert abs(rk4_error_ratio() - 16.0) < 3.0


def test_torque_free_conserves_momentum():
    p = torque_free_params()
    x0 = spinning_body()
    x = integrate(x0, ControlInput(0.0, ZERO), p, 0.01, 5.0)
    h0 = x0.C @ p.inertia @ x0.omega
    h1 = x.C @ p.inertia @ x.omega
    assert np.allclose(h0, h1, atol=1e-7)


def test_propagate_keeps_rotation():
    p = VehicleParams()
    x = VehicleState.from_parts(np.eye(3), ZERO, ZERO, [0.5, -0.3, 1.0])
    x = propagate(x, ControlInput(p.hover_thrust, ZERO), ZERO, p, 1.0, substeps=50)
    assert np.allclose(x.C.T @ x.C, np.eye(3), atol=1e-13)
    assert step_rk4(x, ControlInput(0.0, ZERO), ZERO, p, 0.0) is x


def test_mixer_round_trip(rng):
    p = VehicleParams()
    for _ in range(10):
        u = ControlInput(3000 * rng.random(), 200 * rng.standard_normal(3))
        rf = mix(u, p)
        assert isinstance(rf, RotorForces)
        assert np.allclose(unmix(rf, p).as_array(), u.as_array(), atol=1e-9)
        assert rf.front[0] == 0.0 and rf.rear[0] == 0.0


def test_mixer_splits_hover_evenly():
    p = VehicleParams()
    rf = mix(ControlInput(p.hover_thrust, ZERO), p)
    assert np.allclose(rf.front, rf.rear)
    assert np.isclose(-rf.front[2], p.hover_thrust / 2)


def test_dryden_stationary_variance():
    params = DrydenParams(W0=10.0)
    a, b = dryden_coefficients(params, 0.02)
    assert np.allclose(b**2 / (1 - a**2), params.intensities() ** 2)
    assert np.isclose(params.intensities()[2], 1.0)
    rng = np.random.default_rng(0)
    w = WindState(ZERO, ZERO, params)
    samples = []
    for k in range(60000):
        w = dryden_step(w, 0.05, rng)
        if k > 2000:
            samples.append(w.gust)
    std = np.std(samples, axis=0)
    assert np.allclose(std, params.intensities(), rtol=0.2)


def test_dryden_zero_wind_is_calm(rng):
    w = WindState([1.0, 2.0, 0.0], ZERO, DrydenParams(W0=0.0))
    for _ in range(10):
        w = dryden_step(w, 0.02, rng)
    assert np.array_equal(w.total, np.array([1.0, 2.0, 0.0]))
    with pytest.raises(ValueError):
        dryden_step(w, 0.0, rng)


def test_body_torque_examples(rng):
    from tandem_mpc.vehicle import body_torque
    z = np.zeros((3, 3))
    x = VehicleState.from_parts(random_dcm(rng), rng.standard_normal(3), ZERO, rng.standard_normal(3))
    u = ControlInput(100.0, [1.0, 2.0, 3.0])
    p = VehicleParams(drag_torque_E=z, drag_torque_F=z)
    assert np.array_equal(body_torque(x, u, ZERO, p), u.torque_nm)
    p = VehicleParams(drag_torque_E=z, drag_torque_F=np.eye(3))
    spin = VehicleState.from_parts(np.eye(3), ZERO, ZERO, [1.0, 0.0, 0.0])
    assert np.allclose(body_torque(spin, ControlInput(0.0, ZERO), ZERO, p), [-1.0, 0.0, 0.0])


def test_ballistic_motion():
    p = torque_free_params()
    p = VehicleParams(drag_force=p.drag_force, drag_torque_E=p.drag_torque_E,
                      drag_torque_F=p.drag_torque_F)
    v0 = np.array([1.0, 0.0, -2.0])
    x = VehicleState.from_parts(np.eye(3), v0, ZERO, ZERO)
    x = propagate(x, ControlInput(0.0, ZERO), ZERO, p, 1.0, substeps=50)
    g = p.gravity * np.array([0.0, 0.0, 1.0])
    assert np.allclose(x.v, v0 + g, atol=1e-8)
    assert np.allclose(x.r, v0 + 0.5 * g, atol=1e-8)


def test_spin_about_principal_axis_is_steady():
    p = torque_free_params()
    x = VehicleState.from_parts(np.eye(3), ZERO, ZERO, [0.0, 0.0, 1.0])
    d = dynamics_deriv(x, ControlInput(0.0, ZERO), ZERO, p)
    assert np.allclose(d.omega_dot, 0.0)


def test_momentum_conserved_over_ten_seconds():
    p = torque_free_params()
    x0 = spinning_body()
    x = x0
    for _ in range(500):
        x = step_rk4(x, ControlInput(0.0, ZERO), ZERO, p, 0.02)
        assert np.allclose(x.C.T @ x.C, np.eye(3), atol=1e-9)
    assert np.allclose(x0.C @ p.inertia @ x0.omega, x.C @ p.inertia @ x.omega, atol=1e-6)


def test_mixer_pitch_torque():
    p = VehicleParams()
    m2 = 120.0
    rf = mix(ControlInput(0.0, [0.0, m2, 0.0]), p)
    assert np.isclose(rf.front[2], -rf.rear[2])
    assert np.isclose(abs(rf.front[2]), m2 / (2 * p.rotor_arm_m))


def test_dryden_is_reproducible():
    w0 = WindState(ZERO, ZERO, DrydenParams())
    seqs = []
    for _ in range(2):
        rng = np.random.default_rng(7)
        w = w0
        out = []
        for _ in range(50):
            w = dryden_step(w, 0.02, rng)
            out.append(w.gust)
        seqs.append(np.array(out))
    assert np.array_equal(seqs[0], seqs[1])
