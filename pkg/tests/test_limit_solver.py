import numpy as np
import pytest
from hypothesis import given, strategies as st

from thinshell.calculus import tangential_gradient
from thinshell.errors import CFLViolation, ConfigError, NonpositiveWeight
from thinshell.helmholtz import project_weighted_solenoidal
from thinshell.limit_solver import (LimitConfig, LimitSolver, form_a_g, form_b_g,
                                    killing_basis, killing_mode_monitor, pressure_recover,
                                    rotation_field, solve, step)
from thinshell.surface import Surface
from thinshell.thin_shell import random_tangent_field


def gfun(y):
    return 1.0 + 0.3 * y[..., 2]


def scaled_field(surface, seed, amp=0.2):
    v = random_tangent_field(surface, np.random.default_rng(seed))
    return v * (amp / np.abs(v).max())


@given(seed=st.integers(0, 1000))
def test_a_g_symmetric_and_positive(seed, sphere32):
    rng = np.random.default_rng(seed)
    v1 = random_tangent_field(sphere32, rng)
    v2 = random_tangent_field(sphere32, rng)
    a12 = form_a_g(sphere32, gfun, v1, v2, 0.1, 0.5, 0.5)
    a21 = form_a_g(sphere32, gfun, v2, v1, 0.1, 0.5, 0.5)
    assert a12 == pytest.approx(a21, rel=1e-12, abs=1e-14)
    assert form_a_g(sphere32, gfun, v1, v1, 0.1, 0.0, 0.0) >= 0.0


def test_a_g_vanishes_on_killing(sphere):
    w = rotation_field(sphere)
    assert abs(form_a_g(sphere, gfun, w, w, 1.0)) < 1e-10 * sphere.inner(w, w)


def test_b_g_skew_on_solenoidal(sphere, rng):
    g = gfun(sphere.y)
    v1 = project_weighted_solenoidal(sphere, g, random_tangent_field(sphere, rng)).solenoidal
    v2 = random_tangent_field(sphere, rng)
    v3 = random_tangent_field(sphere, rng)
    b = form_b_g(sphere, g, v1, v2, v3)
    scale = sphere.norm(v1) * sphere.norm(v2) * sphere.norm(v3)
    assert abs(b + form_b_g(sphere, g, v1, v3, v2)) < 1e-6 * scale
    assert abs(form_b_g(sphere, g, v1, v1, v1)) < 1e-6 * scale


def test_config_validation(sphere32):
    v0 = np.zeros(sphere32.shape + (3,))
    for bad in (dict(nu=0.0), dict(gamma0=-1.0), dict(dt=0.0), dict(T=-1.0),
                dict(scheme="rk4"), dict(output_every=0)):
        with pytest.raises(ConfigError):
            LimitSolver(LimitConfig(sphere32, v0, **bad))
    with pytest.raises(NonpositiveWeight):
        LimitSolver(LimitConfig(sphere32, v0, g=lambda y: y[..., 2]))


def test_zero_state_stays_zero(sphere32):
    traj = solve(LimitConfig(sphere32, np.zeros(sphere32.shape + (3,)), dt=0.01, T=0.05))
    assert all(not np.any(s.v) for s in traj.states)
    assert np.all(traj.column("energy") == 0.0)


def test_T_zero_returns_initial_state(sphere32):
    v0 = rotation_field(sphere32)
    traj = solve(LimitConfig(sphere32, v0, T=0.0))
    assert len(traj.states) == 1
    assert sphere32.norm(traj.states[0].v - v0) < 1e-12


def test_cfl_violation(sphere32):
    with pytest.raises(CFLViolation):
        solve(LimitConfig(sphere32, 50 * rotation_field(sphere32), dt=0.1, T=0.1))


def test_killing_field_is_steady(sphere32):
    v0 = rotation_field(sphere32)
    cfg = LimitConfig(sphere32, v0, dt=0.002, T=0.02)
    traj = solve(cfg)
    drift = max(sphere32.norm(s.v - v0) for s in traj.states) / sphere32.norm(v0)
    assert drift < 1e-10
    st0 = LimitSolver(cfg).initial_state()
    assert sphere32.norm(step(st0, cfg).v - v0) < 1e-10


def test_killing_basis_dimensions(sphere32):
    assert len(killing_basis(sphere32, 1.0)) == 3
    assert len(killing_basis(sphere32, gfun)) == 1
    torus = Surface.torus(3.0, 1.0, 32, 32)
    assert len(killing_basis(torus, 1.0)) == 1
    assert killing_basis(torus, lambda y: 1.0 + 0.1 * y[..., 0]) == []


def test_killing_monitor_amplitude(sphere32):
    basis = killing_basis(sphere32, gfun)
    w = basis[0]
    amp = killing_mode_monitor(sphere32, gfun, 2.5 * w, basis)
    assert amp[0] == pytest.approx(2.5, rel=1e-12)


def test_damped_energy_decreases(sphere32):
    cfg = LimitConfig(sphere32, scaled_field(sphere32, 1), g=gfun, gamma0=1.0, gamma1=1.0,
                      dt=0.01, T=0.3)
    traj = solve(cfg)
    E = traj.column("energy")
    assert np.all(np.diff(E) <= 0)
    assert E[-1] < np.exp(-0.3) * E[0]
    assert traj.column("div_residual").max() < 1e-8


def test_forcing_off_killing_modes(sphere32):
    w = rotation_field(sphere32)
    cfg = LimitConfig(sphere32, np.zeros_like(w), forcing=w, dt=0.01, T=0.01)
    solver = LimitSolver(cfg)
    assert sphere32.norm(solver.forcing(0.0)) < 1e-10
    cfg.project_f_Kg = False
    assert sphere32.norm(LimitSolver(cfg).forcing(0.0) - w) < 1e-12


def _self_convergence(surface, scheme):
    v0 = scaled_field(surface, 3)
    out = []
    for dt in (0.01, 0.005, 0.0025):
        traj = solve(LimitConfig(surface, v0, g=gfun, gamma0=0.5, gamma1=0.5, dt=dt, T=0.2,
                                 scheme=scheme))
        out.append(traj.states[-1].v)
    return np.log2(surface.norm(out[0] - out[1]) / surface.norm(out[1] - out[2]))


def test_time_order():
    s = Surface.sphere(1.0, 24, 24)
    assert _self_convergence(s, "imex-bdf2") > 1.8
    assert _self_convergence(s, "imex-euler") > 0.9


def test_pressure_manufactured(sphere32):
    y = sphere32.y
    qstar = y[..., 0] * y[..., 1] + y[..., 2]
    f = tangential_gradient(sphere32, qstar)
    cfg = LimitConfig(sphere32, np.zeros_like(f), g=gfun, forcing=f, gamma0=1.0)
    solver = LimitSolver(cfg)
    q, info = solver.pressure_recover(solver.initial_state())
    err = q - qstar
    err -= sphere32.integrate(err) / sphere32.area
    assert sphere32.norm(err) < 1e-6 * sphere32.norm(qstar)
    assert info["consistency"] < 1e-6


def test_pressure_of_killing_flow(sphere32):
    v0 = rotation_field(sphere32)
    cfg = LimitConfig(sphere32, v0, dt=0.002, T=0.004)
    traj = solve(cfg)
    q, _ = pressure_recover(traj.states[-1], cfg)
    ref = -0.5 * sphere32.y[..., 2] ** 2
    ref -= sphere32.integrate(ref) / sphere32.area
    assert sphere32.norm(q - ref) < 1e-4 * sphere32.norm(ref)


def test_pressure_of_rest_is_zero(sphere32):
    cfg = LimitConfig(sphere32, np.zeros(sphere32.shape + (3,)))
    solver = LimitSolver(cfg)
    q, _ = solver.pressure_recover(solver.initial_state())
    assert not np.any(q)


def test_b_g_of_killing_field(sphere):
    w = rotation_field(sphere)
    assert abs(form_b_g(sphere, 1.0, w, w, w)) < 1e-10
    assert form_b_g(sphere, 1.0, w, np.zeros_like(w), w) == 0.0


def test_killing_amplitudes_conserved_without_friction(sphere32):
    basis = killing_basis(sphere32, 1.0)
    v0 = scaled_field(sphere32, 4)
    for a, w in zip(killing_mode_monitor(sphere32, 1.0, v0, basis), basis):
        v0 = v0 - a * w
    traj = solve(LimitConfig(sphere32, v0, dt=0.002, T=0.1))
    amps = np.array([[d[f"killing_amp_{k}"] for k in range(3)] for d in traj.diagnostics])
    # the initial projection leaves O(1e-8) discretization content; the run must not add to it
    assert np.abs(amps).max() < 1e-7
    assert np.abs(amps - amps[0]).max() < 1e-9


def test_killing_amplitude_decays_with_friction(sphere32):
    w = rotation_field(sphere32)
    traj = solve(LimitConfig(sphere32, w, gamma0=0.5, gamma1=0.5, dt=0.002, T=0.05))
    amp = np.abs(traj.column("killing_amp_0") + 1j * traj.column("killing_amp_1")
                 + traj.column("killing_amp_2"))
    assert np.all(np.diff(amp) < 0)
    assert amp[-1] / amp[0] == pytest.approx(1.002 ** -25, rel=1e-6)
