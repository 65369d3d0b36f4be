import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrostart.errors import InvalidSurface, ValidationError
from hydrostart.sim import (
    STANDARD_STARTUP, GovernorConfig, GovernorState, Phase, PlantPhysics, SimContext,
    StartupParams, TorqueSurface, dynamics_rhs, integrate_held, load_surface_csv,
    save_surface_csv, setpoint_phase_step, simulate, simulate_startup, synthetic_surface,
    torque_lookup,
)

from oracles import scalar_rk4, two_stage_interp

CTX = SimContext()
SLOW = StartupParams(0.01, 0.15, 0.80, 0.15)

box_theta = st.builds(
    StartupParams,
    st.floats(0.01, 0.10), st.floats(0.0, 0.34), st.floats(0.0, 0.95), st.floats(0.0, 0.21),
)


# ---------------------------------------------------------------- parameters

@pytest.mark.parametrize("values", [(-0.1, 0.2, 0.9, 0.1), (0.1, 1.2, 0.9, 0.1),
                                    (0.1, 0.2, 1.5, 0.1), (0.1, 0.2, 0.9, float("nan"))])
def test_startup_params_rejects_out_of_range(values):
    with pytest.raises(ValidationError):
        StartupParams(*values)


def test_governor_config_validation():
    with pytest.raises(ValidationError):
        GovernorConfig(servo_time_constant=0.0)
    with pytest.raises(ValidationError):
        GovernorConfig(sync_hold=0.01, f_D=10.0)
    assert GovernorConfig().dt == pytest.approx(0.1)


# ---------------------------------------------------------------- governor

def test_ramp_step_adds_rate_times_dt():
    s = setpoint_phase_step(GovernorState(), StartupParams(0.10, 0.24, 0.97, 0.15), 0.0, 0.1)
    assert s.phase == Phase.RAMP_UP
    assert s.u == pytest.approx(0.01, abs=1e-15)


def test_plateau1_steps_to_trigger_opening():
    state = GovernorState(phase=Phase.PLATEAU1, u=0.24)
    s = setpoint_phase_step(state, STANDARD_STARTUP, 0.97, 0.1)
    assert s.phase == Phase.PLATEAU2
    assert s.u == 0.15


def test_plateau2_hands_over_to_feedback_at_sync_speed():
    theta = StartupParams(0.1, 0.24, 0.97, 0.21)
    s = setpoint_phase_step(GovernorState(phase=Phase.PLATEAU2, u=0.21), theta, 1.0, 0.1)
    assert s.phase == Phase.FEEDBACK
    assert s.u == 0.21


def test_ramp_clamps_at_initial_opening():
    s = GovernorState()
    theta = StartupParams(0.10, 0.24, 0.97, 0.15)
    for _ in range(30):
        s = setpoint_phase_step(s, theta, 0.0, 0.1)
    assert s.u == 0.24
    assert s.phase == Phase.PLATEAU1


def test_nonpositive_dt_rejected():
    with pytest.raises(ValidationError):
        setpoint_phase_step(GovernorState(), STANDARD_STARTUP, 0.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(box_theta, st.lists(st.floats(0.0, 1.3), min_size=1, max_size=200))
def test_phases_monotone_and_setpoint_bounded(theta, speeds):
    s = GovernorState()
    prev = s.phase
    for w in sorted(speeds):
        s = setpoint_phase_step(s, theta, w, 0.1)
        assert s.phase >= prev
        assert 0.0 <= s.u <= 1.0
        prev = s.phase


# ---------------------------------------------------------------- torque surface

def test_node_values_are_exact():
    surf = synthetic_surface()
    for i in (0, 3, 24):
        for j in (0, 7, 24):
            assert torque_lookup(surf, surf.omega_grid[i], surf.o_grid[j]) == surf.torque[i, j]


def test_cell_center_is_corner_mean():
    surf = TorqueSurface(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([[0.0, 0.0], [0.0, 4.0]]))
    assert torque_lookup(surf, 0.5, 0.5) == 1.0


def test_random_surface_matches_two_stage_oracle():
    rng = np.random.default_rng(5)
    wg = np.sort(rng.uniform(0, 1.5, 5))
    og = np.sort(rng.uniform(0, 1, 5))
    tq = rng.normal(size=(5, 5))
    surf = TorqueSurface(wg, og, tq)
    for w, o in rng.uniform([-0.1, -0.1], [1.6, 1.1], size=(100, 2)):
        assert torque_lookup(surf, w, o) == pytest.approx(two_stage_interp(wg, og, tq, w, o), abs=1e-12)


@pytest.mark.parametrize("wg, og, tq", [
    ([0.0, 0.0, 1.0], [0.0, 1.0], np.zeros((3, 2))),
    ([0.0, 1.0], [1.0, 0.5], np.zeros((2, 2))),
    ([0.0, 1.0], [0.0, 1.0], np.zeros((3, 2))),
    ([0.0, 1.0], [0.0, 1.0], np.array([[0.0, np.nan], [0.0, 0.0]])),
])
def test_invalid_surface(wg, og, tq):
    with pytest.raises(InvalidSurface):
        TorqueSurface(np.array(wg), np.array(og), np.asarray(tq))


def test_synthetic_surface_is_physical():
    problems = synthetic_surface().check_physical()
    # openings above ~0.77 settle beyond the grid; nothing else may be flagged
    assert problems
    for msg in problems:
        assert msg.startswith("no equilibrium speed at opening")
        assert float(msg.rsplit(" ", 1)[1]) > 0.77
    wg = np.linspace(0, 3.3, 25)
    og = np.linspace(0, 0.7, 15)
    W, O = np.meshgrid(wg, og, indexing="ij")
    assert TorqueSurface(wg, og, O * (1 + 0.5 * O) - 0.3029 * W * (0.3 + O)).check_physical() == []


def test_check_physical_flags_violations():
    wg, og = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    bad = TorqueSurface(wg, og, np.array([[0.0, 1.0], [1.0, -1.0]]))
    msgs = bad.check_physical()
    assert any("increases with speed" in m for m in msgs)
    assert any("decreases with opening" in m for m in msgs)


def test_surface_csv_roundtrip(tmp_path):
    surf = synthetic_surface(n_omega=6, n_o=4)
    save_surface_csv(surf, tmp_path / "s.csv")
    back = load_surface_csv(tmp_path / "s.csv")
    assert np.array_equal(back.torque, surf.torque)
    assert np.array_equal(back.omega_grid, surf.omega_grid)


def test_surface_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,0,1\n0,1,oops\n1,2,3\n")
    with pytest.raises(InvalidSurface):
        load_surface_csv(p)
    p.write_text("x,0,1\n0,1\n1,2,3\n")
    with pytest.raises(InvalidSurface):
        load_surface_csv(p)


# ---------------------------------------------------------------- right-hand side

def test_rhs_zero_at_equilibrium():
    o = 0.4
    w_eq = o * (1 + 0.5 * o) / (0.3029 * (0.3 + o))
    # the interpolant is exact in omega, so pick the equilibrium of the interpolated surface
    surf = CTX.surface
    lo, hi = 0.0, 3.3
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if torque_lookup(surf, mid, o) > 0 else (lo, mid)
    assert abs(lo - w_eq) < 0.01
    d = dynamics_rhs(np.array([lo, o, o, 0.0]), STANDARD_STARTUP, CTX.physics, surf)
    assert abs(d[0]) < 1e-12
    assert d[1] == 0.0  # servo converged: o == u


def test_rhs_inverse_in_inertia():
    q = np.array([0.3, 0.2, 0.5, 0.0])
    a = dynamics_rhs(q, STANDARD_STARTUP, PlantPhysics(inertia_J=2e6), CTX.surface)
    b = dynamics_rhs(q, STANDARD_STARTUP, PlantPhysics(inertia_J=4e6), CTX.surface)
    assert b[0] == pytest.approx(0.5 * a[0], rel=1e-14)
    assert a[1] == b[1] == pytest.approx(0.10)  # rate-limited servo


# ---------------------------------------------------------------- full startups

def test_zero_opening_times_out():
    traj = simulate(StartupParams(0.05, 0.0, 0.9, 0.0), CTX)
    assert not traj.synchronized and traj.t_st is None
    assert traj.duration == pytest.approx(2 * CTX.physics.T_st)
    assert np.all(traj.omega == 0.0)
    assert traj.startup_time(90.0) == 180.0


def test_standard_startup_timing_and_sync():
    traj = simulate(STANDARD_STARTUP, CTX)
    cfg = CTX.config
    assert traj.synchronized
    assert 50.0 <= traj.t_st <= 60.0
    assert traj.omega[0] == 0.0 and traj.opening[0] == 0.0
    assert abs(traj.omega[-1] - 1.0) <= cfg.sync_speed_tol
    assert traj.t_st == (len(traj) - 1) / cfg.f_D


def test_slow_startup_violates_limit():
    assert simulate(SLOW, CTX).t_st > 90.0


def test_deterministic():
    a, b = simulate(STANDARD_STARTUP, CTX), simulate(STANDARD_STARTUP, CTX)
    assert np.array_equal(a.omega, b.omega) and np.array_equal(a.opening, b.opening)
    assert a.t_st == b.t_st


@settings(max_examples=40, deadline=None)
@given(box_theta)
def test_opening_bounded_and_rate_limited(theta):
    traj = simulate(theta, CTX)
    cfg = CTX.config
    assert np.all((traj.opening >= 0) & (traj.opening <= 1))
    assert np.all(np.abs(np.diff(traj.opening)) <= cfg.servo_rate_limit * cfg.dt + 1e-12)


@settings(max_examples=40, deadline=None)
@given(box_theta)
def test_speed_rises_while_torque_is_driving(theta):
    traj = simulate(theta, CTX)
    before_feedback = np.argmax(traj.omega >= 1.0) if np.any(traj.omega >= 1.0) else len(traj) - 1
    for n in range(before_feedback):
        # opening moves monotonically within a step, so both ends bound the visited torque
        ends = [torque_lookup(CTX.surface, traj.omega[k], traj.opening[k]) for k in (n, n + 1)]
        if min(ends) >= 0:
            assert traj.omega[n + 1] >= traj.omega[n] - 1e-9


def test_more_initial_opening_is_not_slower():
    for w_trig in (0.5, 0.8, 0.95):
        times = []
        for o_ini in np.linspace(0.1, 0.34, 7):
            traj = simulate(StartupParams(0.05, o_ini, w_trig, 0.15), CTX)
            times.append(traj.startup_time(90.0))
        assert all(b <= a for a, b in zip(times, times[1:])), times


def test_dt_override_only_changes_step():
    a = simulate_startup(STANDARD_STARTUP, CTX.config, CTX.physics, CTX.surface, dt=0.05)
    assert a.f_D == pytest.approx(20.0)
    assert a.synchronized


# ---------------------------------------------------------------- integrator order

def _halving_factors(errs):
    return [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]


def test_rk4_order_on_plateau_segment():
    # servo in its linear range and the opening inside one surface cell: smooth dynamics
    def end(h):
        w, _ = integrate_held(0.24, 0.3, 0.235, 10.0, h, CTX)
        return w[-1]

    ref = end(0.1 / 64)
    errs = [abs(end(h) - ref) for h in (0.4, 0.2, 0.1)]
    for f in _halving_factors(errs):
        assert 12.0 <= f <= 20.0


def test_rk4_order_on_scalar_problem():
    a = 0.5
    wg = np.linspace(0.0, 2.0, 5)
    og = np.linspace(0.0, 1.0, 3)
    W, _ = np.meshgrid(wg, og, indexing="ij")
    phys = PlantPhysics()
    ctx = SimContext(surface=TorqueSurface(wg, og, a * (1 - W) / phys.inv_inertia), physics=phys)
    exact = 1.0 - math.exp(-a * 10.0)
    errs = []
    for h in (1.0, 0.5, 0.25, 0.125):
        w, _ = integrate_held(0.5, 0.0, 0.5, 10.0, h, ctx)
        errs.append(abs(w[-1] - exact))
        assert w[-1] == pytest.approx(scalar_rk4(a, 0.0, 10.0, h), abs=1e-13)
    for f in _halving_factors(errs):
        assert 12.0 <= f <= 20.0


def test_integrate_held_rejects_fractional_duration():
    with pytest.raises(ValidationError):
        integrate_held(0.2, 0.0, 0.0, 1.05, 0.1, CTX)
