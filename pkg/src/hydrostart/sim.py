"""Startup dynamics of a hydro-generating unit.

The speed governor builds the guide-vane setpoint ``u`` from the startup
parameters through four phases, the servomotor makes the opening ``o`` track
``u`` with a lag, and the normalized rotational speed follows the torque
balance ``J dw/dt = T(w, o)`` with ``T`` read off a quasi-static torque
surface. Integration is fixed-step RK4 at the governor sampling period.

The inner loops are numba kernels operating on plain floats and arrays; the
dataclasses and public functions below wrap them.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .errors import InvalidSurface, NonFiniteState, ValidationError

RAMP_UP, PLATEAU1, PLATEAU2, FEEDBACK = 0, 1, 2, 3

# Synchronous speed used only to express torques in physical units.
DEFAULT_OMEGA_S = 2.0 * math.pi * 120.0 / 60.0


class Phase(enum.IntEnum):
    RAMP_UP = RAMP_UP
    PLATEAU1 = PLATEAU1
    PLATEAU2 = PLATEAU2
    FEEDBACK = FEEDBACK


@dataclass(frozen=True)
class StartupParams:
    """Tunable governor parameters of one startup.

    ``r_o`` is in fraction of full opening per second (10 %/s -> 0.10);
    ``omega_trigger`` is a fraction of synchronous speed, openings are
    fractions of full opening.
    """

    r_o: float
    o_ini: float
    omega_trigger: float
    o_trigger: float

    def __post_init__(self) -> None:
        values = self.as_tuple()
        if not all(math.isfinite(v) and v >= 0.0 for v in values):
            raise ValidationError(f"startup parameters must be finite and >= 0, got {values}")
        if self.o_ini > 1.0 or self.o_trigger > 1.0 or self.omega_trigger > 1.0:
            raise ValidationError(f"openings and trigger speed must be <= 1, got {values}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.r_o, self.o_ini, self.omega_trigger, self.o_trigger)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=float)

    @classmethod
    def from_sequence(cls, values) -> "StartupParams":
        r_o, o_ini, omega_trigger, o_trigger = (float(v) for v in values)
        return cls(r_o, o_ini, omega_trigger, o_trigger)

    def to_dict(self) -> dict[str, float]:
        return {
            "r_o": self.r_o,
            "o_ini": self.o_ini,
            "omega_trigger": self.omega_trigger,
            "o_trigger": self.o_trigger,
        }


STANDARD_STARTUP = StartupParams(0.10, 0.24, 0.97, 0.15)


@dataclass(frozen=True)
class GovernorConfig:
    servo_time_constant: float = 1.5
    servo_rate_limit: float = 0.10
    pid_gains: tuple[float, float, float] = (2.0, 0.5, 0.0)
    sync_speed_tol: float = 0.005
    sync_accel_tol: float = 0.002
    sync_hold: float = 2.0
    f_D: float = 10.0

    def __post_init__(self) -> None:
        scalars = (
            self.servo_time_constant,
            self.servo_rate_limit,
            self.sync_speed_tol,
            self.sync_accel_tol,
            self.sync_hold,
            self.f_D,
        )
        if not all(math.isfinite(v) and v > 0 for v in scalars):
            raise ValidationError("governor settings must be finite and positive")
        kp, ki, kd = self.pid_gains
        if min(kp, ki) <= 0 or kd < 0:
            # kd = 0 is the documented default, so only kp and ki must be > 0
            raise ValidationError(f"invalid PID gains {self.pid_gains}")
        if self.sync_hold < 1.0 / self.f_D - 1e-12:
            raise ValidationError("sync_hold must cover at least one governor period")

    @property
    def dt(self) -> float:
        return 1.0 / self.f_D


@dataclass(frozen=True)
class GovernorState:
    """Discrete governor state; ``u_bias`` and ``prev_omega`` are PID internals."""

    phase: Phase = Phase.RAMP_UP
    u: float = 0.0
    pid_integrator: float = 0.0
    hold_timer: float = 0.0
    u_bias: float = 0.0
    prev_omega: float = 0.0


@dataclass(frozen=True)
class PlantPhysics:
    inertia_J: float = 2.0e6
    omega_S: float = DEFAULT_OMEGA_S
    T_st: float = 90.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) and v > 0 for v in (self.inertia_J, self.omega_S, self.T_st)):
            raise ValidationError("inertia, synchronous speed and T_st must be positive")

    @property
    def inv_inertia(self) -> float:
        """Converts torque (N.m) into normalized acceleration (1/s)."""
        return 1.0 / (self.inertia_J * self.omega_S)


@dataclass(frozen=True, eq=False)
class TorqueSurface:
    omega_grid: np.ndarray
    o_grid: np.ndarray
    torque: np.ndarray

    def __post_init__(self) -> None:
        wg = np.ascontiguousarray(self.omega_grid, dtype=float)
        og = np.ascontiguousarray(self.o_grid, dtype=float)
        tq = np.ascontiguousarray(self.torque, dtype=float)
        if wg.ndim != 1 or og.ndim != 1 or wg.size < 2 or og.size < 2:
            raise InvalidSurface("grids must be 1-D with at least two nodes")
        if np.any(np.diff(wg) <= 0) or np.any(np.diff(og) <= 0):
            raise InvalidSurface("grids must be strictly increasing")
        if tq.shape != (wg.size, og.size):
            raise InvalidSurface(f"torque shape {tq.shape} does not match grids ({wg.size}, {og.size})")
        if not (np.all(np.isfinite(wg)) and np.all(np.isfinite(og)) and np.all(np.isfinite(tq))):
            raise InvalidSurface("surface contains non-finite values")
        object.__setattr__(self, "omega_grid", wg)
        object.__setattr__(self, "o_grid", og)
        object.__setattr__(self, "torque", tq)

    def check_physical(self) -> list[str]:
        """Return violations of the monotonicity/equilibrium expectations (empty if none)."""
        problems = []
        if np.any(np.diff(self.torque, axis=0) > 1e-9 * np.abs(self.torque).max()):
            problems.append("torque increases with speed at some opening")
        if np.any(np.diff(self.torque, axis=1) < -1e-9 * np.abs(self.torque).max()):
            problems.append("torque decreases with opening at some speed")
        for j, o in enumerate(self.o_grid):
            col = self.torque[:, j]
            if o > 0 and not (col.max() > 0 and col.min() < 0):
                problems.append(f"no equilibrium speed at opening {o:g}")
        return problems


@dataclass(frozen=True, eq=False)
class SimContext:
    """Everything besides the startup parameters needed to simulate a startup."""

    config: GovernorConfig = field(default_factory=GovernorConfig)
    physics: PlantPhysics = field(default_factory=PlantPhysics)
    surface: TorqueSurface = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.surface is None:
            object.__setattr__(self, "surface", synthetic_surface())

    def with_T_st(self, T_st: float) -> "SimContext":
        return replace(self, physics=replace(self.physics, T_st=T_st))


@dataclass(frozen=True, eq=False)
class DynamicTrajectory:
    """Speed/opening samples at ``f_D``; ``t_st`` is None on timeout."""

    omega: np.ndarray
    opening: np.ndarray
    setpoint: np.ndarray
    f_D: float
    t_st: float | None
    synchronized: bool

    def __len__(self) -> int:
        return self.omega.size

    @property
    def duration(self) -> float:
        return (self.omega.size - 1) / self.f_D

    def startup_time(self, T_st: float) -> float:
        """Startup time with timeouts mapped to ``2 T_st``."""
        return self.t_st if self.synchronized else 2.0 * T_st


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _cell(grid, x):
    i = np.searchsorted(grid, x, side="right") - 1
    if i < 0:
        i = 0
    elif i > grid.size - 2:
        i = grid.size - 2
    return i


@njit(cache=True)
def _bilinear(wg, og, tq, w, o):
    w = min(max(w, wg[0]), wg[-1])
    o = min(max(o, og[0]), og[-1])
    i = _cell(wg, w)
    j = _cell(og, o)
    tx = (w - wg[i]) / (wg[i + 1] - wg[i])
    ty = (o - og[j]) / (og[j + 1] - og[j])
    return ((1.0 - tx) * (1.0 - ty) * tq[i, j] + tx * (1.0 - ty) * tq[i + 1, j]
            + (1.0 - tx) * ty * tq[i, j + 1] + tx * ty * tq[i + 1, j + 1])


@njit(cache=True)
def _servo_rate(u, o, tau, rate):
    v = (u - o) / tau
    if v > rate:
        return rate
    if v < -rate:
        return -rate
    return v


@njit(cache=True)
def _rk4_step(w, o, u, h, tau, rate, wg, og, tq, inv_j):
    # u is held constant over the step (sampled governor output)
    k1w = _bilinear(wg, og, tq, w, o) * inv_j
    k1o = _servo_rate(u, o, tau, rate)
    w2 = w + 0.5 * h * k1w
    o2 = o + 0.5 * h * k1o
    k2w = _bilinear(wg, og, tq, w2, o2) * inv_j
    k2o = _servo_rate(u, o2, tau, rate)
    w3 = w + 0.5 * h * k2w
    o3 = o + 0.5 * h * k2o
    k3w = _bilinear(wg, og, tq, w3, o3) * inv_j
    k3o = _servo_rate(u, o3, tau, rate)
    w4 = w + h * k3w
    o4 = o + h * k3o
    k4w = _bilinear(wg, og, tq, w4, o4) * inv_j
    k4o = _servo_rate(u, o4, tau, rate)
    w_new = w + h * (k1w + 2.0 * k2w + 2.0 * k3w + k4w) / 6.0
    o_new = o + h * (k1o + 2.0 * k2o + 2.0 * k3o + k4o) / 6.0
    return w_new, min(max(o_new, 0.0), 1.0)


@njit(cache=True)
def _governor_step(phase, u, integ, u_bias, prev_w,
                   r_o, o_ini, w_trig, o_trig, kp, ki, kd, w, dt):
    if phase == RAMP_UP:
        u = min(u + r_o * dt, o_ini)
        if u >= o_ini:
            phase = PLATEAU1
    elif phase == PLATEAU1:
        u = o_ini
        if w >= w_trig:
            phase = PLATEAU2
            u = o_trig
    elif phase == PLATEAU2:
        u = o_trig
        if w >= 1.0:
            phase = FEEDBACK
            u_bias = u
            integ = 0.0
            prev_w = w
    else:
        e = 1.0 - w
        new_integ = integ + e * dt
        raw = u_bias + kp * e + ki * new_integ - kd * (w - prev_w) / dt
        if raw > 1.0:
            raw = 1.0
            if e > 0.0:
                new_integ = integ
        elif raw < 0.0:
            raw = 0.0
            if e < 0.0:
                new_integ = integ
        u = raw
        integ = new_integ
        prev_w = w
    return phase, u, integ, u_bias, prev_w


@njit(cache=True)
def _simulate(r_o, o_ini, w_trig, o_trig, tau, rate, kp, ki, kd,
              tol_w, tol_a, hold_steps, dt, n_max, wg, og, tq, inv_j):
    omega = np.empty(n_max + 1)
    opening = np.empty(n_max + 1)
    setpoint = np.empty(n_max + 1)
    w = 0.0
    o = 0.0
    phase = RAMP_UP
    u = 0.0
    integ = 0.0
    u_bias = 0.0
    prev_w = 0.0
    omega[0] = w
    opening[0] = o
    setpoint[0] = u
    hold_start = -1
    for n in range(n_max):
        phase, u, integ, u_bias, prev_w = _governor_step(
            phase, u, integ, u_bias, prev_w, r_o, o_ini, w_trig, o_trig, kp, ki, kd, w, dt)
        setpoint[n] = u
        w, o = _rk4_step(w, o, u, dt, tau, rate, wg, og, tq, inv_j)
        if not (np.isfinite(w) and np.isfinite(o)):
            return omega, opening, setpoint, n + 1, -1, 2
        omega[n + 1] = w
        opening[n + 1] = o
        setpoint[n + 1] = u
        if phase == FEEDBACK:
            acc = _bilinear(wg, og, tq, w, o) * inv_j
            if abs(w - 1.0) <= tol_w and abs(acc) <= tol_a:
                if hold_start < 0:
                    hold_start = n + 1
                if n + 1 - hold_start >= hold_steps:
                    return omega, opening, setpoint, n + 2, hold_start, 1
            else:
                hold_start = -1
    return omega, opening, setpoint, n_max + 1, -1, 0


# --------------------------------------------------------------------------
# public API


def torque_lookup(surface: TorqueSurface, omega: float, o: float) -> float:
    """Bilinear interpolation of the net torque; queries are clamped to the grid box."""
    return float(_bilinear(surface.omega_grid, surface.o_grid, surface.torque, float(omega), float(o)))


def setpoint_phase_step(state: GovernorState, params: StartupParams, omega: float, dt: float,
                        config: GovernorConfig | None = None) -> GovernorState:
    """Advance the governor by one sample period ``dt`` given the measured speed."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    kp, ki, kd = (config or GovernorConfig()).pid_gains
    phase, u, integ, u_bias, prev_w = _governor_step(
        int(state.phase), state.u, state.pid_integrator, state.u_bias, state.prev_omega,
        params.r_o, params.o_ini, params.omega_trigger, params.o_trigger,
        kp, ki, kd, float(omega), float(dt))
    return replace(state, phase=Phase(phase), u=u, pid_integrator=integ,
                   u_bias=u_bias, prev_omega=prev_w)


def dynamics_rhs(q, params: StartupParams, physics: PlantPhysics, surface: TorqueSurface,
                 config: GovernorConfig | None = None) -> np.ndarray:
    """Time derivative of ``q = (omega, o, u, pid_integrator)`` within one governor period.

    The governor is sampled, so ``u`` is held between updates (``du/dt = 0``)
    and the integrator only moves at governor updates as well.
    """
    cfg = config or GovernorConfig()
    w, o, u = float(q[0]), float(q[1]), float(q[2])
    dw = torque_lookup(surface, w, o) * physics.inv_inertia
    do = _servo_rate(u, o, cfg.servo_time_constant, cfg.servo_rate_limit)
    out = np.zeros(len(q))
    out[0] = dw
    out[1] = do
    return out


def rk4_step(f, t: float, y, h: float):
    """Classical fourth-order Runge-Kutta step for ``dy/dt = f(t, y)``."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def integrate_held(u: float, omega0: float, o0: float, duration: float, dt: float,
                   ctx: SimContext) -> tuple[np.ndarray, np.ndarray]:
    """Integrate speed and opening with the setpoint frozen at ``u``.

    Uses the same RK4 kernel as :func:`simulate_startup`; a plateau phase is
    exactly this problem, which makes it the natural subject of step-halving
    studies.
    """
    n = int(round(duration / dt))
    if abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValidationError("duration must be a multiple of dt")
    cfg, s = ctx.config, ctx.surface
    w, o = float(omega0), float(o0)
    ws = np.empty(n + 1)
    os_ = np.empty(n + 1)
    ws[0], os_[0] = w, o
    for k in range(n):
        w, o = _rk4_step(w, o, float(u), dt, cfg.servo_time_constant, cfg.servo_rate_limit,
                         s.omega_grid, s.o_grid, s.torque, ctx.physics.inv_inertia)
        ws[k + 1], os_[k + 1] = w, o
    return ws, os_


def simulate_startup(params: StartupParams, config: GovernorConfig, physics: PlantPhysics,
                     surface: TorqueSurface, dt: float | None = None) -> DynamicTrajectory:
    """Simulate one startup from standstill.

    Stops once speed and acceleration have stayed within the synchronization
    tolerances for ``config.sync_hold`` seconds (``t_st`` is when the hold
    began and samples are truncated there), or at ``2 * T_st``.

    ``dt`` overrides the integration step (default ``1 / f_D``); it is only
    meant for convergence studies.
    """
    step = config.dt if dt is None else float(dt)
    rate = 1.0 / step
    n_max = int(round(2.0 * physics.T_st / step))
    hold_steps = int(math.ceil(config.sync_hold / step - 1e-9))
    kp, ki, kd = config.pid_gains
    omega, opening, setpoint, n_end, n_st, status = _simulate(
        params.r_o, params.o_ini, params.omega_trigger, params.o_trigger,
        config.servo_time_constant, config.servo_rate_limit, kp, ki, kd,
        config.sync_speed_tol, config.sync_accel_tol, hold_steps, step, n_max,
        surface.omega_grid, surface.o_grid, surface.torque, physics.inv_inertia)
    if status == 2:
        raise NonFiniteState(f"state became non-finite at t = {(n_end - 1) * step:.3f} s")
    if status == 1:
        stop = n_st + 1
        return DynamicTrajectory(omega[:stop].copy(), opening[:stop].copy(), setpoint[:stop].copy(),
                                 rate, n_st / rate, True)
    return DynamicTrajectory(omega[:n_end].copy(), opening[:n_end].copy(), setpoint[:n_end].copy(),
                             rate, None, False)


def simulate(params: StartupParams, ctx: SimContext) -> DynamicTrajectory:
    return simulate_startup(params, ctx.config, ctx.physics, ctx.surface)


# --------------------------------------------------------------------------
# torque surfaces

# Calibrated so that the standard startup synchronizes in the mid-50 s range
# and the slow/low startup overruns a 90 s limit.
SURFACE_T_REF = 3.9e6
SURFACE_K = 0.3029


def synthetic_surface(t_ref: float = SURFACE_T_REF, k: float = SURFACE_K, n_omega: int = 25,
                      n_o: int = 25, omega_max: float = 3.3) -> TorqueSurface:
    """Hill-chart stand-in ``T = t_ref * (o (1 + o/2) - k w (0.3 + o))`` on a regular grid.

    Torque falls with speed, and rises with opening as long as ``w < (1 + o)/k``,
    which ``omega_max = 3.3`` respects. The equilibrium speed
    ``o (1 + o/2) / (k (0.3 + o))`` lies on the grid for openings up to about
    0.77. At zero opening the runner is braked in proportion to speed. The
    form is linear in speed, so the grid extent does not change trajectories.
    """
    wg = np.linspace(0.0, omega_max, n_omega)
    og = np.linspace(0.0, 1.0, n_o)
    W, O = np.meshgrid(wg, og, indexing="ij")
    torque = t_ref * (O * (1.0 + 0.5 * O) - k * W * (0.3 + O))
    return TorqueSurface(wg, og, torque)


def load_surface_csv(path: str | Path) -> TorqueSurface:
    """Read a surface file: header row of openings, first column of speeds."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 3:
        raise InvalidSurface(f"{path}: need a header row and at least two speed rows")
    try:
        o_grid = [float(c) for c in rows[0][1:]]
        omega_grid = [float(r[0]) for r in rows[1:]]
        torque = [[float(c) for c in r[1:]] for r in rows[1:]]
    except ValueError as exc:
        raise InvalidSurface(f"{path}: non-numeric entry ({exc})") from None
    if any(len(r) != len(o_grid) for r in torque):
        raise InvalidSurface(f"{path}: ragged rows")
    return TorqueSurface(np.array(omega_grid), np.array(o_grid), np.array(torque))


def save_surface_csv(surface: TorqueSurface, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["omega\\opening", *(repr(float(o)) for o in surface.o_grid)])
        for w, row in zip(surface.omega_grid, surface.torque):
            writer.writerow([repr(float(w)), *(repr(float(v)) for v in row)])
