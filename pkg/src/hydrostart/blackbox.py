"""Black-box cost of a candidate startup.

The black box chains the dynamics simulator, the virtual sensor and a cost
evaluator: simulate the speed/opening trajectory, predict the strain envelope
along it and score the predicted largest cycle plus a startup-time penalty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .envelope import EnvelopedTrajectory, MeasuredTrajectory
from .errors import DegenerateDataset, EmptyDataset, EmptySignal, ValidationError
from .sensor import SensorEnsemble, predict
from .sim import DynamicTrajectory, SimContext, StartupParams, simulate

STANDARD = "standard"
ACTIVE = "active"
MODES = (STANDARD, ACTIVE)

PARAM_LIMITS = {
    "r_o": (0.01, 0.10),
    "o_ini": (0.0, 0.34),
    "omega_trigger": (0.0, 0.95),
    "o_trigger": (0.0, 0.21),
}


@dataclass(frozen=True)
class OptBox:
    """Hard actuator limits on the startup parameters, one ``(min, max)`` per axis."""

    lower: tuple[float, ...] = tuple(lo for lo, _ in PARAM_LIMITS.values())
    upper: tuple[float, ...] = tuple(hi for _, hi in PARAM_LIMITS.values())

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != 4 or len(hi) != 4:
            raise ValidationError("the box needs bounds for the four startup parameters")
        if not all(math.isfinite(a) and math.isfinite(b) and a < b for a, b in zip(lo, hi)):
            raise ValidationError(f"box bounds must satisfy min < max, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    def contains(self, theta: StartupParams, tol: float = 1e-12) -> bool:
        x = theta.as_array()
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def clip(self, theta: StartupParams) -> StartupParams:
        return StartupParams.from_sequence(np.clip(theta.as_array(), self.lo, self.hi))

    def center(self) -> StartupParams:
        return StartupParams.from_sequence(0.5 * (self.lo + self.hi))

    def to_unit(self, theta: StartupParams) -> np.ndarray:
        return (theta.as_array() - self.lo) / (self.hi - self.lo)

    def from_unit(self, z) -> StartupParams:
        z = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
        return StartupParams.from_sequence(self.lo + z * (self.hi - self.lo))


@dataclass(frozen=True, eq=False)
class SimulatedTrajectory:
    """Predicted strain envelope along a simulated startup, sampled at ``f_S``."""

    omega: np.ndarray
    opening: np.ndarray
    mu_u: np.ndarray
    sigma_u: np.ndarray
    mu_l: np.ndarray
    sigma_l: np.ndarray
    sigma_ep_u: np.ndarray
    sigma_ep_l: np.ndarray
    f_S: float
    t_st: float

    def __len__(self) -> int:
        return self.mu_u.size

    @property
    def sum_u(self) -> np.ndarray:
        # mean of the member sums equals the sum of the member means
        return self.mu_u + self.sigma_u

    @property
    def sum_l(self) -> np.ndarray:
        return self.mu_l + self.sigma_l

    @classmethod
    def from_arrays(cls, mu_u, sigma_u, mu_l, sigma_l, sigma_ep_u=None, sigma_ep_l=None,
                    omega=None, opening=None, f_S: float = 10.0) -> "SimulatedTrajectory":
        """Build a trajectory from raw prediction columns (handy for tests and reports)."""
        cols = [np.atleast_1d(np.asarray(a, dtype=float)) for a in (mu_u, sigma_u, mu_l, sigma_l)]
        n = cols[0].size
        zeros = np.zeros(n)
        ep_u = zeros if sigma_ep_u is None else np.broadcast_to(np.asarray(sigma_ep_u, float), (n,)).copy()
        ep_l = zeros if sigma_ep_l is None else np.broadcast_to(np.asarray(sigma_ep_l, float), (n,)).copy()
        omega = zeros if omega is None else np.asarray(omega, dtype=float)
        opening = zeros if opening is None else np.asarray(opening, dtype=float)
        return cls(omega, opening, *cols, ep_u, ep_l, float(f_S), (n - 1) / float(f_S))


def simulated_trajectory(dyn: DynamicTrajectory, ensemble: SensorEnsemble, T_st: float) -> SimulatedTrajectory:
    p = predict(ensemble, dyn.omega, dyn.opening)
    return SimulatedTrajectory(dyn.omega, dyn.opening, p.mu_u, p.sigma_u, p.mu_l, p.sigma_l,
                               p.sigma_ep_u, p.sigma_ep_l, dyn.f_D, dyn.startup_time(T_st))


@dataclass(frozen=True)
class CostBreakdown:
    c_s: float
    c_c: float
    alpha_d: float
    total: float
    t_st: float
    mode: str = STANDARD

    @classmethod
    def build(cls, c_s: float, c_c: float, alpha_d: float, t_st: float, mode: str = STANDARD) -> "CostBreakdown":
        return cls(float(c_s), float(c_c), float(alpha_d), float(alpha_d * c_s + c_c), float(t_st), mode)

    @property
    def key(self) -> tuple[float, float]:
        """Ordering used by the optimizer: cost first, then the faster startup."""
        return (self.total, self.t_st)

    def to_dict(self) -> dict:
        return {"c_s": self.c_s, "c_c": self.c_c, "alpha_d": self.alpha_d, "total": self.total,
                "t_st": self.t_st, "mode": self.mode}


def _check_nonempty(traj: SimulatedTrajectory) -> None:
    if len(traj) == 0:
        raise EmptySignal("simulated trajectory is empty")


def strain_cost(traj: SimulatedTrajectory) -> float:
    """Predicted largest cycle: ``max(mu_u + sigma_u) - min(mu_l + sigma_l)``."""
    _check_nonempty(traj)
    return float(np.max(traj.sum_u) - np.min(traj.sum_l))


def active_strain_cost(traj: SimulatedTrajectory) -> float:
    """Optimistic largest cycle, shrunk by two epistemic standard deviations on each side."""
    _check_nonempty(traj)
    upper = traj.sum_u - 2.0 * traj.sigma_ep_u
    lower = traj.sum_l + 2.0 * traj.sigma_ep_l
    return float(np.max(upper) - np.min(lower))


def time_cost(t_st: float | None, T_st: float) -> float:
    """Startup-time penalty; ``None`` (timeout) counts as ``2 T_st``.

    Zero up to half the limit, a gentle ramp to 0.05 just below it, then a
    jump to 1 growing by one per extra 20 % of the limit.
    """
    if not T_st > 0:
        raise ValidationError("T_st must be positive")
    t = 2.0 * T_st if t_st is None else float(t_st)
    half = 0.5 * T_st
    if t < half:
        return 0.0
    if t < T_st:
        return 0.05 * (t - half) / half
    return 1.0 + (t - T_st) / (0.2 * T_st)


def strain_range(dataset: Iterable[MeasuredTrajectory | EnvelopedTrajectory]) -> tuple[float, float]:
    lo, hi = math.inf, -math.inf
    for traj in dataset:
        if isinstance(traj, EnvelopedTrajectory):
            a, b = float(traj.lower.min()), float(traj.upper.max())
        else:
            a, b = float(traj.strain.min()), float(traj.strain.max())
        lo, hi = min(lo, a), max(hi, b)
    if lo == math.inf:
        raise EmptyDataset("alpha_d needs at least one trajectory")
    return lo, hi


def alpha_d(dataset: Iterable[MeasuredTrajectory | EnvelopedTrajectory]) -> float:
    """Inverse of the global strain range observed in the dataset."""
    lo, hi = strain_range(dataset)
    if not hi > lo:
        raise DegenerateDataset("dataset strain range is zero")
    return 1.0 / (hi - lo)


@dataclass(frozen=True, eq=False)
class BlackBoxContext:
    sim: SimContext = field(default_factory=SimContext)
    alpha_d: float = 1.0
    short_circuit: bool = True

    @property
    def T_st(self) -> float:
        return self.sim.physics.T_st


def evaluate_blackbox(theta: StartupParams, ensemble: SensorEnsemble, mode: str,
                      context: BlackBoxContext) -> CostBreakdown:
    """Cost of ``theta``; over-time startups skip the sensor when short-circuiting."""
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    T_st = context.T_st
    dyn = simulate(theta, context.sim)
    t_st = dyn.startup_time(T_st)
    c_c = time_cost(t_st, T_st)
    if t_st >= T_st and context.short_circuit:
        return CostBreakdown.build(0.0, c_c, context.alpha_d, t_st, mode)
    traj = simulated_trajectory(dyn, ensemble, T_st)
    c_s = strain_cost(traj) if mode == STANDARD else active_strain_cost(traj)
    return CostBreakdown.build(c_s, c_c, context.alpha_d, t_st, mode)


def make_objective(ensemble: SensorEnsemble, mode: str, context: BlackBoxContext):
    """Pure closure ``theta -> CostBreakdown`` for the optimizer."""

    def objective(theta: StartupParams) -> CostBreakdown:
        return evaluate_blackbox(theta, ensemble, mode, context)

    return objective

