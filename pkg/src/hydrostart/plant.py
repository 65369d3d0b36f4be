"""Synthetic instrumented turbine used in place of real measurement runs.

Strain along a startup is a smooth mean surface over (speed, opening), with a
ridge at high opening and low speed, plus a 20 Hz oscillation and
heteroscedastic Gaussian noise. The dynamics are the shared simulator.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .envelope import MeasuredTrajectory
from .errors import NoFeasiblePoint
from .sim import SimContext, StartupParams, simulate


@dataclass(frozen=True)
class PlantStrainModel:
    # standard startup ~1.0, slow/low startup ~0.65 in normalized strain
    a1: float = 4.3
    a2: float = 0.0
    a3: float = 0.3
    decay: float = 0.35
    g0: float = 0.02
    g1: float = 0.05
    osc_amp: float = 0.05
    osc_freq: float = 20.0
    seed: int = 0

    def mean(self, omega, o):
        omega = np.asarray(omega, dtype=float)
        o = np.asarray(o, dtype=float)
        return self.a1 * o * np.exp(-omega / self.decay) + self.a2 * o * o - self.a3 * omega * o

    def noise_scale(self, omega, o):
        omega, o = np.broadcast_arrays(np.asarray(omega, dtype=float), np.asarray(o, dtype=float))
        return self.g0 + self.g1 * o


@dataclass(frozen=True)
class OracleResult:
    theta: StartupParams
    expected_cycle: float
    stderr: float
    n_feasible: int
    grid_size: int
    cycles: np.ndarray = field(repr=False, default=None)


def _strain(plant: PlantStrainModel, t, omega, o, rng, repeats: int | None = None):
    shape = (t.size,) if repeats is None else (repeats, t.size)
    n_phase = 1 if repeats is None else repeats
    phase = rng.uniform(0.0, 2.0 * math.pi, size=n_phase)
    z = rng.standard_normal(shape)
    osc = plant.osc_amp * np.sin(2.0 * math.pi * plant.osc_freq * t + phase[:, None])
    s = plant.mean(omega, o) + plant.noise_scale(omega, o) * z + (osc[0] if repeats is None else osc)
    return s


def _resample(dyn, f_M: float):
    n = int(round(dyn.duration * f_M))
    t = np.arange(n + 1) / f_M
    t_d = np.arange(len(dyn)) / dyn.f_D
    return t, np.interp(t, t_d, dyn.omega), np.interp(t, t_d, dyn.opening)


def run_startup(theta: StartupParams, plant: PlantStrainModel, ctx: SimContext, run_seed: int,
                f_M: float = 500.0) -> MeasuredTrajectory:
    """Run one startup on the synthetic turbine and record strain at ``f_M``."""
    dyn = simulate(theta, ctx)
    t, omega, o = _resample(dyn, f_M)
    rng = np.random.default_rng([plant.seed, int(run_seed)])
    strain = _strain(plant, t, omega, o, rng)
    return MeasuredTrajectory(omega, o, strain, float(f_M), dyn.startup_time(ctx.physics.T_st),
                              theta, dyn.synchronized)


def expected_cycle(theta: StartupParams, plant: PlantStrainModel, ctx: SimContext,
                   repeats: int = 16, seed: int = 0, f_M: float = 500.0) -> tuple[float, float]:
    """Mean and standard error of the largest cycle over ``repeats`` runs."""
    dyn = simulate(theta, ctx)
    t, omega, o = _resample(dyn, f_M)
    rng = np.random.default_rng([plant.seed, 7_919, int(seed)])
    cycles = np.ptp(_strain(plant, t, omega, o, rng, repeats), axis=1)
    return float(cycles.mean()), float(cycles.std(ddof=1) / math.sqrt(repeats))


def oracle_optimum(plant: PlantStrainModel, ctx: SimContext, box, resolution: int = 10,
                   repeats: int = 8, seed: int = 0, f_M: float = 500.0) -> OracleResult:
    """Exhaustive grid search of the expected largest cycle over ``box``.

    Infeasible points (``t_st >= T_st``) are skipped; each feasible point is
    averaged over ``repeats`` runs with per-point seeds.
    """
    if resolution < 2 or repeats < 2:
        raise ValueError("need resolution >= 2 and repeats >= 2")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(box.lower, box.upper)]
    T_st = ctx.physics.T_st
    best = None
    cycles = np.full(resolution ** 4, np.nan)
    n_feasible = 0
    for idx, values in enumerate(itertools.product(*axes)):
        theta = StartupParams.from_sequence(values)
        dyn = simulate(theta, ctx)
        if not dyn.synchronized or dyn.t_st >= T_st:
            continue
        n_feasible += 1
        t, omega, o = _resample(dyn, f_M)
        rng = np.random.default_rng([plant.seed, int(seed), idx])
        c = np.ptp(_strain(plant, t, omega, o, rng, repeats), axis=1)
        cycles[idx] = c.mean()
        if best is None or c.mean() < best[1]:
            best = (theta, float(c.mean()), float(c.std(ddof=1) / math.sqrt(repeats)))
    if best is None:
        raise NoFeasiblePoint("no grid point satisfies the startup-time constraint")
    return OracleResult(best[0], best[1], best[2], n_feasible, resolution ** 4, cycles)
