"""Mesh adaptive direct search over the startup-parameter box.

Coordinates are scaled to the unit cube. Each iteration tries a speculative
step along the last successful direction, then polls ``2n`` orthogonal
directions from a random Householder basis, rounded to the current mesh.
A success doubles the poll size (capped at 1); a failed poll halves it.
The mesh size shrinks as the square of the poll size, so poll directions
become dense on the unit sphere as the search refines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .blackbox import CostBreakdown, OptBox, STANDARD
from .errors import NoFeasibleStart, ValidationError
from .sim import StartupParams


@dataclass(frozen=True)
class OptBudget:
    N_I: int = 200
    seed: int = 0
    initial_points: tuple[StartupParams, ...] = ()
    initial_poll_size: float = 0.25
    min_poll_size: float = 1e-6
    opportunistic: bool = True

    def __post_init__(self) -> None:
        if self.N_I < 1:
            raise ValidationError("N_I must be >= 1")
        if not 0 < self.min_poll_size < self.initial_poll_size <= 1.0:
            raise ValidationError("need 0 < min_poll_size < initial_poll_size <= 1")
        object.__setattr__(self, "initial_points", tuple(self.initial_points))


@dataclass(frozen=True)
class EvalRecord:
    index: int
    theta: StartupParams
    cost: CostBreakdown
    best_total: float
    kind: str  # init | search | poll


@dataclass
class MadsResult:
    theta: StartupParams
    best: CostBreakdown
    history: list[EvalRecord] = field(default_factory=list)
    poll_size: float = 0.0

    def __iter__(self):
        # allows ``theta, best, history = mads_optimize(...)``
        return iter((self.theta, self.best, self.history))


def _as_cost(value) -> CostBreakdown:
    if isinstance(value, CostBreakdown):
        return value
    v = float(value)
    return CostBreakdown(v, 0.0, 1.0, v, 0.0, STANDARD)


def _finite(cost: CostBreakdown) -> bool:
    return math.isfinite(cost.total) and math.isfinite(cost.t_st)


def _rank(cost: CostBreakdown, theta: StartupParams):
    total = cost.total if _finite(cost) else math.inf
    t = cost.t_st if math.isfinite(cost.t_st) else math.inf
    return (total, t, theta.as_tuple())


def _better(a: CostBreakdown, b: CostBreakdown) -> bool:
    """Strict improvement of ``a`` over ``b`` (cost, then startup time)."""
    if not _finite(a):
        return False
    if not _finite(b):
        return True
    return a.key < b.key


def householder_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Rows of ``[H; -H]`` with ``H = I - 2 v v^T`` for a random unit ``v``."""
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    h = np.eye(n) - 2.0 * np.outer(v, v)
    return np.vstack([h, -h])


def mesh_size(poll_size: float, initial_poll_size: float) -> float:
    return poll_size * min(1.0, poll_size / initial_poll_size)


def poll_steps(directions: np.ndarray, poll_size: float, mesh: float) -> np.ndarray:
    """Scale directions to infinity-norm ``poll_size`` and round them onto the mesh."""
    scale = poll_size / mesh
    out = np.empty_like(directions)
    for i, d in enumerate(directions):
        q = np.round(scale * d / np.max(np.abs(d)))
        out[i] = mesh * q
    return out


class _Evaluator:
    """Cache plus budget accounting; cache hits are free."""

    def __init__(self, objective, box: OptBox, budget: int, executor=None):
        self.objective = objective
        self.box = box
        self.budget = budget
        self.executor = executor
        self.cache: dict[tuple, CostBreakdown] = {}
        self.history: list[EvalRecord] = []
        self.best: tuple[StartupParams, CostBreakdown] | None = None

    @property
    def used(self) -> int:
        return len(self.history)

    @property
    def left(self) -> int:
        return self.budget - self.used

    def _record(self, theta, cost, kind):
        if self.best is None or _better(cost, self.best[1]):
            self.best = (theta, cost)
        best_total = self.best[1].total if _finite(self.best[1]) else math.inf
        self.history.append(EvalRecord(self.used, theta, cost, best_total, kind))

    def evaluate(self, thetas: Sequence[StartupParams], kind: str) -> list[CostBreakdown | None]:
        """Costs in input order; ``None`` for points the budget could not afford."""
        fresh = []
        for th in thetas:
            k = th.as_tuple()
            if k not in self.cache and k not in fresh and len(fresh) < self.left:
                fresh.append(k)
        todo = [StartupParams(*k) for k in fresh]
        if self.executor is not None and len(todo) > 1:
            results = list(self.executor.map(self.objective, todo))
        else:
            results = [self.objective(th) for th in todo]
        for th, r in zip(todo, results):
            cost = _as_cost(r)
            self.cache[th.as_tuple()] = cost
            self._record(th, cost, kind)
        return [self.cache.get(th.as_tuple()) for th in thetas]


def mads_optimize(objective: Callable[[StartupParams], CostBreakdown | float], box: OptBox,
                  budget: OptBudget, executor=None) -> MadsResult:
    """Minimize ``objective`` over ``box`` with at most ``budget.N_I`` evaluations.

    ``executor`` (anything with an order-preserving ``map``) evaluates poll
    points concurrently; the whole poll set is then evaluated and reduced in
    direction order, so results do not depend on completion order.
    """
    starts = [box.clip(th) for th in budget.initial_points] or [box.center()]
    ev = _Evaluator(objective, box, budget.N_I, executor)
    costs = ev.evaluate(starts, "init")
    ranked = sorted((_rank(c, th), th, c) for th, c in zip(starts, costs) if c is not None and _finite(c))
    if not ranked:
        raise NoFeasibleStart("no initial point produced a finite cost")
    _, x_theta, x_cost = ranked[0]

    rng = np.random.default_rng(budget.seed)
    n = 4
    delta = budget.initial_poll_size
    last_step: np.ndarray | None = None
    opportunistic = budget.opportunistic and executor is None

    while ev.left > 0 and delta >= budget.min_poll_size:
        x = box.to_unit(x_theta)
        success = False
        if last_step is not None:
            cand = box.from_unit(x + last_step)
            (c,) = ev.evaluate([cand], "search")
            if c is not None and _better(c, x_cost):
                x_theta, x_cost = cand, c
                success = True
            else:
                last_step = None
        if not success and ev.left > 0:
            mesh = mesh_size(delta, budget.initial_poll_size)
            steps = poll_steps(householder_directions(rng, n), delta, mesh)
            cands = [box.from_unit(x + s) for s in steps]
            if opportunistic:
                for s, cand in zip(steps, cands):
                    (c,) = ev.evaluate([cand], "poll")
                    if c is not None and _better(c, x_cost):
                        x_theta, x_cost, last_step, success = cand, c, s, True
                        break
                    if ev.left <= 0:
                        break
            else:
                results = ev.evaluate(cands, "poll")
                winners = [(_rank(c, cand), i) for i, (cand, c) in enumerate(zip(cands, results))
                           if c is not None and _better(c, x_cost)]
                if winners:
                    _, i = min(winners)
                    x_theta, x_cost, last_step, success = cands[i], results[i], steps[i], True
        delta = min(1.0, 2.0 * delta) if success else 0.5 * delta

    return MadsResult(x_theta, x_cost, ev.history, delta)
