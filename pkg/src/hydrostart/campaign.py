"""Closed-loop measurement campaign.

A campaign alternates between proposing startup parameters, measuring the
resulting startup and retraining the virtual sensor on everything measured so
far. It runs through three phases with fixed trajectory budgets:

* Init: a pre-selected schedule spanning the extremes of the startup space,
* Active: black-box optimization of the optimistic (uncertainty-aware) cost,
* Opt: black-box optimization of the plain predicted cost.

After the last ingest the Opt-mode optimum is proposed once more and measured
as the campaign result.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .blackbox import ACTIVE, STANDARD, BlackBoxContext, OptBox, alpha_d, make_objective
from .envelope import (EnvelopedTrajectory, MeasuredTrajectory, envelope_trajectory, largest_cycle,
                       read_measurement_csv, write_measurement_csv)
from .errors import CampaignExhausted, StateVersionMismatch, ValidationError, ValidationFailure
from .mads import OptBudget, mads_optimize
from .plant import PlantStrainModel, run_startup
from .sensor import SensorEnsemble, TrainConfig, ensemble_from_dict, ensemble_to_dict, train
from .sim import (STANDARD_STARTUP, GovernorConfig, PlantPhysics, SimContext, StartupParams,
                  load_surface_csv)

STATE_SCHEMA = "hydrostart.campaign/1"
INIT, ACTIVE_PHASE, OPT, DONE = "Init", "Active", "Opt", "Done"
FINAL = "Final"

# purposes mixed into per-step seeds
_PLANT, _TRAIN, _OPT = 0, 1, 2

DEFAULT_SCHEDULE = (
    STANDARD_STARTUP,
    StartupParams(0.01, 0.15, 0.80, 0.15),   # slow, low opening
    StartupParams(0.025, 0.34, 0.80, 0.34),  # fast, high opening
    StartupParams(0.025, 0.20, 0.80, 0.20),  # medium
    STANDARD_STARTUP,
)


@dataclass(frozen=True)
class CampaignBudgets:
    N_init: int = 5
    N_act: int = 2
    N_opt: int = 1

    def __post_init__(self) -> None:
        if min(self.N_init, self.N_act, self.N_opt) < 0:
            raise ValidationError("budgets must be >= 0")
        if self.N_init < 2:
            raise ValidationError("N_init must be >= 2 to span the strain range")

    @property
    def N_b(self) -> int:
        return self.N_init + self.N_act + self.N_opt

    def phase(self, j: int) -> str:
        if j < self.N_init:
            return INIT
        if j < self.N_init + self.N_act:
            return ACTIVE_PHASE
        if j < self.N_b:
            return OPT
        return DONE


@dataclass(frozen=True)
class InitialSchedule:
    thetas: tuple[StartupParams, ...] = DEFAULT_SCHEDULE

    def __post_init__(self) -> None:
        object.__setattr__(self, "thetas", tuple(self.thetas))
        if not self.thetas:
            raise ValidationError("initial schedule is empty")

    def __len__(self) -> int:
        return len(self.thetas)

    def __getitem__(self, j: int) -> StartupParams:
        return self.thetas[j]


@dataclass(frozen=True, eq=False)
class CampaignSettings:
    budgets: CampaignBudgets = field(default_factory=CampaignBudgets)
    schedule: InitialSchedule = field(default_factory=InitialSchedule)
    box: OptBox = field(default_factory=OptBox)
    train: TrainConfig = field(default_factory=TrainConfig)
    governor: GovernorConfig = field(default_factory=GovernorConfig)
    physics: PlantPhysics = field(default_factory=PlantPhysics)
    surface_path: str | None = None
    N_I: int = 200
    window_s: float = 10.0
    f_e: float = 10.0
    f_M: float = 500.0

    def __post_init__(self) -> None:
        if len(self.schedule) < self.budgets.N_init:
            raise ValidationError(f"schedule has {len(self.schedule)} entries, N_init = {self.budgets.N_init}")
        if self.N_I < 1:
            raise ValidationError("N_I must be >= 1")
        ratio = self.f_M / self.f_e
        if abs(ratio - round(ratio)) > 1e-9 * ratio or ratio < 1:
            raise ValidationError(f"f_e = {self.f_e:g} Hz must divide f_M = {self.f_M:g} Hz")
        if not self.window_s > 0:
            raise ValidationError("envelope window must be positive")

    @property
    def T_st(self) -> float:
        return self.physics.T_st

    def sim_context(self) -> SimContext:
        surface = load_surface_csv(self.surface_path) if self.surface_path else None
        return SimContext(self.governor, self.physics, surface)

    def to_dict(self) -> dict:
        b = self.budgets
        return {
            "budgets": {"N_init": b.N_init, "N_act": b.N_act, "N_opt": b.N_opt},
            "schedule": [t.to_dict() for t in self.schedule],
            "box": {"lower": list(self.box.lower), "upper": list(self.box.upper)},
            "train": asdict(self.train),
            "governor": asdict(self.governor),
            "physics": asdict(self.physics),
            "surface_path": self.surface_path,
            "N_I": self.N_I,
            "window_s": self.window_s,
            "f_e": self.f_e,
            "f_M": self.f_M,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignSettings":
        train_cfg = dict(d["train"])
        train_cfg["adam_betas"] = tuple(train_cfg["adam_betas"])
        gov = dict(d["governor"])
        gov["pid_gains"] = tuple(gov["pid_gains"])
        return cls(
            budgets=CampaignBudgets(**d["budgets"]),
            schedule=InitialSchedule(tuple(StartupParams(**t) for t in d["schedule"])),
            box=OptBox(tuple(d["box"]["lower"]), tuple(d["box"]["upper"])),
            train=TrainConfig(**train_cfg),
            governor=GovernorConfig(**gov),
            physics=PlantPhysics(**d["physics"]),
            surface_path=d["surface_path"],
            N_I=int(d["N_I"]),
            window_s=float(d["window_s"]),
            f_e=float(d["f_e"]),
            f_M=float(d["f_M"]),
        )


@dataclass(frozen=True)
class HistoryRow:
    j: int
    phase: str
    theta: StartupParams
    largest_cycle: float
    t_st: float
    synchronized: bool

    def feasible(self, T_st: float) -> bool:
        return self.synchronized and self.t_st < T_st

    def to_dict(self) -> dict:
        return {"j": self.j, "phase": self.phase, "theta": self.theta.to_dict(),
                "largest_cycle": self.largest_cycle, "t_st": self.t_st,
                "synchronized": self.synchronized}

    @classmethod
    def from_dict(cls, d: dict) -> "HistoryRow":
        return cls(int(d["j"]), d["phase"], StartupParams(**d["theta"]), float(d["largest_cycle"]),
                   float(d["t_st"]), bool(d["synchronized"]))


@dataclass(frozen=True, eq=False)
class CampaignState:
    """Immutable snapshot of a campaign after ``j`` ingested measurements."""

    settings: CampaignSettings
    seed: int
    dataset: tuple[MeasuredTrajectory, ...] = ()
    enveloped: tuple[EnvelopedTrajectory, ...] = ()
    history: tuple[HistoryRow, ...] = ()
    ensemble: SensorEnsemble | None = None
    alpha: float | None = None
    final: HistoryRow | None = None

    @property
    def j(self) -> int:
        return len(self.dataset)

    @property
    def phase(self) -> str:
        return self.settings.budgets.phase(self.j)

    def best_feasible(self) -> HistoryRow | None:
        rows = [r for r in self.history if r.feasible(self.settings.T_st)]
        return min(rows, key=lambda r: (r.largest_cycle, r.t_st, r.j)) if rows else None

    def best_standard_cycle(self) -> float | None:
        cycles = [r.largest_cycle for r in self.history
                  if r.phase == INIT and r.theta == STANDARD_STARTUP]
        return min(cycles) if cycles else None


def derive_seed(seed: int, j: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(j), int(purpose)]).generate_state(1)[0])


def new_campaign(settings: CampaignSettings | None = None, seed: int = 0) -> CampaignState:
    return CampaignState(settings or CampaignSettings(), int(seed))


def _optimize(state: CampaignState, mode: str, step: int) -> StartupParams:
    s = state.settings
    if state.ensemble is None or state.alpha is None:
        raise ValidationError("the virtual sensor has not been trained yet")
    ctx = BlackBoxContext(s.sim_context(), state.alpha)
    starts = []
    best = state.best_feasible()
    if best is not None:
        starts.append(s.box.clip(best.theta))
    starts.append(s.box.center())
    budget = OptBudget(N_I=s.N_I, seed=derive_seed(state.seed, step, _OPT), initial_points=tuple(starts))
    res = mads_optimize(make_objective(state.ensemble, mode, ctx), s.box, budget)
    return res.theta


def propose_next(state: CampaignState) -> StartupParams:
    """Startup parameters to measure next, according to the campaign phase."""
    phase = state.phase
    if phase == INIT:
        return state.settings.schedule[state.j]
    if phase == ACTIVE_PHASE:
        return _optimize(state, ACTIVE, state.j)
    if phase == OPT:
        return _optimize(state, STANDARD, state.j)
    raise CampaignExhausted(f"all {state.settings.budgets.N_b} budgeted startups have been ingested")


def propose_final(state: CampaignState) -> StartupParams:
    """The campaign result: the plain-cost optimum on the complete dataset."""
    if state.phase != DONE:
        raise ValidationError(f"final test comes after all budgeted startups (phase is {state.phase})")
    return _optimize(state, STANDARD, state.j)


def _check_measurement(theta: StartupParams, traj: MeasuredTrajectory, f_M: float) -> None:
    if traj.params is not None and traj.params != theta:
        raise ValidationFailure(f"trajectory was measured with {traj.params}, not {theta}")
    if abs(traj.f_M - f_M) > 1e-9 * f_M:
        raise ValidationFailure(f"trajectory sampled at {traj.f_M:g} Hz, expected {f_M:g} Hz")
    traj.validate()


def _row(j: int, phase: str, theta: StartupParams, traj: MeasuredTrajectory) -> HistoryRow:
    return HistoryRow(j, phase, theta, largest_cycle(traj), float(traj.t_st), bool(traj.synchronized))


def ingest_measurement(state: CampaignState, theta: StartupParams, traj: MeasuredTrajectory) -> CampaignState:
    """New state with ``traj`` added to the dataset and the sensor retrained from scratch.

    Raises :class:`ValidationFailure` for unusable trajectories; the input
    state is never modified.
    """
    s = state.settings
    phase = state.phase
    if phase == DONE:
        raise CampaignExhausted("campaign is complete; record the final test with record_final")
    _check_measurement(theta, traj, s.f_M)
    if traj.params is None:
        traj = replace(traj, params=theta)
    env = envelope_trajectory(traj, s.window_s, s.f_e)
    dataset = state.dataset + (traj,)
    enveloped = state.enveloped + (env,)
    cfg = replace(s.train, seed=derive_seed(state.seed, state.j, _TRAIN))
    ensemble = train(enveloped, cfg)
    alpha = alpha_d(dataset)
    history = state.history + (_row(state.j, phase, theta, traj),)
    return replace(state, dataset=dataset, enveloped=enveloped, history=history,
                   ensemble=ensemble, alpha=alpha)


def record_final(state: CampaignState, theta: StartupParams, traj: MeasuredTrajectory) -> CampaignState:
    """Attach the final test measurement; it is reported but not trained on."""
    if state.phase != DONE:
        raise ValidationError("the final test comes after all budgeted startups")
    if state.final is not None:
        raise CampaignExhausted("the final test has already been recorded")
    _check_measurement(theta, traj, state.settings.f_M)
    return replace(state, final=_row(state.j, FINAL, theta, traj))


def plant_run_seed(state: CampaignState) -> int:
    return derive_seed(state.seed, state.j, _PLANT)


def run_closed_loop(settings: CampaignSettings, plant: PlantStrainModel, seed: int = 0,
                    on_step=None) -> CampaignState:
    """Drive a whole campaign against the synthetic plant, including the final test.

    ``on_step(state)`` is called after every ingest, e.g. to persist the state.
    """
    state = new_campaign(settings, seed)
    ctx = settings.sim_context()
    while state.phase != DONE:
        theta = propose_next(state)
        traj = run_startup(theta, plant, ctx, plant_run_seed(state), settings.f_M)
        state = ingest_measurement(state, theta, traj)
        if on_step is not None:
            on_step(state)
    theta = propose_final(state)
    traj = run_startup(theta, plant, ctx, plant_run_seed(state), settings.f_M)
    state = record_final(state, theta, traj)
    if on_step is not None:
        on_step(state)
    return state


def summary(state: CampaignState) -> dict:
    best_std = state.best_standard_cycle()
    out = {
        "seed": state.seed,
        "steps": state.j,
        "phase": state.phase,
        "T_st": state.settings.T_st,
        "best_standard_cycle": best_std,
        "final": None if state.final is None else state.final.to_dict(),
        "reduction": None,
        "alpha_d": state.alpha,
    }
    if state.final is not None and best_std:
        out["reduction"] = 1.0 - state.final.largest_cycle / best_std
    return out


# --------------------------------------------------------------------------
# persistence


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _measurement_name(j: int) -> str:
    return f"measurements/step_{j:03d}.csv"


def save_state(state: CampaignState, path: str | Path) -> None:
    """Persist the state next to its measurement CSVs and sensor checkpoint.

    Measurement files are immutable once written; the ensemble checkpoint and
    the state file are replaced atomically, state last.
    """
    path = Path(path)
    root = path.parent
    files = []
    for j, traj in enumerate(state.dataset):
        name = _measurement_name(j)
        target = root / name
        if not target.exists():
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_suffix(".csv.tmp")
            write_measurement_csv(traj, tmp)
            os.replace(tmp, target)
        files.append({"file": name, "theta": traj.params.to_dict(), "t_st": traj.t_st,
                      "synchronized": traj.synchronized})
    ens_name = None
    if state.ensemble is not None:
        ens_name = f"ensemble_{state.j:03d}.json"
        atomic_write_text(root / ens_name, json.dumps(ensemble_to_dict(state.ensemble)))
    doc = {
        "schema": STATE_SCHEMA,
        "seed": state.seed,
        "j": state.j,
        "phase": state.phase,
        "settings": state.settings.to_dict(),
        "dataset": files,
        "ensemble": ens_name,
        "alpha_d": state.alpha,
        "history": [r.to_dict() for r in state.history],
        "final": None if state.final is None else state.final.to_dict(),
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")
    # older checkpoints are unreferenced once the new state is in place
    for stale in root.glob("ensemble_*.json"):
        if stale.name != ens_name:
            stale.unlink()


def load_state(path: str | Path) -> CampaignState:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read campaign state {path}: {exc}") from None
    if doc.get("schema") != STATE_SCHEMA:
        raise StateVersionMismatch(f"{path}: schema {doc.get('schema')!r}, expected {STATE_SCHEMA!r}")
    settings = CampaignSettings.from_dict(doc["settings"])
    root = path.parent
    dataset = []
    for entry in doc["dataset"]:
        traj = read_measurement_csv(root / entry["file"], settings.f_M, StartupParams(**entry["theta"]))
        dataset.append(replace(traj, t_st=float(entry["t_st"]), synchronized=bool(entry["synchronized"])))
    enveloped = tuple(envelope_trajectory(t, settings.window_s, settings.f_e) for t in dataset)
    ensemble = None
    if doc["ensemble"]:
        ensemble = ensemble_from_dict(json.loads((root / doc["ensemble"]).read_text()))
    final = None if doc["final"] is None else HistoryRow.from_dict(doc["final"])
    state = CampaignState(settings, int(doc["seed"]), tuple(dataset), enveloped,
                          tuple(HistoryRow.from_dict(r) for r in doc["history"]),
                          ensemble, doc["alpha_d"], final)
    if state.j != int(doc["j"]) or len(state.history) != state.j:
        raise ValidationError(f"{path}: dataset and history lengths disagree with j")
    return state

