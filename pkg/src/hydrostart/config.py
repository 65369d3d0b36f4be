"""Run configuration: one flat INI section, overridable from the command line.

Example file::

    [hydrostart]
    T_st = 90
    N_I = 200
    seed = 3
    surface = surfaces/unit7.csv

Unknown keys and values that do not parse are validation errors.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .blackbox import OptBox
from .campaign import CampaignBudgets, CampaignSettings
from .errors import ValidationError
from .plant import PlantStrainModel
from .sensor import TrainConfig
from .sim import GovernorConfig, PlantPhysics

SECTION = "hydrostart"


@dataclass(frozen=True)
class RunConfig:
    # paths
    surface: str | None = None
    state: str | None = None
    out_dir: str = "out"
    # sampling
    f_M: float = 500.0
    f_e: float = 10.0
    f_D: float = 10.0
    window_s: float = 10.0
    # constraint and budgets
    T_st: float = 90.0
    N_init: int = 5
    N_act: int = 2
    N_opt: int = 1
    N_I: int = 200
    # seeds
    seed: int = 0
    plant_seed: int = 0
    # sensor training
    epochs: int = 3
    learning_rate: float = 1e-3
    batch_size: int = 32
    beta: float = 0.5
    # synthetic plant
    plant_a1: float = PlantStrainModel.a1
    plant_a2: float = PlantStrainModel.a2
    plant_a3: float = PlantStrainModel.a3
    plant_osc_amp: float = PlantStrainModel.osc_amp

    def __post_init__(self) -> None:
        for name in ("f_M", "f_e", "f_D", "window_s", "T_st", "learning_rate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive, got {v}")
        ratio = self.f_M / self.f_e
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValidationError(f"f_M = {self.f_M:g} Hz is not a multiple of f_e = {self.f_e:g} Hz")
        if self.surface is not None and not Path(self.surface).is_file():
            raise ValidationError(f"torque surface file not found: {self.surface}")
        # let the owning types check the rest
        self.budgets()
        self.train_config()

    def budgets(self) -> CampaignBudgets:
        return CampaignBudgets(self.N_init, self.N_act, self.N_opt)

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                               batch_size=self.batch_size, beta=self.beta, seed=self.seed)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None

    def plant(self) -> PlantStrainModel:
        return PlantStrainModel(a1=self.plant_a1, a2=self.plant_a2, a3=self.plant_a3,
                                osc_amp=self.plant_osc_amp, seed=self.plant_seed)

    def campaign_settings(self) -> CampaignSettings:
        return CampaignSettings(
            budgets=self.budgets(),
            box=OptBox(),
            train=self.train_config(),
            governor=GovernorConfig(f_D=self.f_D),
            physics=PlantPhysics(T_st=self.T_st),
            surface_path=None if self.surface is None else str(Path(self.surface).resolve()),
            N_I=self.N_I,
            window_s=self.window_s,
            f_e=self.f_e,
            f_M=self.f_M,
        )

    def with_overrides(self, **values) -> "RunConfig":
        """Copy with every non-None keyword applied (command-line flags)."""
        changes = {k: v for k, v in values.items() if v is not None}
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ValidationError(f"unknown settings: {', '.join(sorted(unknown))}")
        return replace(self, **changes)


def _coerce(name: str, raw: str, kind):
    text = raw.strip()
    if kind is str:
        return text or None
    try:
        if kind is int:
            return int(text)
        value = float(text)
    except ValueError:
        raise ValidationError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None
    return value


def _field_kinds() -> dict[str, type]:
    kinds = {}
    for f in fields(RunConfig):
        t = str(f.type)
        kinds[f.name] = int if t == "int" else float if t == "float" else str
    return kinds


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then keyword overrides."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ValidationError(f"malformed config {path}: {exc}") from None
        extra = [s for s in parser.sections() if s != SECTION]
        if extra or not parser.has_section(SECTION):
            raise ValidationError(f"{path}: expected exactly one [{SECTION}] section")
        kinds = _field_kinds()
        for key, raw in parser.items(SECTION):
            if key not in kinds:
                raise ValidationError(f"{path}: unknown setting {key!r}")
            values[key] = _coerce(key, raw, kinds[key])
        base = Path(path).parent
        for key in ("surface", "state", "out_dir"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(base / values[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None
