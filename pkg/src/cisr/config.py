"""Experiment configuration: one YAML file with a section per component.

Unknown keys and ill-typed values raise :class:`ConfigInvalid` naming the
offending field path (e.g. ``student.eta``).
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bayesopt import UCBConfig
from .errors import ConfigInvalid
from .frozen_lake import FrozenLakeConfig
from .lander import Discretization, LanderConfig
from .student import SolverConfig
from .teacher import CISRConfig

ENVIRONMENTS = ("frozen_lake", "lander", "custom_cmdp")
POLICY_MODES = ("no_intervention", "single_intervention", "optimized", "fixed_params")


@dataclass(frozen=True)
class InterventionSettings:
    tau_soft: float = 0.1
    tau_hard: float = 0.0
    lander_tau: float = 0.0


@dataclass(frozen=True)
class ExperimentSettings:
    policy_mode: str = "single_intervention"
    intervention: str = "SR1"
    params_file: str = None
    n_students: int = 10
    seeds: tuple = (0,)
    track_units: bool = True

    def __post_init__(self):
        if self.policy_mode not in POLICY_MODES:
            raise ConfigInvalid("experiment.policy_mode", f"must be one of {POLICY_MODES}")
        if self.n_students < 1:
            raise ConfigInvalid("experiment.n_students", "must be >= 1")
        if len(self.seeds) not in (1, self.n_students):
            raise ConfigInvalid("experiment.seeds", "give one seed or one per student")

    def student_seeds(self):
        if len(self.seeds) == self.n_students:
            return list(self.seeds)
        return [self.seeds[0] + k for k in range(self.n_students)]


@dataclass(frozen=True)
class CustomCMDPSettings:
    path: str = None
    interventions: tuple = ()  # of {name, trigger, reset: initial|previous, tau}


@dataclass(frozen=True)
class ExperimentConfig:
    environment: str = "frozen_lake"
    seed: int = 0
    output_dir: str = "runs"
    map: str = None
    frozen_lake: FrozenLakeConfig = field(default_factory=FrozenLakeConfig)
    lander: LanderConfig = field(default_factory=LanderConfig)
    discretization: Discretization = field(default_factory=Discretization)
    custom_cmdp: CustomCMDPSettings = field(default_factory=CustomCMDPSettings)
    interventions: InterventionSettings = field(default_factory=InterventionSettings)
    student: SolverConfig = field(default_factory=SolverConfig)
    teacher: CISRConfig = field(default_factory=CISRConfig)
    bayesopt: UCBConfig = field(default_factory=UCBConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)

    def __post_init__(self):
        if self.environment not in ENVIRONMENTS:
            raise ConfigInvalid("environment", f"must be one of {ENVIRONMENTS}")


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigInvalid(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigInvalid(path, f"expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigInvalid(path or "<root>", "expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigInvalid(sub, "unknown key")
        f = fields[key]
        default = (f.default if f.default is not dataclasses.MISSING
                   else f.default_factory() if f.default_factory is not dataclasses.MISSING else None)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, sub)
        elif default is None or value is None:
            kwargs[key] = value
        else:
            kwargs[key] = _coerce(value, default, sub)
    try:
        return cls(**kwargs)
    except ConfigInvalid:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(path or "<root>", str(exc)) from exc


def config_from_dict(data):
    return _build(ExperimentConfig, data, "")


def load_config(path=None):
    if path is None:
        return ExperimentConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigInvalid("--config", str(exc)) from exc
    except yaml.YAMLError as exc:
        raise ConfigInvalid("--config", f"not valid YAML: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg):
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v
    return conv(cfg)


def dump_config(cfg):
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
