"""
Run configuration module.

A RunConfig gathers the scenario, the seed, the ablation toggles and per-module parameter overrides. Overrides are
plain dictionaries checked against the module config classes; unknown keys are rejected at every nesting level.
"""

from __future__ import annotations
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

from mapping.degeneracy import DETECTOR_MODES, DegeneracyConfig
from mapping.frontend import FrontendConfig
from mapping.initialization import InitializationConfig
from mapping.map_manager import MapManagerConfig
from runner.exceptions import ConfigError
from simulation.library import SCENARIO_NAMES
from simulation.simulator import RESULT_PATH_DIR

import json
import os

OVERRIDE_SECTIONS = {"frontend": FrontendConfig, "degeneracy": DegeneracyConfig, "initialization": InitializationConfig,
                     "map_manager": MapManagerConfig}

def build_dataclass(config_class: type, data: dict, path: str, base=None):
    """Instance of a config dataclass from a dictionary of overrides. Nested config dataclasses are built from nested
    dictionaries on top of their parent's default, and lists become tuples."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a mapping, not {type(data).__name__}.", path)
    defaults = config_class()
    names = {config_field.name for config_field in fields(config_class)}
    values = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown key '{key}' in {path}.", f"{path}.{key}")
        default = getattr(defaults, key)
        if is_dataclass(default):
            values[key] = build_dataclass(type(default), value, f"{path}.{key}", base=default)
        elif isinstance(value, list):
            values[key] = tuple(value)
        else:
            values[key] = value
    try:
        return replace(base, **values) if base is not None else config_class(**values)
    except (TypeError, ValueError) as error:
        raise ConfigError(f"invalid {path}: {error}", path) from error

@dataclass
class RunConfig:
    """Scenario, seed, toggles and module overrides of a run."""
    scenario: str = "corridor-loop"
    output_dir: str = RESULT_PATH_DIR
    run_name: str | None = None
    seed: int = 0
    events: int = 0
    event_duration: float = 3.0
    duration_scale: float = 1.0
    fusion: bool = True
    enhanced: bool = True
    detector: str = "ours"
    dynamic_init: bool = True
    single_threaded: bool = False
    static_init_duration: float = 0.5
    plot: bool = False
    frontend: dict = field(default_factory=dict)
    degeneracy: dict = field(default_factory=dict)
    initialization: dict = field(default_factory=dict)
    map_manager: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("fusion", "enhanced", "dynamic_init", "single_threaded", "plot"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"unsupported parameter type(s) for {name}: '{type(getattr(self, name)).__name__}'", name)
        if not isinstance(self.seed, int) or not isinstance(self.events, int):
            raise ConfigError("seed and events must be integers.", "seed" if not isinstance(self.seed, int) else "events")
        if self.events < 0:
            raise ConfigError(f"events must be non-negative, not {self.events}.", "events")
        if self.detector not in DETECTOR_MODES:
            raise ConfigError(f"unknown detector '{self.detector}', expected one of {DETECTOR_MODES}.", "detector")
        for name in ("duration_scale", "event_duration", "static_init_duration"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be bigger then zero, not {getattr(self, name)}.", name)
        if not self.scenario.endswith(".json") and self.scenario not in SCENARIO_NAMES:
            raise ConfigError(f"unknown scenario '{self.scenario}', expected a scenario file or one of {SCENARIO_NAMES}.", "scenario")
        # fail early on bad overrides
        for section in OVERRIDE_SECTIONS:
            self.section(section)

    def section(self, name: str):
        """Module config of an override section, with the run's toggles applied."""
        config = build_dataclass(OVERRIDE_SECTIONS[name], getattr(self, name), name)
        if name == "degeneracy":
            config.mode = self.detector
        elif name == "map_manager":
            config.fusion = self.fusion
            config.enhanced = self.enhanced
        return config

    def get_run_name(self) -> str:
        if self.run_name is not None:
            return self.run_name
        scenario = os.path.splitext(os.path.basename(self.scenario))[0]
        return f"{scenario}_events{self.events}_seed{self.seed}"

    def get_run_dir(self) -> str:
        return os.path.join(self.output_dir, self.get_run_name())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError(f"a run configuration must be a mapping, not {type(data).__name__}.", "")
        names = {config_field.name for config_field in fields(cls)}
        for key in data:
            if key not in names:
                raise ConfigError(f"unknown key '{key}' in the run configuration.", key)
        try:
            return cls(**data)
        except TypeError as error:
            raise ConfigError(f"invalid run configuration: {error}", "") from error

def load_config(file_path: str) -> RunConfig:
    with open(file_path, "r") as config_file:
        try:
            data = json.load(config_file)
        except json.JSONDecodeError as error:
            raise ConfigError(f"{file_path} is not valid json: {error}", "") from error
    return RunConfig.from_dict(data)

def save_config(config: RunConfig, file_path: str) -> None:
    with open(file_path, "w") as config_file:
        json.dump(config.to_dict(), config_file, indent=4, sort_keys=True)
