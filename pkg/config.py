"""
Experiment configuration: pydantic models loaded from YAML files.
"""

import hashlib
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import ConfigError

SCENARIO_KINDS = ("grid", "patrol", "random")

Probability = Annotated[float, Field(ge=0.0, le=1.0)]
Effectiveness = Annotated[float, Field(gt=0.0, le=1.0)]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(StrictModel):
    kind: Literal["grid"] = "grid"
    n_robots: int = Field(ge=1)
    grid_side: int = Field(ge=1)
    targets: List[int] = Field(min_length=1)
    starts: List[int]
    c: Probability
    delta_scenario: Probability
    K: int = Field(ge=1)
    eta: Effectiveness

    @model_validator(mode="after")
    def check_cells(self) -> "GridConfig":
        n_cells = self.grid_side ** 2
        for name in ("targets", "starts"):
            for cell in getattr(self, name):
                if not 0 <= cell < n_cells:
                    raise ValueError(f"{name} entry {cell} outside [0, {n_cells})")
        if len(self.starts) != self.n_robots:
            raise ValueError(f"{len(self.starts)} starts given for {self.n_robots} robots")
        return self


class PatrolConfig(StrictModel):
    kind: Literal["patrol"] = "patrol"
    n_units: int = Field(ge=1)
    n_adversaries: int = Field(ge=1)
    n_locations: int = Field(ge=1)
    c: Probability
    d: Probability
    delta_scenario: Probability
    beta: Probability
    eta: Effectiveness
    adversary_targets: Optional[List[int]] = None
    adversary_policy: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def check_adversaries(self) -> "PatrolConfig":
        if self.adversary_targets is not None:
            if len(self.adversary_targets) != self.n_adversaries:
                raise ValueError("adversary_targets needs one entry per adversary")
            for target in self.adversary_targets:
                if not 0 <= target < self.n_locations:
                    raise ValueError(f"adversary target {target} outside [0, {self.n_locations})")
        if self.adversary_policy is not None:
            if len(self.adversary_policy) != self.n_adversaries:
                raise ValueError("adversary_policy needs one row per adversary")
            for row in self.adversary_policy:
                if len(row) != self.n_locations or min(row) < 0 or abs(sum(row) - 1.0) > 1e-9:
                    raise ValueError("adversary_policy rows must be distributions over locations")
        return self


class RandomConfig(StrictModel):
    kind: Literal["random"] = "random"
    agent_state_sizes: List[int] = Field(min_length=1)
    agent_action_sizes: List[int] = Field(min_length=1)
    dependence: Probability = 0.0
    reward_model: Literal["uniform", "coverage"] = "coverage"
    n_targets: int = Field(default=2, ge=1)
    eta: Effectiveness = 0.75
    cover_probability: Probability = 0.5
    seed: int = 0

    @model_validator(mode="after")
    def check_sizes(self) -> "RandomConfig":
        if len(self.agent_state_sizes) != len(self.agent_action_sizes):
            raise ValueError("agent_state_sizes and agent_action_sizes differ in length")
        if min(self.agent_state_sizes + self.agent_action_sizes) < 1:
            raise ValueError("agent sizes must be at least 1")
        return self


ScenarioConfig = Annotated[
    Union[GridConfig, PatrolConfig, RandomConfig], Field(discriminator="kind")
]


class SearchConfig(StrictModel):
    epsilon: float = Field(default=0.0, ge=0.0)
    max_rounds: int = Field(default=500, ge=1)
    companion_mode: Literal["uniform", "sampled", "product"] = "uniform"
    companion_samples: Optional[int] = Field(default=None, ge=1)
    tol: float = Field(default=1e-9, gt=0.0)
    max_iter: int = Field(default=100000, ge=1)
    aperiodicity: float = Field(default=0.5, gt=0.0, le=1.0)
    improvement_margin: float = Field(default=1e-8, ge=0.0)
    refresh_transitions: bool = False
    seed: int = 0


class SolverSettings(StrictModel):
    tol: float = Field(default=1e-9, gt=0.0)
    max_iter: int = Field(default=100000, ge=1)
    aperiodicity: float = Field(default=0.5, gt=0.0, le=1.0)


class AnalysisSettings(StrictModel):
    delta_mode: Literal["auto", "exhaustive", "sampled"] = "auto"
    delta_budget: int = Field(default=1_000_000, ge=1)
    delta_seed: int = 0
    lambda_samples: int = Field(default=200, ge=1)
    lambda_seed: int = 0
    oracle: bool = False
    oracle_cap: int = Field(default=1_000_000, ge=1)


class CacheSettings(StrictModel):
    enabled: bool = False
    ttl_seconds: Optional[int] = Field(default=None, ge=1)


class BenchRow(StrictModel):
    name: str
    scenario: ScenarioConfig


class ExperimentConfig(StrictModel):
    schema_version: Literal[1] = 1
    name: Optional[str] = None
    scenario: Optional[ScenarioConfig] = None
    rows: List[BenchRow] = Field(default_factory=list)
    search: SearchConfig = Field(default_factory=SearchConfig)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    analysis: AnalysisSettings = Field(default_factory=AnalysisSettings)
    trials: int = Field(default=100, ge=1)
    with_baseline: bool = True
    cache: CacheSettings = Field(default_factory=CacheSettings)

    def require_scenario(self):
        if self.scenario is None:
            raise ConfigError("this command needs a scenario section", field_path="scenario")
        return self.scenario


def _field_path(loc) -> str:
    parts = []
    for i, part in enumerate(loc):
        # discriminated unions insert the tag after the field name
        if part in SCENARIO_KINDS and i and loc[i - 1] == "scenario":
            continue
        parts.append(str(part))
    return ".".join(parts)


def parse_experiment(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    try:
        return ExperimentConfig.model_validate(data)
    except pydantic.ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], field_path=_field_path(first["loc"]) or None)


def load_experiment(path) -> ExperimentConfig:
    """
    Read and validate an experiment file.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}")
    return parse_experiment(data)


def apply_overrides(
    config: ExperimentConfig, seed: Optional[int] = None, trials: Optional[int] = None
) -> ExperimentConfig:
    update = {}
    if seed is not None:
        update["search"] = config.search.model_copy(update={"seed": seed})
    if trials is not None:
        if trials < 1:
            raise ConfigError("must be at least 1", field_path="trials")
        update["trials"] = trials
    return config.model_copy(update=update) if update else config


def fingerprint(scenario, solver: SolverSettings) -> str:
    """Stable hash of a scenario and the solver settings used on it."""
    payload = scenario.model_dump_json() + solver.model_dump_json()
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def describe(scenario) -> str:
    if scenario.kind == "grid":
        return (
            f"grid N={scenario.n_robots} B={len(scenario.targets)} L={scenario.grid_side} "
            f"targets={scenario.targets} starts={scenario.starts}"
        )
    if scenario.kind == "patrol":
        return (
            f"patrol units={scenario.n_units} adversaries={scenario.n_adversaries} "
            f"locations={scenario.n_locations}"
        )
    return (
        f"random states={scenario.agent_state_sizes} actions={scenario.agent_action_sizes} "
        f"dependence={scenario.dependence}"
    )
