"""
Experiment files: pydantic models and a TOML/JSON loader.
"""
import json
import math
import tomllib
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigurationError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FunctionConfig(_Strict):
    family: Literal["exponential", "polynomial"]
    coeffs: List[float]

    @model_validator(mode="after")
    def _check_arity(self) -> 'FunctionConfig':
        if self.family == "exponential" and len(self.coeffs) not in (2, 3):
            raise ValueError("exponential takes coeffs [A, lambda] or [A, lambda, r0]")
        if self.family == "polynomial" and not self.coeffs:
            raise ValueError("polynomial needs at least one coefficient")
        return self


class TBParamsConfig(_Strict):
    hopping: FunctionConfig = Field(default_factory=lambda: FunctionConfig(family="exponential", coeffs=[-1.0, 2.0, 1.0]))
    density: FunctionConfig = Field(default_factory=lambda: FunctionConfig(family="exponential", coeffs=[1.0, 3.0, 1.0]))
    onsite: FunctionConfig = Field(default_factory=lambda: FunctionConfig(family="polynomial", coeffs=[0.0, 1.0]))
    r_cut: float = Field(2.5, gt=0)
    mu: float = 0.0
    beta: float = Field(10.0, gt=0)
    smoothness_margin: float = Field(0.5, gt=0)
    min_separation: float = Field(0.5, gt=0)


class SolverSettings(_Strict):
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(2000, ge=1)
    newton_max_iter: int = Field(100, ge=1)
    gmres_rtol: float = Field(1e-2, gt=0, lt=1)
    gmres_restart: int = Field(50, ge=1)
    reference_tol: float = Field(1e-8, gt=0)
    reference_max_iter: int = Field(5000, ge=1)
    stability_eigs: int = Field(3, ge=1)


class TaylorSettings(_Strict):
    fd_step: float = Field(1e-4, gt=0)
    drop_tol: float = Field(1e-10, ge=0)
    richardson: bool = False
    symmetrize: bool = False


class ScheduleSettings(_Strict):
    auto: bool = True
    r_buf: Optional[float] = Field(None, gt=0)
    r_mm: Optional[float] = Field(None, gt=0)
    mm_radius_max: Optional[float] = Field(None, gt=0)
    reference_radius: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _manual_radii(self) -> 'ScheduleSettings':
        if not self.auto and (self.r_buf is None or self.r_mm is None):
            raise ValueError("r_buf and r_mm are required when auto = false")
        return self


class PredictorConfig(_Strict):
    burgers_b3: float = Field(1.0, gt=0)
    core: Tuple[float, float] = (0.5, math.sqrt(3.0) / 6.0)
    core_radius: float = Field(2.0, gt=0)


class AssertionSettings(_Strict):
    geom_slope_max: Optional[float] = None
    energy_slope_max: Optional[float] = None
    cross_check_factor: Optional[float] = Field(3.0, gt=0)
    require_stability: bool = True
    exclude_last: bool = False
    # re-solve the reference on reference_scale times its radius and compare
    reference_scale: Optional[float] = Field(None, gt=1)
    reference_tolerance: float = Field(0.05, gt=0)
    core_shift_max: float = Field(1e-4, gt=0)


class ExperimentConfig(_Strict):
    name: str = "study"
    case: Literal["P", "D"] = "P"
    defect: Literal["none", "vacancy", "divacancy", "interstitial", "screw"] = "divacancy"
    r_def: float = Field(1.0, ge=0)
    scheme: Literal["energy", "force", "both"] = "energy"
    k_E: Literal[2, 3] = 2
    k_F: Literal[1, 2] = 1
    r_qm: List[float] = Field(default_factory=lambda: [3.5, 4.5, 5.5, 6.5])
    gamma: float = Field(1.0, gt=0)
    stability: bool = True
    seed: int = 0
    output_dir: Optional[str] = None
    tb: TBParamsConfig = Field(default_factory=TBParamsConfig)
    schedule: ScheduleSettings = Field(default_factory=ScheduleSettings)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    taylor: TaylorSettings = Field(default_factory=TaylorSettings)
    predictor: Optional[PredictorConfig] = None
    assertions: AssertionSettings = Field(default_factory=AssertionSettings)

    @field_validator("r_qm")
    @classmethod
    def _ascending(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("at least one R_QM is required")
        if any(r <= 0 for r in value):
            raise ValueError("R_QM values must be positive")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("R_QM values must be strictly ascending")
        return value

    @model_validator(mode="after")
    def _case_defaults(self) -> 'ExperimentConfig':
        if self.case == "D":
            if self.defect != "screw":
                raise ValueError("case D is the anti-plane screw dislocation: set defect = 'screw'")
            if self.predictor is None:
                self.predictor = PredictorConfig()
        elif self.defect == "screw":
            raise ValueError("defect 'screw' requires case = 'D'")
        if self.case == "P":
            if self.assertions.geom_slope_max is None:
                self.assertions.geom_slope_max = -2.5
            if self.assertions.energy_slope_max is None:
                self.assertions.energy_slope_max = -3.0
        return self

    @property
    def schemes(self) -> List[str]:
        return ["energy", "force"] if self.scheme == "both" else [self.scheme]

    @property
    def expansion_order(self) -> int:
        """k in the schedule: k_E for energy mixing, k_F + 1 for force mixing."""
        if self.scheme == "force":
            return self.k_F + 1
        return self.k_E


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def parse_experiment(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid experiment config - {_format_validation_error(e)}") from e


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """Read a TOML or JSON experiment file, chosen by extension."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        elif path.suffix == ".json":
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        else:
            raise ConfigurationError(f"Unsupported config format {path.suffix!r}; use .toml or .json")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot parse {path}: {e}") from e
    return parse_experiment(data)
