"""
Configuration for the kinetic transport verification toolkit
Process settings come from the environment; each experiment from one JSON document.
"""
import json
import os
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Process settings loaded from environment variables"""

    # Logging Configuration
    log_level: str = "INFO"
    log_file: str = "logs/gkin.log"

    # Output
    output_dir: str = "results"

    # Parallelism (0 means one worker per logical core)
    workers: int = 0
    block_size: int = 4096

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        env_prefix = "GKIN_"


# Global settings instance
settings = Settings()


class ConfigError(ValueError):
    """Raised when an experiment document cannot be parsed or validated."""

    def __init__(self, message: str, errors: Optional[List[dict]] = None):
        super().__init__(message)
        self.errors = errors or []


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- Domain ---

class BallSpec(_Section):
    kind: Literal["ball"] = "ball"
    r: float = Field(0.5, gt=0)


class FlatCapSpec(_Section):
    kind: Literal["flat_cap"] = "flat_cap"
    R: float = Field(1.0, gt=0)
    a: float = Field(0.25, gt=0)
    r1: float = Field(0.5, gt=0)

    @model_validator(mode="after")
    def _check_containment(self):
        if not self.a < self.R:
            raise ValueError(f"flat_cap needs a < R, got a={self.a}, R={self.R}")
        if self.R < self.r1 + self.a:
            raise ValueError(
                f"flat_cap needs R >= r1 + a for the half-ball containment, "
                f"got R={self.R}, r1 + a={self.r1 + self.a}"
            )
        return self


DomainSpec = Annotated[Union[BallSpec, FlatCapSpec], Field(discriminator="kind")]


# --- Collision ---

class KernelSpec(_Section):
    model: Literal["hard_sphere"] = "hard_sphere"
    rho: float = Field(0.5, gt=0, lt=1)
    gain_scale: float = Field(1.0, ge=0)


class QuadSpec(_Section):
    v_max: float = Field(8.0, gt=0)
    n_r: int = Field(48, ge=2)
    n_theta: int = Field(32, ge=2)
    n_phi: int = Field(32, ge=2)

    @field_validator("n_theta", "n_phi")
    @classmethod
    def _even(cls, value: int) -> int:
        if value % 2:
            raise ValueError("angular orders must be even")
        return value


# --- Boundary data ---

class FlatCutoffSpec(_Section):
    kind: Literal["flat_cutoff"] = "flat_cutoff"
    r1: float = Field(0.5, gt=0)


class CapCutoffSpec(_Section):
    kind: Literal["cap_cutoff"] = "cap_cutoff"
    theta1: float = 0.3
    theta2: float = 0.6

    @model_validator(mode="after")
    def _check_angles(self):
        if not 0 < self.theta1 < self.theta2 < 3.141592653589793:
            raise ValueError("cap_cutoff needs 0 < theta1 < theta2 < pi")
        return self


BoundaryDataSpec = Annotated[Union[FlatCutoffSpec, CapCutoffSpec], Field(discriminator="kind")]


# --- Solver ---

class GridSpec(_Section):
    n_x: int = Field(12, ge=2)
    n_v_r: int = Field(10, ge=2)
    n_v_ang: int = Field(8, ge=2)


class SolverSpec(_Section):
    grid: GridSpec = GridSpec()
    tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(30, ge=1)
    mc_paths: int = Field(100000, ge=1)
    seed: int = 7
    n_probes: int = Field(20, ge=1)
    interp_tol: float = Field(0.25, gt=0)
    refine_tol: float = Field(2e-3, gt=0)
    line_order: int = Field(8, ge=2)


# --- Norms and scans ---

class NormSpec(_Section):
    """(p, alpha) pair of the weighted norms L^p_alpha and W^{1,p}_alpha."""

    p: float = Field(2.0, ge=1)
    alpha: float = Field(0.0, ge=0)

    def admissible(self, rho: float) -> bool:
        return self.alpha < (1.0 - rho) / 2.0


class ScanSpec(_Section):
    p_values: List[float] = [1.0, 1.5, 1.9, 2.0, 2.5, 2.9, 3.0]
    a: float = Field(1.0, gt=0)
    b: float = Field(1.0, ge=0)
    k_min: int = Field(4, ge=1)
    k_max: int = Field(14, ge=2)
    fit_slack: float = Field(5.0, ge=1)
    radii: List[float] = [0.4, 0.2, 0.1, 0.05]
    mc_samples: int = Field(20000, ge=100)

    @model_validator(mode="after")
    def _check_levels(self):
        if self.k_max - self.k_min < 4:
            raise ValueError("a divergence scan needs at least 5 cutoff levels")
        return self


class EtaGapSpec(_Section):
    r0: float = Field(0.25, gt=0)
    n_radial: int = Field(11, ge=2)
    n_angle: int = Field(7, ge=2)


class ExperimentConfig(_Section):
    """One verification run: every numerical choice lives here."""

    name: str = "experiment"
    seed: int = 7
    output_dir: Optional[str] = None
    domain: DomainSpec
    kernel: KernelSpec = KernelSpec()
    quad: QuadSpec = QuadSpec()
    boundary_data: Optional[BoundaryDataSpec] = None
    solver: SolverSpec = SolverSpec()
    norms: List[NormSpec] = [NormSpec(p=2.0, alpha=0.1)]
    scan: ScanSpec = ScanSpec()
    eta_gap: EtaGapSpec = EtaGapSpec()

    @model_validator(mode="after")
    def _default_boundary_data(self):
        if self.boundary_data is None:
            if isinstance(self.domain, FlatCapSpec):
                self.boundary_data = FlatCutoffSpec(r1=self.domain.r1)
            else:
                self.boundary_data = CapCutoffSpec()
        if isinstance(self.boundary_data, FlatCutoffSpec) and not isinstance(self.domain, FlatCapSpec):
            raise ValueError("flat_cutoff data requires a flat_cap domain")
        if isinstance(self.boundary_data, CapCutoffSpec) and not isinstance(self.domain, BallSpec):
            raise ValueError("cap_cutoff data requires a ball domain")
        return self


def parse_config(document: Union[str, dict]) -> ExperimentConfig:
    """Validate an experiment document (JSON text or already-decoded dict)."""
    if isinstance(document, str):
        if not document.strip():
            raise ConfigError("config document is empty")
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from e
    if not isinstance(document, dict) or not document:
        raise ConfigError("config document must be a non-empty JSON object")
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        errors = [
            {"loc": ".".join(str(part) for part in err["loc"]), "msg": err["msg"]}
            for err in e.errors()
        ]
        raise ConfigError(f"{len(errors)} validation error(s) in config", errors) from e


def load_config(path: str) -> ExperimentConfig:
    """Read and validate an experiment config file."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r") as f:
        return parse_config(f.read())
