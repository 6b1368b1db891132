"""Pydantic schemas for files and command-line input/output."""

import math
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from quasirand.models.models import MethodKind, Overlap, PlugInConvention, ScenarioId


class Command(str, Enum):
    """Command-line subcommands."""

    SIMULATE = "simulate"
    NUMSTUDY = "numstudy"
    ESTIMATE = "estimate"
    VERIFY = "verify"


def _finite(v: float) -> float:
    if not math.isfinite(v):
        raise ValueError("must be a finite number")
    return v


class ConvenienceCSVRow(BaseModel):
    """Schema for validating a convenience-sample CSV row."""

    y: float
    covariates: list[float] = Field(..., min_length=0)
    pi_r: float | None = Field(None, gt=0, le=1)

    @field_validator("y")
    @classmethod
    def validate_y(cls, v: float) -> float:
        """Outcomes must be finite."""
        return _finite(v)

    @field_validator("covariates")
    @classmethod
    def validate_covariates(cls, v: list[float]) -> list[float]:
        """Covariates must be finite."""
        return [_finite(c) for c in v]

    model_config = ConfigDict(str_strip_whitespace=True)


class ReferenceCSVRow(BaseModel):
    """Schema for validating a reference-sample CSV row."""

    covariates: list[float]
    pi_r: float = Field(..., gt=0, le=1)

    @field_validator("covariates")
    @classmethod
    def validate_covariates(cls, v: list[float]) -> list[float]:
        """Covariates must be finite."""
        return [_finite(c) for c in v]

    model_config = ConfigDict(str_strip_whitespace=True)


class ValidationError(BaseModel):
    """Schema for validation error details."""

    row_number: int
    field: str | None = None
    error: str
    raw_data: dict[str, str | None] | None = None

    def __str__(self) -> str:
        where = f"row {self.row_number}" + (f", column {self.field}" if self.field else "")
        return f"{where}: {self.error}"


class MethodDiagnostics(BaseModel):
    """Solver and variance diagnostics of one method."""

    converged: bool
    separated: bool
    iterations: int
    score_norm: float
    loglik: float
    n_pi_c_above_one: int
    variance_finite: bool
    var_mu_clamped: bool
    design_variance_estimable: bool = True
    n_hat: float


class MethodResult(BaseModel):
    """Estimation result of one method."""

    method: MethodKind
    mu_hat: float
    se: float | None
    ci: tuple[float | None, float | None]
    beta_hat: list[float]
    se_beta: list[float | None]
    diagnostics: MethodDiagnostics


class EstimateResponse(BaseModel):
    """Versioned JSON document written by ``estimate``."""

    schema_version: int = Field(1, serialization_alias="schema")
    n_c: int
    n_r: int
    covariates: list[str]
    results: list[MethodResult]

    model_config = ConfigDict(ser_json_inf_nan="null")


class SummaryRow(BaseModel):
    """Row of summary.csv."""

    scenario: str
    overlap: Overlap
    method: MethodKind
    parameter: str
    mean: float
    se: float
    se_hat: float
    coverage: float
    rmse: float
    n_flags: int

    model_config = ConfigDict(use_enum_values=True)


class ReplicateRow(BaseModel):
    """Row of replicates.csv, long format for relative-bias boxplots."""

    scenario: str
    overlap: Overlap
    method: MethodKind
    rep: int
    parameter: str
    estimate: float
    se_hat: float
    rel_bias: float
    converged: bool

    model_config = ConfigDict(use_enum_values=True)


class GridRow(BaseModel):
    """Row of the numerical-study CSV."""

    f_c: float
    f_r: float
    overlap: Overlap
    method: MethodKind
    se_beta: float
    se_mu: float

    model_config = ConfigDict(use_enum_values=True)


class HistogramRow(BaseModel):
    """Row of overlap_hist.csv."""

    overlap: Overlap
    bin_low: float
    bin_high: float
    conv_count: int
    ref_count: int

    model_config = ConfigDict(use_enum_values=True)


class CheckResult(BaseModel):
    """Outcome of one verification check."""

    name: str
    configuration: str
    error: float
    passed: bool


class GridSpec(BaseModel):
    """Sampling-fraction grid of the numerical study."""

    f_c: list[float] = Field(default_factory=lambda: [0.05, 0.19, 0.51, 0.85], min_length=1)
    f_r: list[float] = Field(
        default_factory=lambda: [0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        min_length=1,
    )

    @field_validator("f_c", "f_r")
    @classmethod
    def validate_fractions(cls, v: list[float]) -> list[float]:
        """Fractions must lie in (0, 1]."""
        for f in v:
            if not 0 < f <= 1:
                raise ValueError(f"fraction {f} outside (0, 1]")
        return v


class CliConfig(BaseModel):
    """Validated command-line arguments."""

    command: Command
    scenario: ScenarioId | None = None
    overlap: list[Overlap] = Field(default_factory=lambda: [Overlap.HIGH], min_length=1)
    reps: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    methods: list[MethodKind] | None = None
    convention: PlugInConvention = PlugInConvention.CONVENIENCE
    convenience: Path | None = None
    reference: Path | None = None
    out: Path | None = None
    grid: GridSpec = Field(default_factory=GridSpec)
    population_size: int = Field(100_000, ge=10)
    threads: int = Field(1, ge=1)
    include_alp: bool = False
    n_max: int = Field(4, ge=2, le=6)

    @field_validator("methods")
    @classmethod
    def validate_methods(cls, v: list[MethodKind] | None) -> list[MethodKind] | None:
        """At least one method when given, duplicates dropped."""
        if v is None:
            return v
        if not v:
            raise ValueError("method list must not be empty")
        return list(dict.fromkeys(v))

    @field_validator("overlap")
    @classmethod
    def validate_overlap(cls, v: list[Overlap]) -> list[Overlap]:
        return list(dict.fromkeys(v))

    @model_validator(mode="after")
    def check_command_inputs(self) -> "CliConfig":
        if self.command is Command.SIMULATE and self.scenario is None:
            raise ValueError("simulate needs --scenario")
        if self.command is Command.ESTIMATE and (self.convenience is None or self.reference is None):
            raise ValueError("estimate needs --convenience and --reference")
        if self.command is Command.NUMSTUDY and self.methods and MethodKind.ALP in self.methods:
            raise ValueError("ALP has no theoretical variance")
        return self
