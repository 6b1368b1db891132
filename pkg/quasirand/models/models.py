"""Domain value types shared by the estimation, theory and simulation layers.

All models are frozen pydantic models. Array fields are copied into read-only float64
numpy arrays on construction, so instances can be shared freely between workers.
"""

from enum import Enum
from typing import Annotated, Any

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator

from quasirand.core.config import settings
from quasirand.core.exceptions import InputError


def _as_array(value: Any) -> np.ndarray:
    """Copy into a read-only float64 array."""
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _as_matrix(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


Vector = Annotated[np.ndarray, BeforeValidator(_as_array)]
Matrix = Annotated[np.ndarray, BeforeValidator(_as_matrix)]

FROZEN = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class MethodKind(str, Enum):
    """Participation-probability estimators."""

    CLW = "CLW"
    ILR = "ILR"
    PILR = "PILR"
    ALP = "ALP"


ONE_STEP_METHODS: tuple[MethodKind, ...] = (MethodKind.ILR, MethodKind.PILR, MethodKind.CLW)


class Overlap(str, Enum):
    """Covariate overlap between the convenience and reference samples."""

    HIGH = "high"
    LOW = "low"


class EstimatorKind(str, Enum):
    """How a design variance was obtained."""

    HANSEN_HURWITZ = "hansen_hurwitz"
    POISSON_THEORETICAL = "poisson_theoretical"


class PlugInConvention(str, Enum):
    """Which sample estimates the population sums of outcome-free matrices."""

    CONVENIENCE = "convenience"
    REFERENCE = "reference"


def design_row(x: Any) -> np.ndarray:
    """Prepend the intercept to a covariate vector."""
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"Non-finite covariate in {arr.tolist()}")
    return np.concatenate(([1.0], arr))


def design_matrix(x: Any) -> np.ndarray:
    """Row-wise design_row for an n×p covariate matrix."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(arr), axis=1))[0])
        raise InputError(f"Non-finite covariate in row {bad}")
    return np.column_stack((np.ones(arr.shape[0]), arr))


class FinitePopulation(BaseModel):
    """Covariates, outcomes and true selection probabilities of all N units."""

    x: Matrix
    y: Vector
    pi_c_true: Vector
    size_r: Vector
    pi_r_true: Vector

    model_config = FROZEN

    @model_validator(mode="after")
    def check_population(self) -> "FinitePopulation":
        n = self.x.shape[0]
        for name in ("y", "pi_c_true", "size_r", "pi_r_true"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        if not (np.all(self.pi_c_true > 0) and np.all(self.pi_c_true < 1)):
            raise ValueError("pi_c_true must lie in (0, 1)")
        if not (np.all(self.pi_r_true > 0) and np.all(self.pi_r_true <= 1)):
            raise ValueError("pi_r_true must lie in (0, 1]")
        if not np.all(self.size_r > 0):
            raise ValueError("size_r must be strictly positive")
        return self

    @property
    def N(self) -> int:  # noqa: N802
        return int(self.x.shape[0])

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    @property
    def mu(self) -> float:
        """Finite-population mean of y."""
        return float(np.mean(self.y))


class ObservedData(BaseModel):
    """Convenience and reference samples with known reference-design quantities."""

    conv_x: Matrix
    conv_y: Vector
    conv_pi_r: Vector | None = None
    ref_x: Matrix
    ref_pi_r: Vector
    ref_w: Vector | None = None

    model_config = FROZEN

    @model_validator(mode="before")
    @classmethod
    def fill_weights(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("ref_w") is None and data.get("ref_pi_r") is not None:
            data = {**data, "ref_w": 1.0 / np.asarray(data["ref_pi_r"], dtype=np.float64)}
        return data

    @model_validator(mode="after")
    def check_samples(self) -> "ObservedData":
        n_c, p = self.conv_x.shape
        n_r = self.ref_x.shape[0]
        if n_c < 1 or n_r < 1:
            raise ValueError("both samples need at least one unit")
        if self.ref_x.shape[1] != p:
            raise ValueError(f"covariate count differs: convenience {p}, reference {self.ref_x.shape[1]}")
        if self.conv_y.shape != (n_c,):
            raise ValueError(f"conv_y must have length {n_c}")
        if self.ref_pi_r.shape != (n_r,) or self.ref_w.shape != (n_r,):
            raise ValueError(f"ref_pi_r and ref_w must have length {n_r}")
        for name in ("conv_x", "conv_y", "ref_x"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if not (np.all(self.ref_pi_r > 0) and np.all(self.ref_pi_r <= 1)):
            raise ValueError("ref_pi_r must lie in (0, 1]")
        if not np.allclose(self.ref_w * self.ref_pi_r, 1.0, rtol=1e-12, atol=0.0):
            raise ValueError("ref_w must equal 1 / ref_pi_r")
        if self.conv_pi_r is not None:
            if self.conv_pi_r.shape != (n_c,):
                raise ValueError(f"conv_pi_r must have length {n_c}")
            if not (np.all(self.conv_pi_r > 0) and np.all(self.conv_pi_r <= 1)):
                raise ValueError("conv_pi_r must lie in (0, 1]")
        return self

    @classmethod
    def from_population(
        cls,
        pop: FinitePopulation,
        s_c: np.ndarray,
        s_r: np.ndarray,
        *,
        reference_is_population: bool = False,
    ) -> "ObservedData":
        """Build observed data from index sets drawn out of a population."""
        if reference_is_population:
            ref_pi = np.ones(pop.N)
            s_r = np.arange(pop.N)
            conv_pi = np.ones(len(s_c))
        else:
            ref_pi = pop.pi_r_true[s_r]
            conv_pi = pop.pi_r_true[s_c]
        return cls(
            conv_x=pop.x[s_c],
            conv_y=pop.y[s_c],
            conv_pi_r=conv_pi,
            ref_x=pop.x[s_r],
            ref_pi_r=ref_pi,
        )

    @property
    def n_c(self) -> int:
        return int(self.conv_x.shape[0])

    @property
    def n_r(self) -> int:
        return int(self.ref_x.shape[0])

    @property
    def p(self) -> int:
        return int(self.conv_x.shape[1])

    @property
    def conv_design(self) -> np.ndarray:
        return design_matrix(self.conv_x)

    @property
    def ref_design(self) -> np.ndarray:
        return design_matrix(self.ref_x)


class PropensityParams(BaseModel):
    """Coefficients of the participation model, intercept first."""

    beta: Vector

    model_config = FROZEN

    @field_validator("beta")
    @classmethod
    def check_finite(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 1 or v.size < 1:
            raise ValueError("beta must be a non-empty vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("beta has non-finite entries")
        return v

    @classmethod
    def zeros(cls, p: int) -> "PropensityParams":
        return cls(beta=np.zeros(p + 1))


class SolverConfig(BaseModel):
    """Fisher-scoring controls."""

    tol_score: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=100, ge=1)
    max_halvings: int = Field(default=20, ge=0)
    ridge: float = Field(default=0.0, ge=0)

    model_config = ConfigDict(frozen=True)

    @classmethod
    def from_settings(cls) -> "SolverConfig":
        return cls(
            tol_score=settings.TOL_SCORE,
            max_iter=settings.MAX_ITER,
            max_halvings=settings.MAX_HALVINGS,
            ridge=settings.RIDGE,
        )


class LinkEval(BaseModel):
    """Link values at a vector of linear predictors."""

    pi_c: Vector
    pi_z_or_delta: Vector
    d_pi_c_d_eta: Vector

    model_config = FROZEN


class PropensityFit(BaseModel):
    """Fitted participation model with solver diagnostics."""

    method: MethodKind
    beta_hat: PropensityParams
    pi_c_hat_conv: Vector
    converged: bool
    iterations: int = Field(ge=0)
    score_norm: float
    loglik: float
    info_matrix: Matrix
    separated: bool = False
    n_pi_c_above_one: int = 0
    loglik_path: tuple[float, ...] = ()
    beta_norm_path: tuple[float, ...] = ()

    model_config = FROZEN

    @model_validator(mode="after")
    def check_fit(self) -> "PropensityFit":
        pi = self.pi_c_hat_conv
        if self.method is MethodKind.ALP:
            if not np.all(pi > 0):
                raise ValueError("pi_c_hat_conv must be positive")
        elif not (np.all(pi > 0) and np.all(pi < 1)):
            raise ValueError("pi_c_hat_conv must lie in (0, 1)")
        info = self.info_matrix
        if np.all(np.isfinite(info)):
            scale = max(float(np.max(np.abs(info))), 1.0)
            if np.max(np.abs(info - info.T)) > 1e-10 * scale:
                raise ValueError("info_matrix must be symmetric")
        return self

    @property
    def beta(self) -> np.ndarray:
        return self.beta_hat.beta


class DesignVarianceEstimate(BaseModel):
    """Design variance of a weighted total over the reference sample."""

    matrix: Matrix
    estimator_kind: EstimatorKind
    estimable: bool = True

    model_config = FROZEN

    @model_validator(mode="after")
    def check_psd(self) -> "DesignVarianceEstimate":
        m = self.matrix
        scale = max(float(np.max(np.abs(m))), 1.0) if m.size else 1.0
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("design variance must be symmetric")
        if m.size and np.min(np.linalg.eigvalsh(m)) < -1e-8 * max(float(np.trace(m)), 1.0):
            raise ValueError("design variance must be positive semidefinite")
        return self


class VarianceComponents(BaseModel):
    """Matrices of the sandwich variance for one method."""

    H: Matrix
    A: Matrix
    C_vec: Vector
    D: Matrix
    b: Vector
    var_U_mu: float = Field(ge=0)
    n_hat: float = Field(gt=0)
    condition_number: float
    design_variance_estimable: bool = True

    model_config = FROZEN


class InferenceResult(BaseModel):
    """Hájek mean with plug-in variances."""

    mu_hat: float
    n_hat: float = Field(gt=0)
    var_mu: float
    var_beta: Matrix
    se_mu: float
    ci: tuple[float, float]
    components: VarianceComponents | None = None
    var_mu_clamped: bool = False

    model_config = FROZEN

    @property
    def variance_finite(self) -> bool:
        return bool(np.isfinite(self.var_mu))

    @property
    def design_variance_estimable(self) -> bool:
        return self.components is None or self.components.design_variance_estimable

    @property
    def se_beta(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.var_beta), 0.0, None))

    def covers(self, value: float) -> bool:
        """CI hit; an undefined interval never covers."""
        if not self.variance_finite:
            return False
        return self.ci[0] <= value <= self.ci[1]


class GridPoint(BaseModel):
    """Theoretical standard errors of all methods at one grid point."""

    f_c: float = Field(gt=0, le=1)
    f_r: float = Field(gt=0, le=1)
    overlap: Overlap
    se_beta: dict[MethodKind, float]
    se_mu: dict[MethodKind, float]

    model_config = ConfigDict(frozen=True)

    def ratio(self, num: MethodKind, den: MethodKind, *, parameter: str = "beta") -> float:
        table = self.se_beta if parameter == "beta" else self.se_mu
        return table[num] / table[den]


class ScenarioId(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"
    S6 = "S6"
    S7 = "S7"
    CUSTOM = "custom"


class ScenarioConfig(BaseModel):
    """One simulation setting."""

    id: ScenarioId
    N: int = Field(ge=10)
    beta_c0: float
    beta_c1: float = 1.0
    beta_r: float = 1.0
    f_r_target: float = Field(gt=0, le=1)
    reps: int = Field(default=1000, ge=1)
    master_seed: int = Field(default=0, ge=0, lt=2**64)
    reference_is_population: bool = False
    include_alp: bool = False

    model_config = ConfigDict(frozen=True, use_enum_values=False)

    @property
    def overlap(self) -> Overlap:
        return Overlap.HIGH if self.beta_r * self.beta_c1 >= 0 else Overlap.LOW

    @property
    def label(self) -> str:
        return f"{self.id.value}-{self.overlap.value}"

    @property
    def n_r(self) -> int:
        return self.N if self.reference_is_population else max(1, round(self.f_r_target * self.N))


class MethodEstimate(BaseModel):
    """One method's results in one replicate."""

    method: MethodKind
    beta_c1: float
    se_beta_c1: float
    mu_hat: float
    se_mu: float
    beta_covered: bool
    mu_covered: bool
    converged: bool
    variance_finite: bool
    var_mu_clamped: bool = False
    beta_hat: tuple[float, ...] = ()

    model_config = ConfigDict(frozen=True)


class ReplicateResult(BaseModel):
    rep_index: int
    n_c: int
    n_r: int
    estimates: list[MethodEstimate]

    model_config = ConfigDict(frozen=True)


class ParameterSummary(BaseModel):
    """Monte Carlo summary of one parameter for one method."""

    method: MethodKind
    parameter: str
    truth: float
    mean: float
    se: float
    mean_se_hat: float
    coverage_95: float
    rmse: float = Field(ge=0)
    nonconverged: int = 0
    inf_variance: int = 0
    n_used: int = 0

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_flags(self) -> "ParameterSummary":
        if not (np.isnan(self.coverage_95) or 0.0 <= self.coverage_95 <= 1.0):
            raise ValueError("coverage_95 must lie in [0, 1]")
        if np.isinf(self.mean_se_hat) and self.inf_variance == 0:
            raise ValueError("infinite mean_se_hat requires an inf-variance flag")
        return self

    @property
    def n_flags(self) -> int:
        return self.nonconverged + self.inf_variance


class MCSummary(BaseModel):
    """Aggregated Monte Carlo results of one scenario."""

    config: ScenarioConfig
    mu: float
    rows: list[ParameterSummary]
    replicates: list[ReplicateResult]
    flagged_methods: list[MethodKind] = Field(default_factory=list)

    model_config = ConfigDict(frozen=True)

    def get(self, method: MethodKind, parameter: str) -> ParameterSummary:
        for row in self.rows:
            if row.method is method and row.parameter == parameter:
                return row
        raise KeyError((method, parameter))
