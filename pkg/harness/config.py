from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from estimators.config import DebiasConfig, FitConfig
from estimators.selector import get_available_estimators
from harness.checks import ID_WORLDS


class Dgp(str, Enum):
    continuous = "continuous"
    exact_id = "exact-id"


class SweepConfig(BaseModel):
    """A Monte Carlo sweep over the (K, n) grid, read from the --config JSON."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    dgp: Dgp = Dgp.continuous
    K_grid: List[int] = Field([25, 100, 400], alias="K", min_length=1)
    n_grid: List[int] = Field([30], alias="n", min_length=1)
    n_new: int = Field(500, ge=1)
    R: int = Field(200, ge=1)
    estimators: List[str] = Field(default_factory=lambda: ["plugin-md", "npjive+onestep-exact"], min_length=1)
    # None picks default_configs(n) for each n
    fit: Optional[FitConfig] = None
    debias: Optional[DebiasConfig] = None
    # extra DGP parameters, e.g. {"sigma_u": 0.0} or {"mu_new": [...]}
    dgp_options: Dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(0, ge=0)
    level: float = Field(0.95, gt=0.0, lt=1.0)
    out: Path = Path("out/sweep.csv")
    # recorded with the sweep settings; no estimator reads it
    w: int = 3
    # timings vary between identical runs, so mean_runtime_ms is 0 unless this is set
    record_timing: bool = False

    @field_validator("K_grid", "n_grid")
    def check_grid(cls, grid: List[int]) -> List[int]:
        if min(grid) < 1:
            raise ValueError(f"grid values must be positive, got {grid}")
        return sorted(set(grid))

    @field_validator("estimators")
    def check_estimators(cls, estimators: List[str]) -> List[str]:
        unknown = [e for e in estimators if e not in get_available_estimators()]
        if unknown:
            raise ValueError(f"unknown estimators {unknown}; available: {get_available_estimators()}")
        return estimators


class FitRequest(BaseModel):
    """A single fit, on CSV files or on one simulated dataset."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    estimator: str = "npjive+onestep-exact"
    historical: Optional[Path] = None
    novel: Optional[Path] = None
    dgp: Optional[Dgp] = None
    K: int = Field(100, ge=1)
    n: int = Field(30, ge=1)
    n_new: int = Field(500, ge=1)
    seed: int = Field(0, ge=0)
    fit: Optional[FitConfig] = None
    debias: Optional[DebiasConfig] = None
    dgp_options: Dict[str, Any] = Field(default_factory=dict)
    level: float = Field(0.95, gt=0.0, lt=1.0)

    @field_validator("estimator")
    def check_estimator(cls, estimator: str) -> str:
        if estimator not in get_available_estimators():
            raise ValueError(f"unknown estimator {estimator}; available: {get_available_estimators()}")
        return estimator

    @model_validator(mode="after")
    def check_source(self) -> "FitRequest":
        files = self.historical is not None or self.novel is not None
        if files and (self.historical is None or self.novel is None):
            raise ValueError("--historical and --novel must be given together")
        if files == (self.dgp is not None):
            raise ValueError("give either CSV files or a DGP, not both or neither")
        return self


class CheckConfig(BaseModel):
    """Settings of `oracle-check`, read from the --config JSON."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    worlds: int = Field(50, ge=1)
    id_worlds: int = Field(ID_WORLDS, ge=1)
    seed: int = Field(0, ge=0)


class McRow(BaseModel):
    """One summary row per (estimator, K, n)."""

    estimator: str
    K: int
    n: int
    n_new: int
    R: int
    theta_true: float
    bias: float
    bias_sq: float
    variance: float
    mse: float
    mean_se: float
    coverage95: float = Field(ge=0.0, le=1.0)
    mean_runtime_ms: float
    failures: int = Field(ge=0)
    median_sq_error: float


class ReplicationRow(BaseModel):
    estimator: str
    K: int
    n: int
    rep: int
    theta: Optional[float] = None
    theta_true: float
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    runtime_ms: float = 0.0
    error: str = ""
