from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings
from app.models.arrays import ArrayModel, FloatArray

# Slack on the reported-feasibility invariant prob >= 1 - alpha.
FEASIBILITY_SLACK = 1e-12


class Algorithm(str, Enum):
    PENDC_P = "pendc-p"
    PENDC_L = "pendc-l"
    DCA = "dca"
    CVAR = "cvar"
    ORACLE = "oracle"


class SolveStatus(str, Enum):
    FEASIBLE_STATIONARY = "feasible_stationary"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    BUDGET_EXHAUSTED = "budget_exhausted"

    @property
    def is_feasible(self) -> bool:
        return self in (SolveStatus.FEASIBLE_STATIONARY, SolveStatus.FEASIBLE)


class TableFormat(str, Enum):
    TEXT = "text"
    CSV = "csv"
    STRUCTURED = "structured"


class Family(str, Enum):
    NORM = "norm"
    TRANSPORT = "transport"
    PORTFOLIO = "portfolio"


class PenaltySchedule(BaseModel):
    sigma0: float = Field(..., gt=0, description="Initial penalty parameter")
    beta: float = Field(..., gt=1, description="Penalty growth factor per outer round")
    rho: float = Field(0.0, ge=0, description="Proximal weight")
    inner_rel_tol: float = Field(1e-6, gt=0)
    outer_max: int = Field(30, ge=1)
    inner_max: int = Field(500, ge=1)
    warmstart_caps: Tuple[int, int] = (1, 2)
    feas_tol: float = Field(default_factory=lambda: settings.FEAS_TOL, gt=0)
    subproblem_tol: float = Field(default_factory=lambda: settings.SUBPROBLEM_TOL, gt=0)
    record_iterates: bool = False
    random_start: bool = False
    seed: Optional[int] = None

    @field_validator("warmstart_caps")
    @classmethod
    def _caps_positive(cls, caps: Tuple[int, int]) -> Tuple[int, int]:
        if min(caps) < 1:
            raise ValueError("warm-start caps must be at least 1")
        return caps

    def inner_cap(self, outer_round: int) -> int:
        if outer_round < len(self.warmstart_caps):
            return min(self.warmstart_caps[outer_round], self.inner_max)
        return self.inner_max


# Per-family experiment defaults: (sigma0, beta, rho)
_SCHEDULE_DEFAULTS: Dict[Tuple[Algorithm, Optional[Family]], Tuple[float, float, float]] = {
    (Algorithm.PENDC_L, Family.PORTFOLIO): (5e-3, 4.0, 1e-4),
    (Algorithm.PENDC_P, Family.PORTFOLIO): (3e-3, 1.5, 0.0),
    (Algorithm.PENDC_P, Family.NORM): (4e-3, 15.0, 0.0),
    (Algorithm.PENDC_L, Family.NORM): (8e-5, 10.0, 1e-3),
    (Algorithm.PENDC_L, None): (5e-3, 4.0, 1e-4),
    (Algorithm.PENDC_P, None): (3e-3, 1.5, 0.0),
}


def default_schedule(algorithm: Algorithm, family: Optional[Family] = None, **overrides: Any) -> PenaltySchedule:
    """Schedule with the experiment defaults for an algorithm/family pair."""
    sigma0, beta, rho = _SCHEDULE_DEFAULTS.get(
        (algorithm, family), _SCHEDULE_DEFAULTS.get((algorithm, None), (1.0, 2.0, 0.0))
    )
    values: Dict[str, Any] = {"sigma0": sigma0, "beta": beta, "rho": rho}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PenaltySchedule(**values)


class SigmaStep(BaseModel):
    sigma: float
    inner_iterations: int
    objective: float


class InnerStep(ArrayModel):
    sigma: float
    objective: float
    x: Optional[FloatArray] = None
    z: Optional[FloatArray] = None


class StationarityCertificate(BaseModel):
    positive: bool
    relaxed_value: Optional[float] = None
    point_value: float
    I_y: List[int] = Field(default_factory=list)
    I_z: List[int] = Field(default_factory=list)
    I_0: List[int] = Field(default_factory=list)


class Certificates(BaseModel):
    strong_stationarity: Optional[StationarityCertificate] = None
    strict_gap: Optional[bool] = None


class SolveReport(ArrayModel):
    algorithm: Algorithm
    x_best: Optional[FloatArray] = None
    fval: Optional[float] = None
    empirical_prob: float = 0.0
    alpha: float
    status: SolveStatus
    sigma_trace: List[SigmaStep] = Field(default_factory=list)
    inner_trace: List[InnerStep] = Field(default_factory=list)
    penalty_residual: float = 0.0
    wall_time: float = 0.0
    certificates: Optional[Certificates] = None
    instance_hash: str = ""
    iterations: int = 0
    drop_set: Optional[List[int]] = None
    drop_set_ties: Optional[List[List[int]]] = None
    message: str = ""

    @model_validator(mode="after")
    def _feasible_means_probable(self) -> "SolveReport":
        if self.status.is_feasible and self.empirical_prob < 1.0 - self.alpha - FEASIBILITY_SLACK:
            raise ValueError(
                f"status {self.status.value} with empirical_prob {self.empirical_prob} < 1 - alpha"
            )
        return self


# Generator parameters
class NormParams(BaseModel):
    d: int = Field(20, ge=1)
    mcons: int = Field(20, ge=1)
    theta: float = Field(100.0, gt=0)
    S: int = Field(50, ge=1)
    alpha: float = Field(0.05, gt=0, lt=1)
    upper: Optional[float] = Field(None, gt=0)


class TransportParams(BaseModel):
    n: int = Field(2, ge=1)
    m_cust: int = Field(2, ge=1)
    S: int = Field(4, ge=1)
    alpha: float = Field(0.25, gt=0, lt=1)
    demand_loc: float = 0.0
    demand_scale: float = Field(0.25, gt=0)
    cost_low: float = Field(1.0, ge=0)
    cost_high: float = Field(10.0, gt=0)
    capacity_factor: float = Field(2.0, gt=0)


class PortfolioParams(BaseModel):
    n: int = Field(5, ge=2)
    S: int = Field(50, ge=1)
    alpha: float = Field(0.05, gt=0, lt=1)
    gamma: float = Field(1.0, ge=0)
    target: float = 0.0
    upper: Optional[float] = Field(None, gt=0)
    n_factors: int = Field(2, ge=1)
    returns_csv: Optional[str] = None


FAMILY_PARAMS = {
    Family.NORM: NormParams,
    Family.TRANSPORT: TransportParams,
    Family.PORTFOLIO: PortfolioParams,
}


# Benchmark harness
class InstanceSource(BaseModel):
    path: Optional[str] = None
    family: Optional[Family] = None
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _one_source(self) -> "InstanceSource":
        if (self.path is None) == (self.family is None):
            raise ValueError("instance source needs exactly one of 'path' or 'family'")
        return self


class PlanEntry(BaseModel):
    id: str
    instance: InstanceSource
    algorithm: Algorithm
    schedule: Dict[str, Any] = Field(default_factory=dict)
    repetitions: int = Field(1, ge=1)
    seed_base: Optional[int] = None


class BenchmarkPlan(BaseModel):
    entries: List[PlanEntry] = Field(default_factory=list)
    output: str = Field(default_factory=lambda: settings.OUTPUT_DIR)
    format: TableFormat = TableFormat.TEXT

    @model_validator(mode="after")
    def _unique_ids(self) -> "BenchmarkPlan":
        ids = [entry.id for entry in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("plan entry ids must be unique")
        return self


class EnvironmentStamp(BaseModel):
    version: str
    seed: int
    timestamp: datetime


class RunRecord(BaseModel):
    entry_id: str
    repetition: int
    family: str
    S: int
    alpha: float
    algorithm: Algorithm
    report: Optional[SolveReport] = None
    error: Optional[str] = None
    environment: EnvironmentStamp
    instance_hash: str

    @property
    def solved(self) -> bool:
        return self.report is not None and self.report.status.is_feasible
