import logging
import time
from typing import List, Optional, Sequence

import numpy as np

from app.core.exceptions import EngineError, PreconditionError
from app.models.instance import ProblemInstance
from app.models.schemas import (
    Algorithm,
    InnerStep,
    PenaltySchedule,
    SigmaStep,
    SolveReport,
    SolveStatus,
    FEASIBILITY_SLACK,
)
from app.services.convex_service import SubproblemSolver, project_onto_region
from app.services.instance_service import canonical_hash
from app.services.rank_service import as_point, empirical_probability
from app.services.stationarity_service import certify

logger = logging.getLogger(__name__)


def initial_point(
    instance: ProblemInstance,
    schedule: PenaltySchedule,
    x0=None,
    solver: Optional[SubproblemSolver] = None,
) -> np.ndarray:
    """Starting point in the region: x0 if given, else a seeded draw or the box midpoint."""
    region = instance.region
    if x0 is not None:
        point = as_point(instance, x0)
    else:
        lower = np.where(np.isfinite(region.lower), region.lower, -1.0)
        upper = np.where(np.isfinite(region.upper), region.upper, 1.0)
        lower, upper = np.minimum(lower, upper), np.maximum(lower, upper)
        if schedule.random_start:
            rng = np.random.default_rng(schedule.seed)
            point = rng.uniform(lower, upper)
        else:
            point = 0.5 * (lower + upper)
    return project_onto_region(instance, point, solver)


def is_chance_feasible(instance: ProblemInstance, prob: float) -> bool:
    return prob >= 1.0 - instance.alpha - FEASIBILITY_SLACK


def finalize_report(
    instance: ProblemInstance,
    algorithm: Algorithm,
    x: Optional[np.ndarray],
    started: float,
    feas_tol: float,
    status: Optional[SolveStatus] = None,
    sigma_trace: Sequence[SigmaStep] = (),
    inner_trace: Sequence[InnerStep] = (),
    penalty_residual: float = 0.0,
    iterations: int = 0,
    run_certificates: bool = True,
    solver: Optional[SubproblemSolver] = None,
    message: str = "",
    drop_set: Optional[List[int]] = None,
    drop_set_ties: Optional[List[List[int]]] = None,
) -> SolveReport:
    """Assemble a SolveReport, deriving feasibility and running the certificates."""
    fields = dict(
        algorithm=algorithm,
        alpha=instance.alpha,
        sigma_trace=list(sigma_trace),
        inner_trace=list(inner_trace),
        penalty_residual=float(penalty_residual),
        iterations=iterations,
        instance_hash=canonical_hash(instance),
        drop_set=drop_set,
        drop_set_ties=drop_set_ties,
        message=message,
    )
    if x is None:
        fields.update(status=status or SolveStatus.INFEASIBLE, wall_time=time.monotonic() - started)
        return SolveReport(**fields)

    prob = empirical_probability(instance, x, feas_tol)
    feasible = is_chance_feasible(instance, prob)
    if status is None or (status.is_feasible and not feasible):
        status = SolveStatus.FEASIBLE if feasible else SolveStatus.INFEASIBLE

    certificates = None
    if run_certificates and status == SolveStatus.FEASIBLE:
        try:
            certificates = certify(instance, x, feas_tol, solver)
        except (PreconditionError, EngineError) as e:
            logger.warning(f"{algorithm.value}: certification skipped: {e.message}")
        if certificates is not None and certificates.strong_stationarity.positive:
            status = SolveStatus.FEASIBLE_STATIONARY

    fields.update(
        x_best=x,
        fval=instance.objective.value(x),
        empirical_prob=prob,
        status=status,
        certificates=certificates,
        wall_time=time.monotonic() - started,
    )
    report = SolveReport(**fields)
    logger.info(
        f"{algorithm.value} on '{instance.name}': status={report.status.value} "
        f"fval={report.fval:.8g} prob={prob:.4g} time={report.wall_time:.3f}s"
    )
    return report
