import logging
from typing import Any, Callable, Dict, Optional, Union

from pydantic import ValidationError

from app.core.exceptions import InvalidParameterError
from app.models.instance import ProblemInstance
from app.models.schemas import Algorithm, Family, PenaltySchedule, SolveReport, default_schedule
from app.services.baseline_service import cvar_baseline, dca_baseline
from app.services.convex_service import SubproblemSolver
from app.services.oracle_service import enumeration_oracle
from app.services.penalty_service import pendc_lifted, pendc_primal

logger = logging.getLogger(__name__)

ScheduleInput = Union[PenaltySchedule, Dict[str, Any], None]


class SolverService:
    """Runs any registered algorithm on an instance with a uniform signature."""

    def __init__(self):
        self._registry: Dict[Algorithm, Callable[..., SolveReport]] = {
            Algorithm.PENDC_P: self._run_primal,
            Algorithm.PENDC_L: self._run_lifted,
            Algorithm.DCA: self._run_dca,
            Algorithm.CVAR: self._run_cvar,
            Algorithm.ORACLE: self._run_oracle,
        }

    @property
    def algorithms(self):
        return list(self._registry)

    def resolve_schedule(
        self,
        algorithm: Algorithm,
        schedule: ScheduleInput = None,
        family: Optional[Family] = None,
    ) -> PenaltySchedule:
        if isinstance(schedule, PenaltySchedule):
            return schedule
        try:
            return default_schedule(algorithm, family, **(schedule or {}))
        except ValidationError as e:
            raise InvalidParameterError(
                "invalid penalty schedule",
                {"errors": [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]},
            ) from e

    def solve(
        self,
        instance: ProblemInstance,
        algorithm: Union[Algorithm, str],
        schedule: ScheduleInput = None,
        family: Optional[Family] = None,
        x0=None,
        z0=None,
        max_subsets: Optional[int] = None,
        jobs: int = 1,
    ) -> SolveReport:
        try:
            algorithm = Algorithm(algorithm)
        except ValueError as e:
            raise InvalidParameterError(
                f"unknown algorithm '{algorithm}'", {"algorithms": [a.value for a in Algorithm]}
            ) from e
        resolved = self.resolve_schedule(algorithm, schedule, family)
        logger.info(f"Running {algorithm.value} on '{instance.name}' (d={instance.d}, S={instance.S}, m={instance.m})")
        return self._registry[algorithm](
            instance, resolved, x0=x0, z0=z0, max_subsets=max_subsets, jobs=jobs,
        )

    def _run_primal(self, instance, schedule, x0=None, **_) -> SolveReport:
        return pendc_primal(instance, schedule, x0, SubproblemSolver())

    def _run_lifted(self, instance, schedule, z0=None, **_) -> SolveReport:
        return pendc_lifted(instance, schedule, z0, SubproblemSolver())

    def _run_dca(self, instance, schedule, x0=None, **_) -> SolveReport:
        return dca_baseline(instance, schedule, x0, SubproblemSolver())

    def _run_cvar(self, instance, schedule, **_) -> SolveReport:
        return cvar_baseline(instance, schedule.subproblem_tol, schedule.feas_tol, SubproblemSolver())

    def _run_oracle(self, instance, schedule, max_subsets=None, jobs=1, **_) -> SolveReport:
        return enumeration_oracle(instance, max_subsets, jobs, schedule.feas_tol, schedule.subproblem_tol)


# Global instance
solver_service = SolverService()
