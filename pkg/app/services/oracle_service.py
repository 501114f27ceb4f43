"""Exact solution by enumerating every drop set of size m."""
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from math import comb
from typing import Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import BudgetExceededError, InvalidParameterError
from app.models.instance import ProblemInstance
from app.models.schemas import Algorithm, SolveReport
from app.models.subproblem import SubproblemStatus
from app.services.convex_service import SubproblemSolver, build_scenario_program
from app.services.rank_service import scenario_values
from app.services.report_service import finalize_report

logger = logging.getLogger(__name__)

# Objective values within this relative distance count as ties.
TIE_TOL = 1e-9

Candidate = Tuple[float, Tuple[int, ...], np.ndarray]


class EnumerationOracle:
    def __init__(self, instance: ProblemInstance, feas_tol: float, subproblem_tol: float):
        self.instance = instance
        self.feas_tol = feas_tol
        self.subproblem_tol = subproblem_tol
        self._local = threading.local()

    def _solver(self) -> SubproblemSolver:
        solver = getattr(self._local, "solver", None)
        if solver is None:
            solver = self._local.solver = SubproblemSolver()
        return solver

    def evaluate(self, drop: Tuple[int, ...]) -> Optional[Candidate]:
        instance = self.instance
        dropped = set(drop)
        enforced = [s for s in range(instance.S) if s not in dropped]
        solution = self._solver().solve(build_scenario_program(instance, enforced), self.subproblem_tol)
        if solution.status == SubproblemStatus.INFEASIBLE:
            return None
        x = np.clip(solution.x, instance.region.lower, instance.region.upper)
        values = scenario_values(instance, x).values
        if enforced and values[enforced].max() > self.feas_tol:
            return None
        if instance.region.violation(x) > self.feas_tol:
            return None
        return instance.objective.value(x), drop, x


def enumeration_oracle(
    instance: ProblemInstance,
    max_subsets: int = None,
    jobs: int = 1,
    feas_tol: float = None,
    subproblem_tol: float = None,
) -> SolveReport:
    """Solve one convex program per drop set and keep the best.

    Ties within TIE_TOL go to the lexicographically smallest drop set; all
    tied drop sets are listed in the report.
    """
    started = time.monotonic()
    cap = settings.ORACLE_MAX_SUBSETS if max_subsets is None else max_subsets
    feas_tol = settings.FEAS_TOL if feas_tol is None else feas_tol
    if jobs < 1:
        raise InvalidParameterError(f"jobs must be at least 1, got {jobs}")
    count = comb(instance.S, instance.m)
    if count > cap:
        raise BudgetExceededError(
            f"C({instance.S}, {instance.m}) = {count} drop sets exceeds the cap of {cap}",
            {"subsets": count, "cap": cap},
        )
    logger.info(f"oracle on '{instance.name}': enumerating {count} drop sets with {jobs} worker(s)")

    oracle = EnumerationOracle(instance, feas_tol, subproblem_tol)
    subsets = combinations(range(instance.S), instance.m)
    if jobs == 1:
        results = [oracle.evaluate(drop) for drop in subsets]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(oracle.evaluate, subsets))
    candidates = [c for c in results if c is not None]

    if not candidates:
        return finalize_report(
            instance, Algorithm.ORACLE, None, started, feas_tol,
            iterations=count,
            message="every drop set leaves an infeasible program",
        )

    best_value = min(c[0] for c in candidates)
    band = TIE_TOL * max(1.0, abs(best_value))
    tied = sorted((c for c in candidates if c[0] <= best_value + band), key=lambda c: c[1])
    _, drop, x = tied[0]
    return finalize_report(
        instance, Algorithm.ORACLE, x, started, feas_tol,
        iterations=count,
        drop_set=list(drop),
        drop_set_ties=[list(c[1]) for c in tied],
    )
