"""Baselines: the CVaR inner approximation and DCA on the rank formulation."""
import logging
import time
from typing import Optional

import numpy as np

from app.core.config import settings
from app.core.exceptions import InfeasibleStartError, SubproblemInfeasibleError
from app.models.instance import ProblemInstance
from app.models.schemas import Algorithm, InnerStep, PenaltySchedule, SolveReport, default_schedule
from app.models.subproblem import SubproblemSpec, SubproblemStatus
from app.services.convex_service import SubproblemSolver, epigraph_rows, region_rows
from app.services.rank_service import as_point, phi_value, rank_functionals, scenario_values, subgradient_G2
from app.services.report_service import finalize_report

logger = logging.getLogger(__name__)


def cvar_epigraph_spec(instance: ProblemInstance, rhs: float, slope: Optional[np.ndarray] = None) -> SubproblemSpec:
    """min f(x) s.t. (m+1) eta + sum_s u_s - <slope, x> <= rhs, u_s >= h_{s,i}(x) - eta, u >= 0.

    Variables are (x, eta, u).
    """
    d, S, m = instance.d, instance.S, instance.m
    n = d + 1 + S
    budget = np.zeros(n)
    budget[d] = m + 1
    budget[d + 1:] = 1.0
    if slope is not None:
        budget[:d] = -slope
    A_epi, b_epi, quad_rows = epigraph_rows(instance, n, d, d + 1)
    A_reg, b_reg, E, e = region_rows(instance, 1 + S)

    P = np.zeros((n, n))
    P[:d, :d] = 2.0 * instance.objective.Q
    q = np.zeros(n)
    q[:d] = instance.objective.c
    lower = np.concatenate([instance.region.lower, [-np.inf], np.zeros(S)])
    upper = np.concatenate([instance.region.upper, [np.inf], np.full(S, np.inf)])
    return SubproblemSpec.build(
        P=P, q=q,
        A=np.vstack([A_reg, budget[None, :], A_epi]),
        b=np.concatenate([b_reg, [rhs], b_epi]),
        E=E, e=e, lower=lower, upper=upper,
        quad_rows=quad_rows,
    )


class BaselineService:
    """CVaR and DCA baselines sharing one subproblem solver per call."""

    def __init__(self):
        self.feas_tol = settings.FEAS_TOL

    def cvar(
        self,
        instance: ProblemInstance,
        tol: float = None,
        feas_tol: float = None,
        solver: Optional[SubproblemSolver] = None,
        run_certificates: bool = True,
    ) -> SolveReport:
        """Minimize f over the region subject to CVaR_alpha(g(x)) <= 0."""
        started = time.monotonic()
        feas_tol = self.feas_tol if feas_tol is None else feas_tol
        solver = solver or SubproblemSolver()
        solution = solver.solve(cvar_epigraph_spec(instance, 0.0), tol)
        if solution.status == SubproblemStatus.INFEASIBLE:
            logger.warning(f"cvar on '{instance.name}': approximation infeasible")
            return finalize_report(
                instance, Algorithm.CVAR, None, started, feas_tol,
                iterations=solution.iterations,
                message="CVaR approximation is infeasible",
            )
        x = np.clip(solution.x[:instance.d], instance.region.lower, instance.region.upper)
        return finalize_report(
            instance, Algorithm.CVAR, x, started, feas_tol,
            iterations=1,
            run_certificates=run_certificates,
            solver=solver,
        )

    def dca(
        self,
        instance: ProblemInstance,
        schedule: Optional[PenaltySchedule] = None,
        x0=None,
        solver: Optional[SubproblemSolver] = None,
    ) -> SolveReport:
        """DCA on G1 - G2 <= 0 started from a chance-feasible point.

        Only the tolerances and inner_max of the schedule are used. Without x0
        the CVaR solution is used as the starting point.
        """
        started = time.monotonic()
        schedule = schedule or default_schedule(Algorithm.DCA)
        feas_tol, subproblem_tol = schedule.feas_tol, schedule.subproblem_tol
        rel_tol = schedule.inner_rel_tol
        solver = solver or SubproblemSolver()
        if x0 is None:
            start = self.cvar(instance, subproblem_tol, feas_tol, solver, run_certificates=False)
            if start.x_best is None:
                raise InfeasibleStartError("no starting point: the CVaR approximation is infeasible")
            x = start.x_best.copy()
        else:
            x = as_point(instance, x0)

        phi = phi_value(instance, x)
        violation = instance.region.violation(x)
        if phi > feas_tol or violation > feas_tol:
            raise InfeasibleStartError(
                f"DCA start is not feasible: phi={phi:.3e}, region violation={violation:.3e}",
                {"phi": phi, "region_violation": violation},
            )

        inner_trace = []
        value_prev = instance.objective.value(x)
        warm = None
        iterations = 0
        for k in range(schedule.inner_max):
            slope = subgradient_G2(instance, x)
            G2_k = rank_functionals(scenario_values(instance, x), instance.risk).G2
            spec = cvar_epigraph_spec(instance, G2_k - float(slope @ x), slope)
            solution = solver.solve(spec, subproblem_tol, warm)
            if solution.status == SubproblemStatus.INFEASIBLE:
                raise SubproblemInfeasibleError(f"DCA subproblem infeasible at iteration {k}", {"iteration": k})
            warm = solution
            x = np.clip(solution.x[:instance.d], instance.region.lower, instance.region.upper)
            iterations += 1
            value = instance.objective.value(x)
            inner_trace.append(InnerStep(sigma=0.0, objective=value))
            logger.debug(f"dca iteration {k}: f={value:.10g}")
            if abs(value - value_prev) <= rel_tol * max(1.0, abs(value_prev)):
                break
            value_prev = value

        return finalize_report(
            instance, Algorithm.DCA, x, started, feas_tol,
            inner_trace=inner_trace,
            iterations=iterations,
            solver=solver,
        )


# Global instance
baseline_service = BaselineService()

cvar_baseline = baseline_service.cvar
dca_baseline = baseline_service.dca
