"""Penalty DC algorithms for SAA chance-constrained programs.

Both algorithms run an increasing penalty schedule sigma_0 * beta^k. The
primal variant penalizes [phi(x)]_+ written as a DC function; the lifted
variant penalizes the bilinear complementarity y'z over (x, y, z).
"""
import logging
import time
from typing import Optional, Tuple

import numpy as np

from app.core.exceptions import DimensionMismatchError, EngineError
from app.models.instance import ProblemInstance
from app.models.points import DualPoint
from app.models.schemas import Algorithm, InnerStep, PenaltySchedule, SigmaStep, SolveReport, SolveStatus
from app.models.subproblem import CompositeTerm, SubproblemSolution, SubproblemSpec, SubproblemStatus
from app.services.convex_service import SubproblemSolver, epigraph_rows, region_rows
from app.services.rank_service import (
    empirical_probability,
    lifted_penalty,
    phi_value,
    project_onto_C,
    rank_functionals,
    scenario_values,
    subgradient_G2,
    vertex_dual_update,
)
from app.services.report_service import finalize_report, initial_point, is_chance_feasible

logger = logging.getLogger(__name__)


def _converged(previous: Optional[float], current: float, rel_tol: float) -> bool:
    return previous is not None and abs(previous - current) <= rel_tol * max(1.0, abs(previous))


def _require_solution(solution: SubproblemSolution, what: str) -> None:
    if solution.status == SubproblemStatus.INFEASIBLE:
        raise EngineError(f"{what} reported infeasible on a nonempty region")


class PrimalSubproblemBuilder:
    """Convex model of f + sigma [phi]_+ linearized at x^k.

    Variables are (x, t, eta1, u, eta2, v): t bounds both CVaR epigraphs of
    G1 = top-(m+1) sum and G2 = top-m sum, so t >= max(G1, G2) and the model
    term is sigma * (t - G2(x^k) - <n, x - x^k>). With m = 0 the G2 block is
    dropped and t >= 0.
    """

    def __init__(self, instance: ProblemInstance, rho: float):
        self.instance = instance
        self.rho = rho
        d, S, m = instance.d, instance.S, instance.m
        self.t_col = d
        eta1, u1 = d + 1, d + 2
        self.n = d + 2 + S + (1 + S if m > 0 else 0)
        n = self.n

        sum_rows = []
        row = np.zeros(n)
        row[eta1] = m + 1
        row[u1:u1 + S] = 1.0
        row[self.t_col] = -1.0
        sum_rows.append(row)
        A1, b1, quad1 = epigraph_rows(instance, n, eta1, u1)
        blocks_A, blocks_b, quad_rows = [A1], [b1], list(quad1)
        if m > 0:
            eta2, u2 = d + 2 + S, d + 3 + S
            row = np.zeros(n)
            row[eta2] = m
            row[u2:u2 + S] = 1.0
            row[self.t_col] = -1.0
            sum_rows.append(row)
            A2, b2, quad2 = epigraph_rows(instance, n, eta2, u2)
            blocks_A.append(A2)
            blocks_b.append(b2)
            quad_rows.extend(quad2)

        A_reg, b_reg, E, e = region_rows(instance, n - d)
        self.A = np.vstack([A_reg, np.array(sum_rows)] + blocks_A)
        self.b = np.concatenate([b_reg, np.zeros(len(sum_rows))] + blocks_b)
        self.E, self.e = E, e
        self.quad_rows = quad_rows

        self.lower = np.full(n, -np.inf)
        self.upper = np.full(n, np.inf)
        self.lower[:d] = instance.region.lower
        self.upper[:d] = instance.region.upper
        if m == 0:
            self.lower[self.t_col] = 0.0
        self.lower[u1:u1 + S] = 0.0
        if m > 0:
            self.lower[d + 3 + S:] = 0.0

        self.P = np.zeros((n, n))
        self.P[:d, :d] = 2.0 * instance.objective.Q + rho * np.eye(d)

    def build(self, x_k: np.ndarray, sigma: float) -> SubproblemSpec:
        instance, d = self.instance, self.instance.d
        n_k = subgradient_G2(instance, x_k)
        G2_k = rank_functionals(scenario_values(instance, x_k), instance.risk).G2
        q = np.zeros(self.n)
        q[:d] = instance.objective.c - sigma * n_k - self.rho * x_k
        q[self.t_col] = sigma
        constant = 0.5 * self.rho * float(x_k @ x_k) + sigma * (float(n_k @ x_k) - G2_k)
        return SubproblemSpec.build(
            P=self.P, q=q, constant=constant,
            A=self.A, b=self.b, E=self.E, e=self.e,
            lower=self.lower, upper=self.upper,
            quad_rows=self.quad_rows,
        )


def primal_merit(instance: ProblemInstance, x: np.ndarray, sigma: float) -> float:
    """f(x) + sigma [phi(x)]_+"""
    return instance.objective.value(x) + sigma * max(phi_value(instance, x), 0.0)


def _lifted_affine_spec(instance: ProblemInstance, z: np.ndarray, sigma: float) -> SubproblemSpec:
    """Variables (x, y): min f(x) + sigma <z, y> s.t. h_{s,i}(x) <= y_s, y >= 0."""
    d, S = instance.d, instance.S
    scen = instance.scenarios
    n = d + S
    rows = np.zeros((S * scen.I, n))
    rows[:, :d] = scen.lin.reshape(S * scen.I, d)
    rows[np.arange(S * scen.I), d + np.repeat(np.arange(S), scen.I)] = -1.0
    A_reg, b_reg, E, e = region_rows(instance, S)
    P = np.zeros((n, n))
    P[:d, :d] = 2.0 * instance.objective.Q
    lower = np.concatenate([instance.region.lower, np.zeros(S)])
    upper = np.concatenate([instance.region.upper, np.full(S, np.inf)])
    return SubproblemSpec.build(
        P=P,
        q=np.concatenate([instance.objective.c, sigma * z]),
        A=np.vstack([A_reg, rows]),
        b=np.concatenate([b_reg, -scen.offset.ravel()]),
        E=E, e=e, lower=lower, upper=upper,
    )


def _lifted_composite_spec(instance: ProblemInstance, z: np.ndarray, sigma: float) -> SubproblemSpec:
    """min f(x) + sigma sum_s z_s [g_s(x)]_+ with y eliminated."""
    scen = instance.scenarios
    A, b, E, e = region_rows(instance)
    terms = [
        CompositeTerm(weight=sigma * float(z[s]), quad=scen.quad[s], lin=scen.lin[s], offset=scen.offset[s])
        for s in range(instance.S)
    ]
    return SubproblemSpec.build(
        P=2.0 * instance.objective.Q, q=instance.objective.c,
        A=A, b=b, E=E, e=e,
        lower=instance.region.lower, upper=instance.region.upper,
        composite=terms,
    )



def selector_vector(instance: ProblemInstance, z) -> np.ndarray:
    """z as a length-S float vector."""
    zv = z.z if isinstance(z, DualPoint) else np.asarray(z, dtype=float)
    if zv.shape != (instance.S,):
        raise DimensionMismatchError(
            f"selector has shape {zv.shape}, instance expects ({instance.S},)",
            {"expected": instance.S, "got": list(zv.shape)},
        )
    return zv


class PenaltyService:
    """Primal and lifted penalty DC solvers."""

    def pendc_primal(
        self,
        instance: ProblemInstance,
        schedule: PenaltySchedule,
        x0=None,
        solver: Optional[SubproblemSolver] = None,
    ) -> SolveReport:
        started = time.monotonic()
        solver = solver or SubproblemSolver()
        region = instance.region
        builder = PrimalSubproblemBuilder(instance, schedule.rho)
        x = initial_point(instance, schedule, x0, solver)

        sigma = schedule.sigma0
        sigma_trace, inner_trace = [], []
        iterations = 0
        status = SolveStatus.BUDGET_EXHAUSTED
        warm = None
        for outer in range(schedule.outer_max):
            merit_prev = primal_merit(instance, x, sigma)
            merit = merit_prev
            inner = 0
            for _ in range(schedule.inner_cap(outer)):
                solution = solver.solve(builder.build(x, sigma), schedule.subproblem_tol, warm)
                _require_solution(solution, "primal penalty subproblem")
                warm = solution
                x = np.clip(solution.x[:instance.d], region.lower, region.upper)
                merit = primal_merit(instance, x, sigma)
                inner += 1
                iterations += 1
                inner_trace.append(InnerStep(sigma=sigma, objective=merit, x=x if schedule.record_iterates else None))
                if _converged(merit_prev, merit, schedule.inner_rel_tol):
                    break
                merit_prev = merit

            sigma_trace.append(SigmaStep(sigma=sigma, inner_iterations=inner, objective=merit))
            residual = max(phi_value(instance, x), 0.0)
            prob = empirical_probability(instance, x, schedule.feas_tol)
            logger.info(
                f"pendc-p round {outer}: sigma={sigma:.4g} inner={inner} F={merit:.8g} "
                f"[phi]+={residual:.3e} prob={prob:.4g}"
            )
            if is_chance_feasible(instance, prob) and residual <= schedule.feas_tol:
                status = None
                break
            sigma *= schedule.beta

        return finalize_report(
            instance, Algorithm.PENDC_P, x, started, schedule.feas_tol,
            status=status,
            sigma_trace=sigma_trace,
            inner_trace=inner_trace,
            penalty_residual=max(phi_value(instance, x), 0.0),
            iterations=iterations,
            solver=solver,
            message="" if status is None else f"no feasible point after {schedule.outer_max} penalty rounds",
        )

    def inner_xy_solve(
        self,
        instance: ProblemInstance,
        z: DualPoint,
        sigma: float,
        warm: Optional[SubproblemSolution] = None,
        solver: Optional[SubproblemSolver] = None,
        tol: float = None,
    ) -> Tuple[np.ndarray, np.ndarray, SubproblemSolution]:
        """Minimize f(x) + sigma <z, y> over x in the region and y >= [g(x)]_+.

        Returns (x, y, solution) with y pinned to [g(x)]_+, its optimal value for
        the returned x.
        """
        solver = solver or SubproblemSolver()
        zv = selector_vector(instance, z)
        if instance.scenarios.is_affine:
            spec = _lifted_affine_spec(instance, zv, sigma)
        else:
            spec = _lifted_composite_spec(instance, zv, sigma)
        solution = solver.solve(spec, tol, warm)
        _require_solution(solution, "lifted (x, y) subproblem")
        x = np.clip(solution.x[:instance.d], instance.region.lower, instance.region.upper)
        y = np.maximum(scenario_values(instance, x).values, 0.0)
        return x, y, solution

    def pendc_lifted(
        self,
        instance: ProblemInstance,
        schedule: PenaltySchedule,
        z0=None,
        solver: Optional[SubproblemSolver] = None,
    ) -> SolveReport:
        started = time.monotonic()
        solver = solver or SubproblemSolver()
        m = instance.m
        z = project_onto_C(np.ones(instance.S) if z0 is None else selector_vector(instance, z0), m).z

        sigma = schedule.sigma0
        sigma_trace, inner_trace = [], []
        iterations = 0
        status = SolveStatus.BUDGET_EXHAUSTED
        warm = None
        x = y = None
        z_used = z
        for outer in range(schedule.outer_max):
            merit_prev = None
            merit = None
            inner = 0
            for _ in range(schedule.inner_cap(outer)):
                x, y, warm = self.inner_xy_solve(instance, DualPoint(z=z), sigma, warm, solver, schedule.subproblem_tol)
                z_used = z
                merit = instance.objective.value(x) + sigma * lifted_penalty(y, z)
                inner += 1
                iterations += 1
                inner_trace.append(InnerStep(
                    sigma=sigma,
                    objective=merit,
                    x=x if schedule.record_iterates else None,
                    z=z if schedule.record_iterates else None,
                ))
                if _converged(merit_prev, merit, schedule.inner_rel_tol):
                    break
                merit_prev = merit
                if schedule.rho > 0:
                    z_next = project_onto_C(z - (sigma / schedule.rho) * y, m).z
                else:
                    z_next = vertex_dual_update(y, m).z
                if np.array_equal(z_next, z):
                    break
                z = z_next

            sigma_trace.append(SigmaStep(sigma=sigma, inner_iterations=inner, objective=merit))
            residual = lifted_penalty(y, z_used)
            prob = empirical_probability(instance, x, schedule.feas_tol)
            logger.info(
                f"pendc-l round {outer}: sigma={sigma:.4g} inner={inner} F={merit:.8g} "
                f"V={residual:.3e} prob={prob:.4g}"
            )
            if is_chance_feasible(instance, prob) and residual <= schedule.feas_tol:
                status = None
                break
            sigma *= schedule.beta

        return finalize_report(
            instance, Algorithm.PENDC_L, x, started, schedule.feas_tol,
            status=status,
            sigma_trace=sigma_trace,
            inner_trace=inner_trace,
            penalty_residual=lifted_penalty(y, z_used),
            iterations=iterations,
            solver=solver,
            message="" if status is None else f"no feasible point after {schedule.outer_max} penalty rounds",
        )


# Global instance
penalty_service = PenaltyService()

pendc_primal = penalty_service.pendc_primal
pendc_lifted = penalty_service.pendc_lifted
inner_xy_solve = penalty_service.inner_xy_solve
