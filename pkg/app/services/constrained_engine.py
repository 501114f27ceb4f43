"""SLSQP engine for subproblems with diagonal-quadratic constraint rows."""
import logging
from typing import Optional

import numpy as np
from scipy.optimize import minimize, nnls

from app.core.config import settings
from app.core.exceptions import EngineError
from app.models.subproblem import SubproblemSolution, SubproblemSpec, SubproblemStatus
from app.services.kkt import kkt_components

logger = logging.getLogger(__name__)

ACTIVE_TOL = 1e-7
INFEASIBLE_VIOLATION = 1e-6
SLSQP_INCOMPATIBLE = 4


def start_point(spec: SubproblemSpec) -> np.ndarray:
    """Bound-box midpoint, zero on free coordinates."""
    lower = np.where(np.isfinite(spec.lower), spec.lower, np.nan)
    upper = np.where(np.isfinite(spec.upper), spec.upper, np.nan)
    mid = np.where(np.isnan(lower) | np.isnan(upper), np.nan, 0.5 * (lower + upper))
    x = np.where(np.isnan(mid), 0.0, mid)
    return np.clip(x, spec.lower, spec.upper)


def primal_violation(spec: SubproblemSpec, x: np.ndarray) -> float:
    parts = [0.0, float(np.max(spec.lower - x, initial=0.0)), float(np.max(x - spec.upper, initial=0.0))]
    if spec.A.shape[0]:
        parts.append(float(np.max(spec.A @ x - spec.b)))
    if spec.E.shape[0]:
        parts.append(float(np.max(np.abs(spec.E @ x - spec.e))))
    parts.extend(row.value(x) for row in spec.quad_rows)
    return max(parts)


def phase_one_point(spec: SubproblemSpec, x0: np.ndarray, max_iter: int) -> np.ndarray:
    """Minimize the squared constraint violation over the bound box from x0."""
    # aim slightly inside the inequality rows
    margin = INFEASIBLE_VIOLATION

    def violation_sq(x):
        total = 0.0
        grad = np.zeros_like(x)
        if spec.A.shape[0]:
            r = np.maximum(spec.A @ x - spec.b + margin, 0.0)
            total += 0.5 * float(r @ r)
            grad += spec.A.T @ r
        if spec.E.shape[0]:
            r = spec.E @ x - spec.e
            total += 0.5 * float(r @ r)
            grad += spec.E.T @ r
        for row in spec.quad_rows:
            r = max(row.value(x) + margin, 0.0)
            total += 0.5 * r * r
            grad += r * row.gradient(x)
        return total, grad

    bounds = [
        (lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
        for lo, hi in zip(spec.lower, spec.upper)
    ]
    result = minimize(violation_sq, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                      options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 1e-16})
    return np.clip(result.x, spec.lower, spec.upper)


def recover_multipliers(spec: SubproblemSpec, x: np.ndarray, active_tol: float = ACTIVE_TOL):
    """Least-squares multipliers on the active set, sign-constrained via NNLS."""
    n = spec.n
    columns = []
    owners = []
    for j in range(spec.A.shape[0]):
        if spec.b[j] - spec.A[j] @ x <= active_tol * max(1.0, abs(spec.b[j])):
            columns.append(spec.A[j])
            owners.append(("ineq", j, 1.0))
    for j in range(spec.E.shape[0]):
        columns.append(spec.E[j])
        owners.append(("eq", j, 1.0))
        columns.append(-spec.E[j])
        owners.append(("eq", j, -1.0))
    for i in range(n):
        unit = np.zeros(n)
        unit[i] = 1.0
        if np.isfinite(spec.upper[i]) and spec.upper[i] - x[i] <= active_tol * max(1.0, abs(spec.upper[i])):
            columns.append(unit)
            owners.append(("bound", i, 1.0))
        elif np.isfinite(spec.lower[i]) and x[i] - spec.lower[i] <= active_tol * max(1.0, abs(spec.lower[i])):
            columns.append(-unit)
            owners.append(("bound", i, -1.0))
    for j, row in enumerate(spec.quad_rows):
        if -row.value(x) <= active_tol * max(1.0, abs(row.offset)):
            columns.append(row.gradient(x))
            owners.append(("quad", j, 1.0))

    dual_ineq = np.zeros(spec.A.shape[0])
    dual_eq = np.zeros(spec.E.shape[0])
    dual_bounds = np.zeros(n)
    dual_quad = np.zeros(len(spec.quad_rows))
    if columns:
        M = np.column_stack(columns)
        coef, _ = nnls(M, -(spec.P @ x + spec.q))
        targets = {"ineq": dual_ineq, "eq": dual_eq, "bound": dual_bounds, "quad": dual_quad}
        for (kind, j, sign), value in zip(owners, coef):
            targets[kind][j] += sign * value
    return dual_ineq, dual_eq, dual_bounds, dual_quad


class ConstrainedEngine:
    """Sequential least-squares QP with analytic Jacobians."""

    name = "constrained"

    def __init__(self, max_iter: int = None):
        self.max_iter = max_iter or settings.CONSTRAINED_MAX_ITER

    def _constraints(self, spec: SubproblemSpec) -> list:
        constraints = []
        if spec.A.shape[0]:
            A, b = spec.A, spec.b
            constraints.append({"type": "ineq", "fun": lambda x: b - A @ x, "jac": lambda x: -A})
        if spec.E.shape[0]:
            E, e = spec.E, spec.e
            constraints.append({"type": "eq", "fun": lambda x: E @ x - e, "jac": lambda x: E})
        if spec.quad_rows:
            Qr = np.array([row.quad for row in spec.quad_rows])
            Lr = np.array([row.lin for row in spec.quad_rows])
            off = np.array([row.offset for row in spec.quad_rows])
            constraints.append({
                "type": "ineq",
                "fun": lambda x: -(Qr @ (x * x) + Lr @ x + off),
                "jac": lambda x: -(2.0 * Qr * x[None, :] + Lr),
            })
        return constraints

    def _slsqp(self, spec: SubproblemSpec, x0: np.ndarray, tol: float):
        bounds = [
            (lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
            for lo, hi in zip(spec.lower, spec.upper)
        ]
        P, q = spec.P, spec.q
        try:
            result = minimize(
                spec.smooth_value,
                x0,
                jac=lambda x: P @ x + q,
                method="SLSQP",
                bounds=bounds,
                constraints=self._constraints(spec),
                options={"maxiter": self.max_iter, "ftol": min(1e-10, tol * 1e-2)},
            )
        except (ValueError, np.linalg.LinAlgError) as e:
            raise EngineError(f"SLSQP failed: {e}") from e
        x = np.clip(result.x, spec.lower, spec.upper)
        return result, x, primal_violation(spec, x)

    def solve(
        self,
        spec: SubproblemSpec,
        tol: float,
        warm: Optional[SubproblemSolution] = None,
    ) -> SubproblemSolution:
        if spec.composite:
            raise EngineError("constrained engine does not accept composite terms")
        n = spec.n
        x0 = np.array(warm.x, dtype=float) if warm is not None and warm.x.shape == (n,) else start_point(spec)
        x0 = np.clip(x0, spec.lower, spec.upper)
        result, x, violation = self._slsqp(spec, x0, tol)
        if result.status == SLSQP_INCOMPATIBLE or violation > INFEASIBLE_VIOLATION:
            # SLSQP can stall on incompatible linearizations far from the feasible set
            x1 = phase_one_point(spec, x0, self.max_iter)
            if primal_violation(spec, x1) <= INFEASIBLE_VIOLATION:
                logger.debug(f"constrained engine: retrying from phase-one point (violation={violation:.3e})")
                result, x, violation = self._slsqp(spec, x1, tol)
        if result.status == SLSQP_INCOMPATIBLE or violation > INFEASIBLE_VIOLATION:
            logger.debug(f"constrained engine: infeasible (status={result.status}, violation={violation:.3e})")
            return SubproblemSolution(
                x=x,
                objective_value=spec.smooth_value(x),
                dual_ineq=np.zeros(spec.A.shape[0]),
                dual_eq=np.zeros(spec.E.shape[0]),
                dual_bounds=np.zeros(n),
                dual_quad=np.zeros(len(spec.quad_rows)),
                dual_composite=np.zeros((0, 0)),
                status=SubproblemStatus.INFEASIBLE,
                primal_residual=violation,
                dual_residual=float("nan"),
                iterations=int(result.nit),
                engine=self.name,
            )

        dual_ineq, dual_eq, dual_bounds, dual_quad = recover_multipliers(spec, x)
        solution = SubproblemSolution(
            x=x,
            objective_value=spec.smooth_value(x),
            dual_ineq=dual_ineq,
            dual_eq=dual_eq,
            dual_bounds=dual_bounds,
            dual_quad=dual_quad,
            dual_composite=np.zeros((0, 0)),
            status=SubproblemStatus.MAX_ITER,
            primal_residual=violation,
            dual_residual=0.0,
            iterations=int(result.nit),
            engine=self.name,
        )
        comps = kkt_components(spec, solution)
        dual_residual = max(comps.dual, comps.stationarity, comps.complementarity)
        status = SubproblemStatus.OPTIMAL if max(comps.primal, dual_residual) <= tol else SubproblemStatus.MAX_ITER
        if status != SubproblemStatus.OPTIMAL:
            logger.debug(f"constrained engine: KKT residual {comps.residual:.3e} above tol {tol:.1e}")
        return solution.model_copy(update={
            "status": status,
            "primal_residual": comps.primal,
            "dual_residual": dual_residual,
        })
