import logging
from typing import Iterable, Optional

import numpy as np

from app.core.config import settings
from app.core.exceptions import EngineError
from app.models.instance import ProblemInstance
from app.models.subproblem import QuadraticRow, SubproblemSolution, SubproblemSpec, SubproblemStatus
from app.services.composite_engine import CompositeSubgradientEngine
from app.services.constrained_engine import ConstrainedEngine
from app.services.kkt import kkt_components, kkt_residual  # noqa: F401
from app.services.splitting_engine import SplittingEngine

logger = logging.getLogger(__name__)


class SubproblemSolver:
    """Routes a subproblem to the engine that handles its form.

    Quadratic constraint rows go to the constrained engine, composite terms to
    the composite subgradient engine, everything else to the splitting engine.
    Each solver owns its engines' workspaces; use one solver per thread.
    """

    def __init__(self):
        self.splitting = SplittingEngine()
        self.constrained = ConstrainedEngine()
        self.composite = CompositeSubgradientEngine(self.splitting, self.constrained)

    def solve(
        self,
        spec: SubproblemSpec,
        tol: float = None,
        warm: Optional[SubproblemSolution] = None,
        lower_bound: Optional[float] = None,
    ) -> SubproblemSolution:
        tol = settings.SUBPROBLEM_TOL if tol is None else tol
        if tol <= 0:
            raise EngineError(f"tolerance must be positive, got {tol}")
        if spec.quad_rows and spec.composite:
            raise EngineError("a subproblem cannot mix composite terms and quadratic rows")
        if spec.quad_rows:
            solution = self.constrained.solve(spec, tol, warm)
        elif spec.composite:
            solution = self.composite.solve(spec, tol, warm, lower_bound=lower_bound)
        else:
            solution = self.splitting.solve(spec, tol, warm)
        logger.debug(
            f"{solution.engine}: status={solution.status.value} iterations={solution.iterations} "
            f"objective={solution.objective_value:.10g}"
        )
        return solution


def solve_subproblem(
    spec: SubproblemSpec,
    tol: float = None,
    warm: Optional[SubproblemSolution] = None,
) -> SubproblemSolution:
    """Solve one subproblem on a fresh solver."""
    return SubproblemSolver().solve(spec, tol, warm)


def region_rows(instance: ProblemInstance, extra: int = 0):
    """Region inequality and equality rows padded with `extra` trailing zero columns."""
    region = instance.region
    A = np.hstack([region.A, np.zeros((region.A.shape[0], extra))])
    E = np.hstack([region.E, np.zeros((region.E.shape[0], extra))])
    return A, region.b.copy(), E, region.e.copy()


def scenario_rows(instance: ProblemInstance, enforced: Iterable[int]):
    """h_{s,i}(x) <= 0 for enforced scenarios: affine pieces as rows, the rest as quadratic rows."""
    scen = instance.scenarios
    A_rows, b_rows, quad_rows = [], [], []
    for s in enforced:
        for i in range(scen.I):
            if np.any(scen.quad[s, i]):
                quad_rows.append(QuadraticRow(quad=scen.quad[s, i], lin=scen.lin[s, i], offset=float(scen.offset[s, i])))
            elif not np.any(scen.lin[s, i]) and scen.offset[s, i] <= 0.0:
                # constant piece, always satisfied
                continue
            else:
                A_rows.append(scen.lin[s, i])
                b_rows.append(-scen.offset[s, i])
    A = np.array(A_rows).reshape(len(A_rows), instance.d)
    return A, np.array(b_rows, dtype=float), quad_rows


def epigraph_rows(instance: ProblemInstance, n_vars: int, eta_col: int, u_start: int):
    """h_{s,i}(x) - eta - u_s <= 0 over a variable vector whose first d entries are x."""
    scen, d = instance.scenarios, instance.d
    A_rows, b_rows, quad_rows = [], [], []
    for s in range(scen.S):
        for i in range(scen.I):
            lin = np.zeros(n_vars)
            lin[:d] = scen.lin[s, i]
            lin[eta_col] = -1.0
            lin[u_start + s] = -1.0
            if np.any(scen.quad[s, i]):
                quad = np.zeros(n_vars)
                quad[:d] = scen.quad[s, i]
                quad_rows.append(QuadraticRow(quad=quad, lin=lin, offset=float(scen.offset[s, i])))
            else:
                A_rows.append(lin)
                b_rows.append(-scen.offset[s, i])
    return np.array(A_rows).reshape(len(A_rows), n_vars), np.array(b_rows, dtype=float), quad_rows


def build_scenario_program(instance: ProblemInstance, enforced: Iterable[int]) -> SubproblemSpec:
    """min f(x) over the region with g_s(x) <= 0 for every enforced scenario."""
    A_reg, b_reg, E, e = region_rows(instance)
    A_scen, b_scen, quad_rows = scenario_rows(instance, enforced)
    return SubproblemSpec.build(
        P=2.0 * instance.objective.Q,
        q=instance.objective.c,
        A=np.vstack([A_reg, A_scen]),
        b=np.concatenate([b_reg, b_scen]),
        E=E,
        e=e,
        lower=instance.region.lower,
        upper=instance.region.upper,
        quad_rows=quad_rows,
    )


def build_projection_program(instance: ProblemInstance, point: np.ndarray) -> SubproblemSpec:
    """min 1/2 ||x - point||^2 over the region."""
    A, b, E, e = region_rows(instance)
    point = np.asarray(point, dtype=float)
    return SubproblemSpec.build(
        P=np.eye(instance.d),
        q=-point,
        constant=0.5 * float(point @ point),
        A=A, b=b, E=E, e=e,
        lower=instance.region.lower,
        upper=instance.region.upper,
    )


def project_onto_region(instance: ProblemInstance, point, solver: SubproblemSolver = None, tol: float = None) -> np.ndarray:
    point = np.asarray(point, dtype=float)
    if instance.region.is_box:
        return np.clip(point, instance.region.lower, instance.region.upper)
    solver = solver or SubproblemSolver()
    solution = solver.solve(build_projection_program(instance, point), tol)
    if solution.status == SubproblemStatus.INFEASIBLE:
        raise EngineError("projection onto the feasible region failed: region infeasible")
    return np.clip(solution.x, instance.region.lower, instance.region.upper)
