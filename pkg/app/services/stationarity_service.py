"""Lifting of primal points and stationarity certificates."""
import logging
from typing import Optional

import numpy as np

from app.core.config import settings
from app.core.exceptions import PreconditionError
from app.models.instance import ProblemInstance
from app.models.points import DualPoint, LiftedPoint
from app.models.schemas import Certificates, StationarityCertificate
from app.models.subproblem import SubproblemStatus
from app.services.convex_service import SubproblemSolver, build_scenario_program
from app.services.rank_service import as_point, scenario_values

logger = logging.getLogger(__name__)


def lift_point(instance: ProblemInstance, x, feas_tol: float = None) -> LiftedPoint:
    """Selector on the S - m smallest scenario values, y on the rest."""
    tol = settings.FEAS_TOL if feas_tol is None else feas_tol
    x = as_point(instance, x)
    values = scenario_values(instance, x).values
    S, m = instance.S, instance.m
    order = np.argsort(values, kind="stable")
    kept = order[: S - m]
    phi = float(values[order[S - m - 1]])
    if phi > tol:
        raise PreconditionError(
            f"point violates the chance constraint: phi={phi:.3e} > {tol:.1e}",
            {"phi": phi, "feas_tol": tol},
        )
    z = np.zeros(S)
    z[kept] = 1.0
    y = np.maximum(values, 0.0)
    y[kept] = 0.0
    return LiftedPoint(x=x, y=y, z=DualPoint(z=z))


def check_strong_stationarity(
    instance: ProblemInstance,
    point: LiftedPoint,
    tol: float = None,
    solver: Optional[SubproblemSolver] = None,
) -> StationarityCertificate:
    """Compare f at the point with the relaxed program on its complementarity pattern.

    Fixing y_s = 0 on I_y and z_s = 0 on I_z leaves y free elsewhere, so the
    relaxed program reduces to min f over the region with g_s <= 0 on I_y.
    """
    tol = settings.FEAS_TOL if tol is None else tol
    breach = point.omega0_violation(instance)
    if breach > tol:
        raise PreconditionError(
            f"point is outside the lifted region: max(g(x) - y, -y)={breach:.3e} > {tol:.1e}",
            {"omega0_violation": breach},
        )
    if point.penalty > tol:
        raise PreconditionError(
            f"point is not complementary: V(y, z)={point.penalty:.3e} > {tol:.1e}",
            {"penalty": point.penalty},
        )
    y, z = point.y, point.z.z
    I_y, I_z, I_0 = [], [], []
    for s in range(instance.S):
        small_y, small_z = y[s] <= tol, z[s] <= tol
        if small_y and small_z:
            I_0.append(s)
        elif small_y or (not small_z and z[s] >= y[s]):
            I_y.append(s)
        else:
            I_z.append(s)
    if len(I_z) > instance.m:
        raise PreconditionError(
            f"selector fixes {len(I_z)} zeros but the budget is m={instance.m}",
            {"I_z": I_z},
        )

    point_value = instance.objective.value(point.x)
    solver = solver or SubproblemSolver()
    relaxed = solver.solve(build_scenario_program(instance, I_y), settings.SUBPROBLEM_TOL)
    if relaxed.status == SubproblemStatus.INFEASIBLE:
        logger.warning("relaxed program reported infeasible; certificate negative")
        return StationarityCertificate(positive=False, point_value=point_value, I_y=I_y, I_z=I_z, I_0=I_0)

    x_rel = np.clip(relaxed.x, instance.region.lower, instance.region.upper)
    relaxed_value = instance.objective.value(x_rel)
    positive = point_value <= relaxed_value + tol
    logger.debug(f"strong stationarity: f(x)={point_value:.10g}, relaxed={relaxed_value:.10g}, positive={positive}")
    return StationarityCertificate(
        positive=positive,
        relaxed_value=relaxed_value,
        point_value=point_value,
        I_y=I_y,
        I_z=I_z,
        I_0=I_0,
    )


def check_strict_gap(instance: ProblemInstance, x, strict_tol: float = None) -> bool:
    """psi_(S-m) = 0 < psi_(S-m+1) for psi = [g(x)]_+ in ascending order."""
    tol = settings.STRICT_TOL if strict_tol is None else strict_tol
    psi = np.sort(np.maximum(scenario_values(instance, x).values, 0.0))
    S, m = instance.S, instance.m
    at_budget = psi[S - m - 1]
    above_budget = psi[S - m] if m > 0 else np.inf
    return bool(at_budget <= tol and above_budget > tol)


def certify(
    instance: ProblemInstance,
    x,
    tol: float = None,
    solver: Optional[SubproblemSolver] = None,
) -> Certificates:
    point = lift_point(instance, x, tol)
    return Certificates(
        strong_stationarity=check_strong_stationarity(instance, point, tol, solver),
        strict_gap=check_strict_gap(instance, x),
    )
