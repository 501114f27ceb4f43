import json
import logging
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ValidationError

from app.commands import emit
from app.core.config import settings
from app.core.exceptions import EXIT_OK, EXIT_OUTCOME, PreconditionError, UsageError
from app.models.instance import ProblemInstance
from app.models.points import DualPoint, LiftedPoint
from app.services.instance_service import instance_service
from app.services.rank_service import as_point, empirical_probability, phi_value
from app.services.stationarity_service import check_strict_gap, check_strong_stationarity, lift_point

logger = logging.getLogger(__name__)


class PointDocument(BaseModel):
    x: List[float]
    y: Optional[List[float]] = None
    z: Optional[List[float]] = None


def register(subparsers) -> None:
    parser = subparsers.add_parser("check", help="Report invariants and certificates at a point")
    parser.add_argument("--instance", required=True, help="Instance file or reference name (t1, example1)")
    parser.add_argument("--point", required=True, help='Point file: {"x": [...], "y": [...]?, "z": [...]?}')
    parser.add_argument("--tol", type=float, default=None, help="Certificate tolerance (defaults to FEAS_TOL)")
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=run)


def read_point(path: str) -> PointDocument:
    try:
        return PointDocument.model_validate(json.loads(instance_service.read_text(path)))
    except FileNotFoundError as e:
        raise UsageError(f"point file not found: {path}") from e
    except (json.JSONDecodeError, ValidationError) as e:
        raise UsageError(f"malformed point file {path}: {e}") from e


def lifted_from_document(instance: ProblemInstance, doc: PointDocument, tol: float) -> LiftedPoint:
    x = as_point(instance, doc.x)
    if doc.y is None and doc.z is None:
        return lift_point(instance, x, tol)
    if doc.y is None or doc.z is None:
        raise UsageError("a point file must give both y and z, or neither")
    if len(doc.y) != instance.S or len(doc.z) != instance.S:
        raise UsageError(f"y and z must have length S={instance.S}")
    return LiftedPoint(x=x, y=np.asarray(doc.y), z=DualPoint(z=np.asarray(doc.z)))


def invariant_report(instance: ProblemInstance, point: LiftedPoint) -> dict:
    phi = phi_value(instance, point.x)
    return {
        "in_omega0": point.in_omega0(instance),
        "omega0_violation": point.omega0_violation(instance),
        "penalty": point.penalty,
        "phi_plus": max(phi, 0.0),
        "lower_bound_holds": point.penalty >= max(phi, 0.0) - 1e-10,
    }


def run(args) -> int:
    instance = instance_service.resolve_instance(args.instance)
    doc = read_point(args.point)
    tol = settings.FEAS_TOL if args.tol is None else args.tol
    x = as_point(instance, doc.x)
    result = {
        "instance": instance.name,
        "x": x.tolist(),
        "phi": phi_value(instance, x),
        "empirical_prob": empirical_probability(instance, x, tol),
        "region_violation": instance.region.violation(x),
        "strict_gap": check_strict_gap(instance, x),
        "strong_stationarity": None,
    }
    code = EXIT_OK
    try:
        point = lifted_from_document(instance, doc, tol)
        result.update(invariant_report(instance, point))
        result["z"] = point.z.z.tolist()
        result["y"] = point.y.tolist()
        certificate = check_strong_stationarity(instance, point, tol)
        result["strong_stationarity"] = certificate.model_dump()
    except PreconditionError as e:
        logger.warning(f"certificate unavailable: {e.message}")
        result["message"] = e.message
        code = EXIT_OUTCOME
    emit(json.dumps(result, indent=2), args.out)
    return code
