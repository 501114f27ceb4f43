import hashlib
import json
import logging
import os
from typing import Annotated, Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, BeforeValidator, Field, ValidationError
from scipy.optimize import linprog

from app.core.config import settings
from app.core.exceptions import InstanceParseError, InstanceValidationError
from app.core.retry import FILE_IO_RETRY_CONFIG, retry_sync
from app.models.instance import (
    FeasibleRegion,
    Objective,
    ProblemInstance,
    RiskSpec,
    ScenarioSet,
    ValidationFinding,
    ValidationReport,
)

logger = logging.getLogger(__name__)


def _parse_number(value: Any) -> Any:
    """Accepts numbers and infinity tokens such as "+infinity" or "-inf"."""
    if isinstance(value, str):
        try:
            return float(value.strip())
        except ValueError as e:
            raise ValueError(f"not a number: {value!r}") from e
    return value


Number = Annotated[float, BeforeValidator(_parse_number)]


# Instance document schema
class ObjectiveDoc(BaseModel):
    Q: Optional[List[List[Number]]] = None
    c: List[Number]


class InequalityDoc(BaseModel):
    A: List[List[Number]] = Field(default_factory=list)
    b: List[Number] = Field(default_factory=list)


class EqualityDoc(BaseModel):
    E: List[List[Number]] = Field(default_factory=list)
    e: List[Number] = Field(default_factory=list)


class BoundsDoc(BaseModel):
    l: List[Number]
    u: List[Number]


class RegionDoc(BaseModel):
    ineq: Optional[InequalityDoc] = None
    eq: Optional[EqualityDoc] = None
    bounds: BoundsDoc


class PieceDoc(BaseModel):
    quad: Optional[List[Number]] = None
    lin: List[Number]
    offset: Number = 0.0


class ScenariosDoc(BaseModel):
    S: int
    I: int
    pieces: List[List[PieceDoc]]


class RiskDoc(BaseModel):
    alpha: Number


class InstanceDocument(BaseModel):
    name: str = "instance"
    d: int
    objective: ObjectiveDoc
    region: RegionDoc
    scenarios: ScenariosDoc
    risk: RiskDoc


def _matrix(rows: List[List[float]], cols: int, path: str, findings: List[ValidationFinding]) -> np.ndarray:
    if not rows:
        return np.zeros((0, cols))
    if any(len(r) != cols for r in rows):
        findings.append(ValidationFinding(path=path, message=f"{path} rows must have {cols} entries"))
        return np.zeros((0, cols))
    return np.array(rows, dtype=float)


def _vector(values: List[float], length: int, path: str, findings: List[ValidationFinding]) -> np.ndarray:
    if len(values) != length:
        findings.append(ValidationFinding(path=path, message=f"{path} must have {length} entries, got {len(values)}"))
        return np.zeros(length)
    return np.array(values, dtype=float)


def document_to_instance(doc: InstanceDocument) -> ProblemInstance:
    """Build the instance, reporting every shape problem with its field path."""
    d = doc.d
    findings: List[ValidationFinding] = []
    if d < 1:
        raise InstanceValidationError("instance has no variables", [ValidationFinding(path="d", message="d must be >= 1")])

    c = _vector(doc.objective.c, d, "objective.c", findings)
    Q = np.zeros((d, d)) if doc.objective.Q is None else _matrix(doc.objective.Q, d, "objective.Q", findings)
    if doc.objective.Q is not None and Q.shape != (d, d):
        findings.append(ValidationFinding(path="objective.Q", message=f"objective.Q must be {d} x {d}"))
        Q = np.zeros((d, d))

    ineq = doc.region.ineq or InequalityDoc()
    eq = doc.region.eq or EqualityDoc()
    A = _matrix(ineq.A, d, "region.ineq.A", findings)
    b = _vector(ineq.b, A.shape[0], "region.ineq.b", findings)
    E = _matrix(eq.E, d, "region.eq.E", findings)
    e = _vector(eq.e, E.shape[0], "region.eq.e", findings)
    lower = _vector(doc.region.bounds.l, d, "region.bounds.l", findings)
    upper = _vector(doc.region.bounds.u, d, "region.bounds.u", findings)

    scen = doc.scenarios
    if scen.S < 1 or scen.I < 1:
        findings.append(ValidationFinding(path="scenarios", message="scenarios need S >= 1 and I >= 1"))
    if len(scen.pieces) != scen.S or any(len(row) != scen.I for row in scen.pieces):
        findings.append(ValidationFinding(
            path="scenarios.pieces",
            message=f"scenarios.pieces must be a rectangular {scen.S} x {scen.I} array",
        ))
    if findings:
        raise InstanceValidationError("instance document has inconsistent shapes", findings)

    quad = np.zeros((scen.S, scen.I, d))
    lin = np.zeros((scen.S, scen.I, d))
    offset = np.zeros((scen.S, scen.I))
    for s, row in enumerate(scen.pieces):
        for i, piece in enumerate(row):
            path = f"scenarios.pieces[{s}][{i}]"
            if piece.quad is not None:
                quad[s, i] = _vector(piece.quad, d, f"{path}.quad", findings)
            lin[s, i] = _vector(piece.lin, d, f"{path}.lin", findings)
            offset[s, i] = piece.offset
    if findings:
        raise InstanceValidationError("instance document has inconsistent shapes", findings)

    alpha = float(doc.risk.alpha)
    if not 0.0 < alpha < 1.0:
        raise InstanceValidationError(
            "instance document has an invalid risk level",
            [ValidationFinding(path="risk.alpha", message=f"risk.alpha={alpha} outside (0, 1)")],
        )

    return ProblemInstance(
        name=doc.name,
        objective=Objective(Q=Q, c=c),
        region=FeasibleRegion(A=A, b=b, E=E, e=e, lower=lower, upper=upper),
        scenarios=ScenarioSet(quad=quad, lin=lin, offset=offset),
        risk=RiskSpec(alpha=alpha, S=scen.S),
    )


def instance_to_document(instance: ProblemInstance) -> Dict[str, Any]:
    scen = instance.scenarios
    region = instance.region
    return {
        "name": instance.name,
        "d": instance.d,
        "objective": {"Q": instance.objective.Q.tolist(), "c": instance.objective.c.tolist()},
        "region": {
            "ineq": {"A": region.A.tolist(), "b": region.b.tolist()},
            "eq": {"E": region.E.tolist(), "e": region.e.tolist()},
            "bounds": {"l": region.lower.tolist(), "u": region.upper.tolist()},
        },
        "scenarios": {
            "S": scen.S,
            "I": scen.I,
            "pieces": [
                [
                    {"quad": scen.quad[s, i].tolist(), "lin": scen.lin[s, i].tolist(), "offset": float(scen.offset[s, i])}
                    for i in range(scen.I)
                ]
                for s in range(scen.S)
            ],
        },
        "risk": {"alpha": instance.risk.alpha},
    }


class InstanceService:
    def __init__(self):
        self.psd_shift = settings.PSD_SHIFT
        self.phase_one_tol = settings.PHASE_ONE_TOL

    @retry_sync(FILE_IO_RETRY_CONFIG)
    def read_text(self, path: str) -> str:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()

    @retry_sync(FILE_IO_RETRY_CONFIG)
    def write_text(self, path: str, text: str) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        tmp_path = f"{path}.tmp"
        with open(tmp_path, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp_path, path)

    def parse_instance(self, text: str, source: str = "<string>") -> ProblemInstance:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise InstanceParseError(f"malformed instance file {source}: {e}", {"source": source}) from e
        try:
            doc = InstanceDocument.model_validate(raw)
        except ValidationError as e:
            findings = [
                ValidationFinding(path=".".join(str(p) for p in err["loc"]), message=f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}")
                for err in e.errors()
            ]
            raise InstanceParseError(
                f"instance file {source} does not match the instance schema",
                {"source": source, "findings": [f.message for f in findings]},
            ) from e
        return document_to_instance(doc)

    def load_instance(self, path: str) -> ProblemInstance:
        """Load and validate an instance file."""
        if not os.path.isfile(path):
            raise InstanceParseError(f"instance file not found: {path}", {"path": path})
        instance = self.parse_instance(self.read_text(path), source=path)
        report = self.validate_instance(instance)
        if not report.is_empty:
            raise InstanceValidationError(
                f"instance {path} violates {len(report.findings)} invariant(s)", report.findings, {"path": path}
            )
        logger.info(f"Loaded instance '{instance.name}' from {path}: d={instance.d}, S={instance.S}, m={instance.m}")
        return instance

    def save_instance(self, instance: ProblemInstance, path: str) -> str:
        self.write_text(path, self.canonical_text(instance, indent=2))
        logger.info(f"Saved instance '{instance.name}' to {path}")
        return path

    def canonical_text(self, instance: ProblemInstance, indent: Optional[int] = None) -> str:
        separators = (",", ":") if indent is None else (",", ": ")
        return json.dumps(instance_to_document(instance), sort_keys=True, indent=indent, separators=separators)

    def canonical_hash(self, instance: ProblemInstance) -> str:
        return hashlib.sha256(self.canonical_text(instance).encode("utf-8")).hexdigest()

    def _psd_finding(self, Q: np.ndarray) -> Optional[ValidationFinding]:
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12):
            return ValidationFinding(path="objective.Q", message="objective.Q not symmetric")
        try:
            np.linalg.cholesky(Q + self.psd_shift * np.eye(Q.shape[0]))
        except np.linalg.LinAlgError:
            return ValidationFinding(path="objective.Q", message="objective.Q not PSD")
        return None

    def phase_one(self, region: FeasibleRegion) -> float:
        """Largest tau <= 1 with lower + tau <= x <= upper - tau, A x <= b, E x = e."""
        d = region.d
        cost = np.zeros(d + 1)
        cost[-1] = -1.0
        eye = np.eye(d)
        tau_col = np.ones((d, 1))
        A_ub = np.vstack([
            np.hstack([-eye, tau_col]),
            np.hstack([eye, tau_col]),
            np.hstack([region.A, np.zeros((region.A.shape[0], 1))]),
        ])
        b_ub = np.concatenate([-region.lower, region.upper, region.b])
        A_eq = np.hstack([region.E, np.zeros((region.E.shape[0], 1))]) if region.E.shape[0] else None
        b_eq = region.e if region.E.shape[0] else None
        bounds = [(None, None)] * d + [(None, 1.0)]
        result = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if result.status != 0:
            return -np.inf
        return float(-result.fun)

    def validate_instance(self, instance: ProblemInstance) -> ValidationReport:
        findings: List[ValidationFinding] = []
        objective, region, scen, risk = instance.objective, instance.region, instance.scenarios, instance.risk

        arrays = {
            "objective.Q": objective.Q, "objective.c": objective.c,
            "region.ineq.A": region.A, "region.ineq.b": region.b,
            "region.eq.E": region.E, "region.eq.e": region.e,
            "scenarios.quad": scen.quad, "scenarios.lin": scen.lin, "scenarios.offset": scen.offset,
        }
        for path, array in arrays.items():
            if not np.all(np.isfinite(array)):
                findings.append(ValidationFinding(path=path, message=f"{path} has non-finite entries"))

        if np.all(np.isfinite(objective.Q)):
            psd = self._psd_finding(objective.Q)
            if psd is not None:
                findings.append(psd)

        bounds_ok = True
        for i in range(instance.d):
            lo, hi = region.lower[i], region.upper[i]
            if not (np.isfinite(lo) and np.isfinite(hi)):
                findings.append(ValidationFinding(
                    path=f"region.bounds[{i}]", message=f"unbounded coordinate {i}"
                ))
                bounds_ok = False
            elif lo > hi:
                findings.append(ValidationFinding(
                    path=f"region.bounds[{i}]", message=f"bounds inverted at coordinate {i}"
                ))
                bounds_ok = False

        negative = sorted({(int(s), int(i)) for s, i, _ in np.argwhere(scen.quad < 0)})
        for s, i in negative:
            findings.append(ValidationFinding(
                path=f"scenarios.pieces[{s}][{i}].quad",
                message=f"scenarios.pieces[{s}][{i}].quad has negative entries",
            ))

        if not 0 <= risk.m < risk.S:
            findings.append(ValidationFinding(path="risk.alpha", message=f"budget m={risk.m} must be < S={risk.S}"))

        region_finite = all(np.all(np.isfinite(a)) for a in (region.A, region.b, region.E, region.e))
        if bounds_ok and region_finite:
            tau = self.phase_one(region)
            if not tau > self.phase_one_tol:
                findings.append(ValidationFinding(path="region", message="region infeasible"))

        report = ValidationReport(findings=sorted(findings, key=lambda f: f.path))
        if not report.is_empty:
            logger.debug(f"Instance '{instance.name}' has {len(report.findings)} finding(s)")
        return report

    def import_scenario_csv(self, path: str) -> np.ndarray:
        """Read a returns matrix: rows are scenarios, columns are assets."""
        if not os.path.isfile(path):
            raise InstanceParseError(f"scenario file not found: {path}", {"path": path})
        try:
            frame = pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise InstanceParseError(f"malformed scenario file {path}: {e}", {"path": path}) from e
        numeric = frame.select_dtypes(include=[np.number])
        if numeric.empty or numeric.isna().any().any():
            raise InstanceParseError(f"scenario file {path} needs a complete numeric matrix", {"path": path})
        return numeric.to_numpy(dtype=float)

    def resolve_instance(self, source: Union[str, ProblemInstance]) -> ProblemInstance:
        """Instance from a file path or a built-in reference name."""
        if isinstance(source, ProblemInstance):
            return source
        from app.services.generator_service import REFERENCE_INSTANCES, reference_instance

        if source in REFERENCE_INSTANCES and not os.path.exists(source):
            return reference_instance(source)
        return self.load_instance(source)


# Global instance
instance_service = InstanceService()


def load_instance(path: str) -> ProblemInstance:
    return instance_service.load_instance(path)


def save_instance(instance: ProblemInstance, path: str) -> str:
    return instance_service.save_instance(instance, path)


def validate_instance(instance: ProblemInstance) -> ValidationReport:
    return instance_service.validate_instance(instance)


def canonical_hash(instance: ProblemInstance) -> str:
    return instance_service.canonical_hash(instance)
