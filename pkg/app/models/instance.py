import math
from typing import List

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.models.arrays import ArrayModel, FloatArray

# Guards floor(alpha * S) against products like 0.29 * 100 = 28.999999999999996.
_FLOOR_SLACK = 1e-9


class ConstraintPiece(ArrayModel):
    """h(x) = sum_i quad_i x_i^2 + lin^T x + offset"""
    quad: FloatArray
    lin: FloatArray
    offset: float

    @model_validator(mode="after")
    def _check_shapes(self) -> "ConstraintPiece":
        if self.quad.ndim != 1 or self.quad.shape != self.lin.shape:
            raise ValueError("quad and lin must be vectors of the same length")
        return self

    @property
    def is_affine(self) -> bool:
        return not np.any(self.quad)

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.quad @ (x * x) + self.lin @ x + self.offset)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.quad * x + self.lin


class ScenarioSet(ArrayModel):
    """S x I pieces stored as stacked coefficient arrays.

    quad and lin have shape (S, I, d); offset has shape (S, I).
    """
    quad: FloatArray
    lin: FloatArray
    offset: FloatArray

    @model_validator(mode="after")
    def _check_rectangular(self) -> "ScenarioSet":
        if self.quad.ndim != 3 or self.lin.shape != self.quad.shape:
            raise ValueError("quad and lin must both have shape (S, I, d)")
        if self.offset.shape != self.quad.shape[:2]:
            raise ValueError("offset must have shape (S, I)")
        if self.quad.shape[0] < 1 or self.quad.shape[1] < 1:
            raise ValueError("scenario set needs S >= 1 and I >= 1")
        return self

    @classmethod
    def from_pieces(cls, pieces: List[List[ConstraintPiece]]) -> "ScenarioSet":
        return cls(
            quad=[[p.quad for p in row] for row in pieces],
            lin=[[p.lin for p in row] for row in pieces],
            offset=[[p.offset for p in row] for row in pieces],
        )

    @property
    def S(self) -> int:
        return self.quad.shape[0]

    @property
    def I(self) -> int:  # noqa: E743
        return self.quad.shape[1]

    @property
    def d(self) -> int:
        return self.quad.shape[2]

    @property
    def is_affine(self) -> bool:
        return not np.any(self.quad)

    @property
    def pieces(self) -> List[List[ConstraintPiece]]:
        return [
            [
                ConstraintPiece(quad=self.quad[s, i], lin=self.lin[s, i], offset=float(self.offset[s, i]))
                for i in range(self.I)
            ]
            for s in range(self.S)
        ]

    def piece_values(self, x: np.ndarray) -> np.ndarray:
        """Matrix of h_{s,i}(x), shape (S, I)."""
        return (
            np.einsum("sid,d->si", self.quad, x * x)
            + np.einsum("sid,d->si", self.lin, x)
            + self.offset
        )


class FeasibleRegion(ArrayModel):
    """{x : A x <= b, E x = e, lower <= x <= upper}"""
    A: FloatArray
    b: FloatArray
    E: FloatArray
    e: FloatArray
    lower: FloatArray
    upper: FloatArray

    @model_validator(mode="after")
    def _check_shapes(self) -> "FeasibleRegion":
        d = self.lower.shape[0]
        if self.lower.ndim != 1 or self.upper.shape != (d,):
            raise ValueError("lower and upper must be vectors of the same length")
        if self.A.shape != (self.b.shape[0], d) or self.E.shape != (self.e.shape[0], d):
            raise ValueError("A/E must have d columns and match the length of b/e")
        return self

    @classmethod
    def box(cls, lower, upper, A=None, b=None, E=None, e=None) -> "FeasibleRegion":
        lower = np.asarray(lower, dtype=float)
        d = lower.shape[0]
        return cls(
            A=np.zeros((0, d)) if A is None else A,
            b=np.zeros(0) if b is None else b,
            E=np.zeros((0, d)) if E is None else E,
            e=np.zeros(0) if e is None else e,
            lower=lower,
            upper=upper,
        )

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    @property
    def is_box(self) -> bool:
        return self.A.shape[0] == 0 and self.E.shape[0] == 0

    def violation(self, x: np.ndarray) -> float:
        parts = [0.0, float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0))]
        if self.A.shape[0]:
            parts.append(float(np.max(self.A @ x - self.b, initial=0.0)))
        if self.E.shape[0]:
            parts.append(float(np.max(np.abs(self.E @ x - self.e))))
        return max(parts)


class Objective(ArrayModel):
    """f(x) = x^T Q x + c^T x"""
    Q: FloatArray
    c: FloatArray

    @model_validator(mode="after")
    def _check_shapes(self) -> "Objective":
        d = self.c.shape[0]
        if self.c.ndim != 1 or self.Q.shape != (d, d):
            raise ValueError("Q must be d x d for c of length d")
        return self

    def value(self, x: np.ndarray) -> float:
        return float(x @ self.Q @ x + self.c @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.Q @ x + self.c


class RiskSpec(BaseModel):
    alpha: float = Field(..., gt=0, lt=1)
    S: int = Field(..., ge=1)

    model_config = {"frozen": True}

    @property
    def m(self) -> int:
        """Scenario budget floor(alpha * S); the slack only absorbs round-off in the product."""
        return int(math.floor(self.alpha * self.S + _FLOOR_SLACK))


class ProblemInstance(ArrayModel):
    name: str
    objective: Objective
    region: FeasibleRegion
    scenarios: ScenarioSet
    risk: RiskSpec

    @model_validator(mode="after")
    def _check_dimensions(self) -> "ProblemInstance":
        d = self.objective.c.shape[0]
        if self.region.d != d or self.scenarios.d != d:
            raise ValueError(
                f"dimension mismatch: objective d={d}, region d={self.region.d}, scenarios d={self.scenarios.d}"
            )
        if self.risk.S != self.scenarios.S:
            raise ValueError(f"risk.S={self.risk.S} does not match scenarios.S={self.scenarios.S}")
        return self

    @property
    def d(self) -> int:
        return self.objective.c.shape[0]

    @property
    def S(self) -> int:
        return self.scenarios.S

    @property
    def m(self) -> int:
        return self.risk.m

    @property
    def alpha(self) -> float:
        return self.risk.alpha


class ValidationFinding(BaseModel):
    path: str
    message: str

    def __str__(self) -> str:
        return self.message


class ValidationReport(BaseModel):
    findings: List[ValidationFinding] = Field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not self.findings

    def messages(self) -> List[str]:
        return [f.message for f in self.findings]
