from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import Field, model_validator

from app.models.arrays import ArrayModel, FloatArray


class SubproblemStatus(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


class CompositeTerm(ArrayModel):
    """weight * [max_i (quad_i . x^2 + lin_i . x + offset_i)]_+"""
    weight: float = Field(..., ge=0)
    quad: FloatArray
    lin: FloatArray
    offset: FloatArray

    @model_validator(mode="after")
    def _check_shapes(self) -> "CompositeTerm":
        if self.quad.ndim != 2 or self.lin.shape != self.quad.shape or self.offset.shape != self.quad.shape[:1]:
            raise ValueError("composite pieces need quad/lin of shape (I, n) and offset of shape (I,)")
        return self

    def piece_values(self, x: np.ndarray) -> np.ndarray:
        return self.quad @ (x * x) + self.lin @ x + self.offset


class QuadraticRow(ArrayModel):
    """sum_i quad_i x_i^2 + lin^T x + offset <= 0"""
    quad: FloatArray
    lin: FloatArray
    offset: float

    def value(self, x: np.ndarray) -> float:
        return float(self.quad @ (x * x) + self.lin @ x + self.offset)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.quad * x + self.lin


class SubproblemSpec(ArrayModel):
    """min 1/2 x^T P x + q^T x + constant + sum_t composite_t(x)
    s.t. A x <= b, E x = e, lower <= x <= upper, quad_rows(x) <= 0
    """
    P: FloatArray
    q: FloatArray
    constant: float = 0.0
    A: FloatArray
    b: FloatArray
    E: FloatArray
    e: FloatArray
    lower: FloatArray
    upper: FloatArray
    composite: Tuple[CompositeTerm, ...] = ()
    quad_rows: Tuple[QuadraticRow, ...] = ()

    @model_validator(mode="after")
    def _check_dimensions(self) -> "SubproblemSpec":
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {n} x {n}")
        if self.A.shape != (self.b.shape[0], n) or self.E.shape != (self.e.shape[0], n):
            raise ValueError("A/E must have n columns and match the length of b/e")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must have length n")
        for term in self.composite:
            if term.quad.shape[1] != n:
                raise ValueError("composite pieces must act on all n variables")
        for row in self.quad_rows:
            if row.quad.shape != (n,) or row.lin.shape != (n,):
                raise ValueError("quadratic rows must act on all n variables")
        return self

    @classmethod
    def build(cls, P, q, constant=0.0, A=None, b=None, E=None, e=None, lower=None, upper=None,
              composite=(), quad_rows=()) -> "SubproblemSpec":
        q = np.asarray(q, dtype=float)
        n = q.shape[0]
        return cls(
            P=P, q=q, constant=constant,
            A=np.zeros((0, n)) if A is None else A,
            b=np.zeros(0) if b is None else b,
            E=np.zeros((0, n)) if E is None else E,
            e=np.zeros(0) if e is None else e,
            lower=np.full(n, -np.inf) if lower is None else lower,
            upper=np.full(n, np.inf) if upper is None else upper,
            composite=tuple(composite),
            quad_rows=tuple(quad_rows),
        )

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def smooth_value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x + self.constant)

    def composite_value(self, x: np.ndarray) -> float:
        return float(sum(t.weight * max(0.0, float(np.max(t.piece_values(x)))) for t in self.composite))

    def objective(self, x: np.ndarray) -> float:
        return self.smooth_value(x) + self.composite_value(x)


class SubproblemSolution(ArrayModel):
    x: FloatArray
    objective_value: float
    dual_ineq: FloatArray
    dual_eq: FloatArray
    # Signed: positive at an active upper bound, negative at an active lower bound.
    dual_bounds: FloatArray
    dual_quad: FloatArray
    # Shape (T, I): multiplier of piece i inside composite term t.
    dual_composite: FloatArray
    status: SubproblemStatus
    primal_residual: float
    dual_residual: float
    iterations: int
    engine: str
    best_trace: Optional[FloatArray] = None

    @property
    def optimal(self) -> bool:
        return self.status == SubproblemStatus.OPTIMAL


class KKTComponents(ArrayModel):
    primal: float
    dual: float
    stationarity: float
    complementarity: float

    @property
    def residual(self) -> float:
        return max(self.primal, self.dual, self.stationarity, self.complementarity)
