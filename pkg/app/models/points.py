import numpy as np
from pydantic import model_validator

from app.models.arrays import ArrayModel, FloatArray, IntArray
from app.models.instance import ProblemInstance

# Slack on g_s(x) <= y_s when a lifted point is checked against an instance.
OMEGA0_SLACK = 1e-8


class ScenarioValues(ArrayModel):
    """g_s(x) for every scenario and the smallest piece index attaining it."""
    values: FloatArray
    argmax_piece: IntArray

    @property
    def S(self) -> int:
        return self.values.shape[0]


class RankFunctionals(ArrayModel):
    G1: float
    G2: float
    phi: float


class DualPoint(ArrayModel):
    """Selector z, a point of C = {0 <= z <= 1, sum z >= S - m}."""
    z: FloatArray

    def in_C(self, m: int, tol: float = 1e-10) -> bool:
        z = self.z
        return bool(np.all(z >= -tol) and np.all(z <= 1 + tol) and z.sum() >= z.shape[0] - m - tol)


class LiftedPoint(ArrayModel):
    x: FloatArray
    y: FloatArray
    z: DualPoint

    @model_validator(mode="after")
    def _check_lengths(self) -> "LiftedPoint":
        if self.y.shape != self.z.z.shape:
            raise ValueError("y and z must have one entry per scenario")
        return self

    @property
    def penalty(self) -> float:
        """V(y, z) = sum_s y_s z_s"""
        return float(self.y @ self.z.z)

    def omega0_violation(self, instance: ProblemInstance) -> float:
        """Largest breach of g_s(x) <= y_s and y >= 0; zero inside."""
        if self.x.shape != (instance.d,) or self.y.shape != (instance.S,):
            raise ValueError(f"point shapes x={self.x.shape}, y={self.y.shape} do not fit d={instance.d}, S={instance.S}")
        values = instance.scenarios.piece_values(self.x).max(axis=1)
        return float(max(0.0, np.max(values - self.y), np.max(-self.y)))

    def in_omega0(self, instance: ProblemInstance, tol: float = OMEGA0_SLACK) -> bool:
        """g(x) <= y + tol, y >= 0 and z in C."""
        return self.omega0_violation(instance) <= tol and self.z.in_C(instance.m)
