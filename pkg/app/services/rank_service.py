"""Rank statistics of scenario constraint values.

Ties are broken toward the smallest index everywhere: argmax over pieces,
selection of the top-m scenarios and the lifting order.
"""
import logging
from typing import Union

import numpy as np

from app.core.config import settings
from app.core.exceptions import DimensionMismatchError, InvalidParameterError
from app.models.instance import ProblemInstance, RiskSpec
from app.models.points import DualPoint, RankFunctionals, ScenarioValues

logger = logging.getLogger(__name__)

# Slack on sum(z) >= S - m when locating the projection multiplier.
_SWEEP_SLACK = 1e-12


def as_point(instance: ProblemInstance, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (instance.d,):
        raise DimensionMismatchError(
            f"point has shape {x.shape}, instance expects ({instance.d},)",
            {"expected": instance.d, "got": list(x.shape)},
        )
    return x


def _values_array(values: Union[ScenarioValues, np.ndarray]) -> np.ndarray:
    if isinstance(values, ScenarioValues):
        return values.values
    return np.asarray(values, dtype=float)


def rank_functionals(values: Union[ScenarioValues, np.ndarray], risk: RiskSpec) -> RankFunctionals:
    v = _values_array(values)
    if v.shape != (risk.S,):
        raise DimensionMismatchError(f"{v.shape[0]} scenario values for S={risk.S}")
    m = risk.m
    ascending = np.sort(v)
    descending = ascending[::-1]
    G1 = float(descending[: m + 1].sum())
    G2 = float(descending[:m].sum())
    phi = float(ascending[risk.S - m - 1])
    return RankFunctionals(G1=G1, G2=G2, phi=phi)


def top_m_sum(y, m: int) -> float:
    """Sum of the m largest entries of y."""
    y = np.asarray(y, dtype=float).ravel()
    if not 0 <= m <= y.shape[0]:
        raise InvalidParameterError(f"m={m} outside [0, {y.shape[0]}]")
    if m == 0:
        return 0.0
    return float(np.sort(y)[::-1][:m].sum())


def top_order(values: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m largest values, ties to the smaller index."""
    return np.argsort(-np.asarray(values, dtype=float), kind="stable")[:m]


def project_onto_C(v, m: int) -> DualPoint:
    """Euclidean projection onto {0 <= z <= 1, sum z >= S - m}.

    Clips first; if the clipped sum falls short, shifts by the unique
    lambda > 0 with sum clip(v + lambda, 0, 1) = S - m, located by sweeping
    the sorted breakpoints {-v_s, 1 - v_s}.
    """
    v = np.asarray(v, dtype=float).ravel()
    S = v.shape[0]
    if S < 1 or not 0 <= m < S:
        raise InvalidParameterError(f"projection needs S >= 1 and 0 <= m < S, got S={S}, m={m}")
    target = S - m
    if m == 0:
        return DualPoint(z=np.ones(S))
    z = np.clip(v, 0.0, 1.0)
    total = z.sum()
    if total >= target:
        return DualPoint(z=z)

    # s(lambda) is piecewise linear; slope counts coordinates strictly inside (0, 1).
    slope0 = int(np.count_nonzero((v >= 0.0) & (v < 1.0)))
    positions = np.concatenate([-v, 1.0 - v])
    deltas = np.concatenate([np.ones(S), -np.ones(S)])
    ahead = positions > 0.0
    positions, deltas = positions[ahead], deltas[ahead]
    order = np.argsort(positions, kind="stable")
    positions, deltas = positions[order], deltas[order]

    slopes_before = slope0 + np.concatenate([[0.0], np.cumsum(deltas)[:-1]])
    starts = np.concatenate([[0.0], positions[:-1]])
    sums = total + np.cumsum(slopes_before * (positions - starts))

    k = min(int(np.searchsorted(sums, target - _SWEEP_SLACK)), positions.shape[0] - 1)
    prev_sum = total if k == 0 else sums[k - 1]
    lam = starts[k] + (target - prev_sum) / slopes_before[k]
    return DualPoint(z=np.clip(v + lam, 0.0, 1.0))


def lifted_penalty(y, z) -> float:
    """V(y, z) = sum_s y_s z_s"""
    if isinstance(z, DualPoint):
        z = z.z
    return float(np.asarray(y, dtype=float) @ np.asarray(z, dtype=float))


def vertex_dual_update(y, m: int) -> DualPoint:
    """Vertex of C minimizing <y, z>: zero on the m largest y, one elsewhere."""
    y = np.asarray(y, dtype=float)
    z = np.ones(y.shape[0])
    z[top_order(y, m)] = 0.0
    return DualPoint(z=z)


def cvar_dual_value(values, k: int) -> float:
    """min over eta of k * eta + sum_s [g_s - eta]_+, searched over the breakpoints."""
    g = _values_array(values)
    if k == 0:
        # eta -> +inf drives the expression to 0
        return 0.0
    candidates = k * g + np.maximum(g[None, :] - g[:, None], 0.0).sum(axis=1)
    return float(candidates.min())


class RankService:
    """Scenario values and the rank functionals evaluated at a point."""

    def __init__(self):
        self.feas_tol = settings.FEAS_TOL

    def scenario_values(self, instance: ProblemInstance, x) -> ScenarioValues:
        """g_s(x) = max_i h_{s,i}(x) with the first maximizing piece."""
        x = as_point(instance, x)
        pieces = instance.scenarios.piece_values(x)
        argmax = np.argmax(pieces, axis=1)
        values = pieces[np.arange(pieces.shape[0]), argmax]
        return ScenarioValues(values=values, argmax_piece=argmax)

    def phi_value(self, instance: ProblemInstance, x) -> float:
        """(S - m)-th smallest scenario value, the empirical value-at-risk."""
        values = self.scenario_values(instance, x).values
        return float(np.sort(values)[instance.S - instance.m - 1])

    def subgradient_G2(self, instance: ProblemInstance, x) -> np.ndarray:
        """One element of the subdifferential of G2 at x."""
        x = as_point(instance, x)
        sv = self.scenario_values(instance, x)
        scen = instance.scenarios
        grad = np.zeros(instance.d)
        for s in top_order(sv.values, instance.m):
            i = sv.argmax_piece[s]
            grad += 2.0 * scen.quad[s, i] * x + scen.lin[s, i]
        return grad

    def empirical_probability(self, instance: ProblemInstance, x, feas_tol: float = None) -> float:
        tol = self.feas_tol if feas_tol is None else feas_tol
        if tol < 0:
            raise InvalidParameterError(f"feas_tol must be nonnegative, got {tol}")
        values = self.scenario_values(instance, x).values
        return float(np.count_nonzero(values <= tol)) / instance.S


# Global instance
rank_service = RankService()

scenario_values = rank_service.scenario_values
phi_value = rank_service.phi_value
subgradient_G2 = rank_service.subgradient_G2
empirical_probability = rank_service.empirical_probability
