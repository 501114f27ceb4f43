"""Operator-splitting engine for linearly constrained convex QPs.

Solves min 1/2 x'Px + q'x subject to l <= Cx <= u, where C stacks the
inequality rows, the equality rows and the finite variable bounds. Iterates
follow the relaxed ADMM scheme with a cached factorization of
P + sigma I + C' diag(rho) C, adaptive rho rebalancing, periodic solution
polishing on the guessed active set, and a primal infeasibility certificate
built from successive dual differences.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from app.core.config import settings
from app.core.exceptions import EngineError
from app.models.subproblem import SubproblemSolution, SubproblemSpec, SubproblemStatus

logger = logging.getLogger(__name__)

EQ_RHO_SCALE = 1e3
RHO_MIN, RHO_MAX = 1e-6, 1e6
POLISH_DELTA = 1e-7
POLISH_REFINE_ITER = 3
INFEASIBILITY_TOL = 1e-6
# Checks to wait between two rho updates.
RHO_UPDATE_COOLDOWN = 5


class StackedConstraints:
    """Rows of C = [A; E; I_B] with their bound vectors."""

    def __init__(self, spec: SubproblemSpec):
        n = spec.n
        self.n_ineq = spec.A.shape[0]
        self.n_eq = spec.E.shape[0]
        self.bound_index = np.flatnonzero(np.isfinite(spec.lower) | np.isfinite(spec.upper))
        selector = np.zeros((self.bound_index.shape[0], n))
        selector[np.arange(self.bound_index.shape[0]), self.bound_index] = 1.0
        self.C = np.vstack([spec.A, spec.E, selector])
        self.lower = np.concatenate([np.full(self.n_ineq, -np.inf), spec.e, spec.lower[self.bound_index]])
        self.upper = np.concatenate([spec.b, spec.e, spec.upper[self.bound_index]])
        self.eq_mask = self.lower == self.upper

    @property
    def rows(self) -> int:
        return self.C.shape[0]

    def split_duals(self, y: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        dual_ineq = y[: self.n_ineq]
        dual_eq = y[self.n_ineq : self.n_ineq + self.n_eq]
        dual_bounds = np.zeros(n)
        dual_bounds[self.bound_index] = y[self.n_ineq + self.n_eq :]
        return dual_ineq, dual_eq, dual_bounds

    def stack_duals(self, warm: SubproblemSolution, n: int) -> Optional[np.ndarray]:
        if (
            warm.dual_ineq.shape != (self.n_ineq,)
            or warm.dual_eq.shape != (self.n_eq,)
            or warm.dual_bounds.shape != (n,)
        ):
            return None
        return np.concatenate([warm.dual_ineq, warm.dual_eq, warm.dual_bounds[self.bound_index]])


class SplittingEngine:
    """ADMM engine; one instance serves one solve at a time."""

    name = "splitting"

    def __init__(
        self,
        max_iter: int = None,
        relaxation: float = None,
        rho: float = None,
        sigma: float = None,
        rho_ratio: float = None,
        check_interval: int = None,
        polish_interval: int = None,
    ):
        self.max_iter = max_iter or settings.SPLITTING_MAX_ITER
        self.relaxation = relaxation or settings.SPLITTING_RELAXATION
        self.rho0 = rho or settings.SPLITTING_RHO
        self.sigma = sigma or settings.SPLITTING_SIGMA
        self.rho_ratio = rho_ratio or settings.SPLITTING_RHO_RATIO
        self.check_interval = check_interval or settings.SPLITTING_CHECK_INTERVAL
        self.polish_interval = polish_interval or settings.SPLITTING_POLISH_INTERVAL
        self._factor_key = None
        self._factor = None
        self.factorizations = 0

    def _factorize(self, P: np.ndarray, C: np.ndarray, rho: np.ndarray):
        key = self._factor_key
        if (
            key is not None
            and key[0].shape == P.shape
            and key[1].shape == C.shape
            and np.array_equal(key[0], P)
            and np.array_equal(key[1], C)
            and np.array_equal(key[2], rho)
        ):
            return self._factor
        K = P + self.sigma * np.eye(P.shape[0]) + C.T @ (rho[:, None] * C)
        try:
            self._factor = cho_factor(K)
        except np.linalg.LinAlgError as e:
            raise EngineError(f"reduced system not positive definite: {e}") from e
        self._factor_key = (P.copy(), C.copy(), rho.copy())
        self.factorizations += 1
        return self._factor

    def _initial_rho(self, stacked: StackedConstraints) -> np.ndarray:
        rho = np.full(stacked.rows, self.rho0)
        rho[stacked.eq_mask] *= EQ_RHO_SCALE
        return rho

    @staticmethod
    def _residuals(P, q, C, x, z, y) -> Tuple[float, float]:
        r_prim = float(np.max(np.abs(C @ x - z), initial=0.0))
        r_dual = float(np.max(np.abs(P @ x + q + C.T @ y), initial=0.0))
        return r_prim, r_dual

    def _rho_estimate(self, P, q, C, x, z, y, r_prim, r_dual) -> float:
        prim_scale = max(np.max(np.abs(C @ x), initial=0.0), np.max(np.abs(z), initial=0.0), 1e-10)
        dual_scale = max(
            np.max(np.abs(P @ x), initial=0.0),
            np.max(np.abs(C.T @ y), initial=0.0),
            np.max(np.abs(q), initial=0.0),
            1e-10,
        )
        return float(np.sqrt((r_prim / prim_scale) / (r_dual / dual_scale + 1e-30)))

    @staticmethod
    def _primal_infeasible(C, lower, upper, dy: np.ndarray) -> bool:
        norm = np.max(np.abs(dy), initial=0.0)
        if norm < 1e-12:
            return False
        dy = dy / norm
        if np.max(np.abs(C.T @ dy), initial=0.0) > INFEASIBILITY_TOL:
            return False
        pos = np.where(dy > INFEASIBILITY_TOL, dy, 0.0)
        neg = np.where(dy < -INFEASIBILITY_TOL, dy, 0.0)
        if np.any((pos > 0) & ~np.isfinite(upper)) or np.any((neg < 0) & ~np.isfinite(lower)):
            return False
        support = np.sum(pos[pos > 0] * upper[pos > 0]) + np.sum(neg[neg < 0] * lower[neg < 0])
        return bool(support < -INFEASIBILITY_TOL)

    def _polish(self, P, q, stacked: StackedConstraints, z, y, tol):
        """Solve the equality-constrained QP on the guessed active set."""
        lower, upper, C = stacked.lower, stacked.upper, stacked.C
        n = P.shape[0]
        ind_low = np.flatnonzero(z - lower < -y)
        upp_mask = upper - z < y
        upp_mask |= stacked.eq_mask
        upp_mask[ind_low] = False
        ind_upp = np.flatnonzero(upp_mask)
        active = np.concatenate([ind_low, ind_upp])
        C_red = C[active]
        k = active.shape[0]
        K_true = np.block([[P, C_red.T], [C_red, np.zeros((k, k))]])
        K_reg = K_true + np.diag(np.concatenate([np.full(n, POLISH_DELTA), np.full(k, -POLISH_DELTA)]))
        rhs = np.concatenate([-q, lower[ind_low], upper[ind_upp]])
        try:
            factor = lu_factor(K_reg, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            return None
        sol = lu_solve(factor, rhs)
        for _ in range(POLISH_REFINE_ITER):
            sol = sol + lu_solve(factor, rhs - K_true @ sol)
        if not np.all(np.isfinite(sol)):
            return None

        x = sol[:n]
        y_red = sol[n:]
        y_pol = np.zeros(stacked.rows)
        y_pol[ind_low] = y_red[: ind_low.shape[0]]
        y_pol[ind_upp] = y_red[ind_low.shape[0] :]
        # lower-active rows need y <= 0, upper-active rows y >= 0
        sign_low = y_pol[ind_low]
        upp_ineq = ind_upp[~stacked.eq_mask[ind_upp]]
        sign_upp = y_pol[upp_ineq]
        if np.any(sign_low > tol) or np.any(sign_upp < -tol):
            return None
        y_pol[ind_low] = np.minimum(sign_low, 0.0)
        y_pol[upp_ineq] = np.maximum(sign_upp, 0.0)

        Cx = C @ x
        z_pol = np.clip(Cx, lower, upper)
        r_prim, r_dual = self._residuals(P, q, C, x, z_pol, y_pol)
        if max(r_prim, r_dual) > tol:
            return None
        return x, z_pol, y_pol, r_prim, r_dual

    def solve(
        self,
        spec: SubproblemSpec,
        tol: float,
        warm: Optional[SubproblemSolution] = None,
    ) -> SubproblemSolution:
        if spec.composite or spec.quad_rows:
            raise EngineError("splitting engine only accepts linearly constrained QPs")
        if tol <= 0:
            raise EngineError(f"tolerance must be positive, got {tol}")

        n = spec.n
        P, q = spec.P, spec.q
        stacked = StackedConstraints(spec)
        C, lower, upper = stacked.C, stacked.lower, stacked.upper
        rho = self._initial_rho(stacked)
        factor = self._factorize(P, C, rho)
        alpha = self.relaxation

        x = np.zeros(n)
        y = np.zeros(stacked.rows)
        if warm is not None and warm.x.shape == (n,):
            x = np.array(warm.x, dtype=float)
            warm_y = stacked.stack_duals(warm, n)
            if warm_y is not None:
                y = np.array(warm_y, dtype=float)
        z = np.clip(C @ x, lower, upper)

        status = SubproblemStatus.MAX_ITER
        r_prim, r_dual = self._residuals(P, q, C, x, z, y)
        iterations = 0
        checks_since_update = 0

        if warm is not None:
            if max(r_prim, r_dual) <= tol:
                status = SubproblemStatus.OPTIMAL
            else:
                polished = self._polish(P, q, stacked, z, y, tol)
                if polished is not None:
                    x, z, y, r_prim, r_dual = polished
                    status = SubproblemStatus.OPTIMAL

        while status == SubproblemStatus.MAX_ITER and iterations < self.max_iter:
            iterations += 1
            rhs = self.sigma * x - q + C.T @ (rho * z - y)
            x_tilde = cho_solve(factor, rhs)
            z_tilde = C @ x_tilde
            x = alpha * x_tilde + (1.0 - alpha) * x
            z_relaxed = alpha * z_tilde + (1.0 - alpha) * z
            z = np.clip(z_relaxed + y / rho, lower, upper)
            dy = rho * (z_relaxed - z)
            y = y + dy

            if iterations % self.check_interval == 0:
                r_prim, r_dual = self._residuals(P, q, C, x, z, y)
                if max(r_prim, r_dual) <= tol:
                    status = SubproblemStatus.OPTIMAL
                    break
                if self._primal_infeasible(C, lower, upper, dy):
                    status = SubproblemStatus.INFEASIBLE
                    break
                checks_since_update += 1
                if checks_since_update >= RHO_UPDATE_COOLDOWN:
                    ratio = self._rho_estimate(P, q, C, x, z, y, r_prim, r_dual)
                    if ratio > self.rho_ratio or ratio < 1.0 / self.rho_ratio:
                        rho = np.clip(rho * ratio, RHO_MIN, RHO_MAX)
                        factor = self._factorize(P, C, rho)
                        checks_since_update = 0
                        logger.debug(f"rho rebalanced by {ratio:.3g} at iteration {iterations}")

            if iterations % self.polish_interval == 0:
                polished = self._polish(P, q, stacked, z, y, tol)
                if polished is not None:
                    x, z, y, r_prim, r_dual = polished
                    status = SubproblemStatus.OPTIMAL
                    logger.debug(f"polished solution accepted at iteration {iterations}")
                    break

        if status == SubproblemStatus.MAX_ITER:
            r_prim, r_dual = self._residuals(P, q, C, x, z, y)
            logger.warning(
                f"splitting engine hit max_iter={self.max_iter}: r_prim={r_prim:.3e}, r_dual={r_dual:.3e}"
            )

        dual_ineq, dual_eq, dual_bounds = stacked.split_duals(y, n)
        return SubproblemSolution(
            x=x,
            objective_value=spec.smooth_value(x),
            dual_ineq=dual_ineq,
            dual_eq=dual_eq,
            dual_bounds=dual_bounds,
            dual_quad=np.zeros(0),
            dual_composite=np.zeros((0, 0)),
            status=status,
            primal_residual=r_prim,
            dual_residual=r_dual,
            iterations=iterations,
            engine=self.name,
        )
