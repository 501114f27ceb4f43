"""Projected composite-subgradient engine.

Minimizes 1/2 x'Px + q'x + sum_t w_t [max_i h_{t,i}(x)]_+ over a polyhedron.
The subgradient phase tracks the best iterate; a smooth epigraph refinement
then runs through the constrained engine and is kept only when it lowers the
recorded best value.
"""
import logging
from typing import Callable, Optional

import numpy as np

from app.core.config import settings
from app.core.exceptions import EngineError
from app.models.subproblem import (
    QuadraticRow,
    SubproblemSolution,
    SubproblemSpec,
    SubproblemStatus,
)
from app.services.constrained_engine import ConstrainedEngine, start_point
from app.services.kkt import kkt_components
from app.services.splitting_engine import SplittingEngine

logger = logging.getLogger(__name__)

IMPROVEMENT_TOL = 1e-12
REGION_TOL = 1e-9


class CompositeTerms:
    """Composite terms stacked into (T, I, n) arrays."""

    def __init__(self, spec: SubproblemSpec):
        sizes = {term.quad.shape[0] for term in spec.composite}
        if len(sizes) > 1:
            raise EngineError("composite terms must share the same number of pieces")
        n = spec.n
        I = sizes.pop() if sizes else 1
        T = len(spec.composite)
        self.weights = np.array([term.weight for term in spec.composite])
        self.quad = np.array([term.quad for term in spec.composite]).reshape(T, I, n)
        self.lin = np.array([term.lin for term in spec.composite]).reshape(T, I, n)
        self.offset = np.array([term.offset for term in spec.composite]).reshape(T, I)

    def pieces(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("tin,n->ti", self.quad, x * x) + np.einsum("tin,n->ti", self.lin, x) + self.offset

    def value(self, x: np.ndarray) -> float:
        if not self.weights.size:
            return 0.0
        return float(self.weights @ np.maximum(self.pieces(x).max(axis=1), 0.0))

    def subgradient(self, x: np.ndarray) -> np.ndarray:
        if not self.weights.size:
            return np.zeros_like(x)
        pieces = self.pieces(x)
        active = np.argmax(pieces, axis=1)
        positive = pieces[np.arange(pieces.shape[0]), active] > 0.0
        rows = np.arange(pieces.shape[0])[positive]
        grads = 2.0 * self.quad[rows, active[positive]] * x[None, :] + self.lin[rows, active[positive]]
        return self.weights[positive] @ grads


class CompositeSubgradientEngine:
    name = "composite"

    def __init__(
        self,
        splitting: SplittingEngine = None,
        constrained: ConstrainedEngine = None,
        max_iter: int = None,
        step: float = None,
        stall_iter: int = None,
    ):
        self.splitting = splitting or SplittingEngine()
        self.constrained = constrained or ConstrainedEngine()
        self.max_iter = max_iter or settings.FALLBACK_MAX_ITER
        self.step = step or settings.FALLBACK_STEP
        self.stall_iter = stall_iter or settings.FALLBACK_STALL_ITER

    def _projector(self, spec: SubproblemSpec, tol: float) -> Callable[[np.ndarray], np.ndarray]:
        if spec.A.shape[0] == 0 and spec.E.shape[0] == 0:
            return lambda v: np.clip(v, spec.lower, spec.upper)

        n = spec.n
        last = {"sol": None}

        def project(v: np.ndarray) -> np.ndarray:
            qp = SubproblemSpec.build(
                P=np.eye(n), q=-v, A=spec.A, b=spec.b, E=spec.E, e=spec.e,
                lower=spec.lower, upper=spec.upper,
            )
            sol = self.splitting.solve(qp, tol, warm=last["sol"])
            if sol.status == SubproblemStatus.INFEASIBLE:
                raise EngineError("projection onto the feasible region failed: region infeasible")
            last["sol"] = sol
            return np.clip(sol.x, spec.lower, spec.upper)

        return project

    def epigraph_spec(self, spec: SubproblemSpec) -> SubproblemSpec:
        """min smooth(x) + sum_t w_t s_t  s.t. h_{t,i}(x) <= s_t, s >= 0, x in region."""
        n = spec.n
        T = len(spec.composite)
        P = np.zeros((n + T, n + T))
        P[:n, :n] = spec.P
        q = np.concatenate([spec.q, [term.weight for term in spec.composite]])
        rows = []
        for t, term in enumerate(spec.composite):
            for i in range(term.quad.shape[0]):
                lin = np.zeros(n + T)
                lin[:n] = term.lin[i]
                lin[n + t] = -1.0
                quad = np.concatenate([term.quad[i], np.zeros(T)])
                rows.append(QuadraticRow(quad=quad, lin=lin, offset=float(term.offset[i])))
        return SubproblemSpec.build(
            P=P,
            q=q,
            constant=spec.constant,
            A=np.hstack([spec.A, np.zeros((spec.A.shape[0], T))]),
            b=spec.b,
            E=np.hstack([spec.E, np.zeros((spec.E.shape[0], T))]),
            e=spec.e,
            lower=np.concatenate([spec.lower, np.zeros(T)]),
            upper=np.concatenate([spec.upper, np.full(T, np.inf)]),
            quad_rows=rows,
        )

    def _refine(self, spec: SubproblemSpec, terms: CompositeTerms, x: np.ndarray, tol: float):
        epi = self.epigraph_spec(spec)
        s0 = np.maximum(terms.pieces(x).max(axis=1), 0.0) if terms.weights.size else np.zeros(0)
        start = SubproblemSolution(
            x=np.concatenate([x, s0]),
            objective_value=0.0,
            dual_ineq=np.zeros(0), dual_eq=np.zeros(0), dual_bounds=np.zeros(0),
            dual_quad=np.zeros(0), dual_composite=np.zeros((0, 0)),
            status=SubproblemStatus.MAX_ITER, primal_residual=0.0, dual_residual=0.0,
            iterations=0, engine=self.name,
        )
        return self.constrained.solve(epi, tol, warm=start)

    def solve(
        self,
        spec: SubproblemSpec,
        tol: float,
        warm: Optional[SubproblemSolution] = None,
        lower_bound: Optional[float] = None,
    ) -> SubproblemSolution:
        if spec.quad_rows:
            raise EngineError("composite engine does not accept quadratic constraint rows")
        n = spec.n
        terms = CompositeTerms(spec)
        project = self._projector(spec, tol)

        def objective(x: np.ndarray) -> float:
            return float(0.5 * x @ spec.P @ x + spec.q @ x + spec.constant) + terms.value(x)

        x = np.array(warm.x, dtype=float) if warm is not None and warm.x.shape == (n,) else start_point(spec)
        x = project(x)
        best_x, best_value = x.copy(), objective(x)
        trace = [best_value]
        finite_width = (spec.upper - spec.lower)[np.isfinite(spec.upper - spec.lower)]
        scale = self.step * (float(finite_width.max()) if finite_width.size else 1.0)

        stall = 0
        iterations = 0
        value = best_value
        for k in range(1, self.max_iter + 1):
            iterations = k
            g = spec.P @ x + spec.q + terms.subgradient(x)
            gnorm = float(np.linalg.norm(g))
            if gnorm < 1e-14:
                break
            if lower_bound is not None:
                gap = value - lower_bound
                if gap <= 0.0:
                    break
                step = gap / (gnorm * gnorm)
            else:
                step = scale / (np.sqrt(k) * gnorm)
            x = project(x - step * g)
            value = objective(x)
            if value < best_value - IMPROVEMENT_TOL * max(1.0, abs(best_value)):
                best_x, best_value = x.copy(), value
                stall = 0
            else:
                stall += 1
            trace.append(best_value)
            if stall >= self.stall_iter:
                break

        logger.debug(f"composite engine: subgradient phase stopped after {iterations} iterations, best={best_value:.8g}")

        T = len(spec.composite)
        I = terms.offset.shape[1] if T else 0
        dual_ineq = np.zeros(spec.A.shape[0])
        dual_eq = np.zeros(spec.E.shape[0])
        dual_bounds = np.zeros(n)
        dual_composite = np.zeros((T, I))

        refined = self._refine(spec, terms, best_x, tol)
        if refined.status != SubproblemStatus.INFEASIBLE:
            x_ref = np.clip(refined.x[:n], spec.lower, spec.upper)
            ref_value = objective(x_ref)
            in_region = (
                (not spec.A.shape[0] or np.max(spec.A @ x_ref - spec.b) <= REGION_TOL)
                and (not spec.E.shape[0] or np.max(np.abs(spec.E @ x_ref - spec.e)) <= REGION_TOL)
            )
            if in_region and ref_value <= best_value + IMPROVEMENT_TOL * max(1.0, abs(best_value)):
                best_x, best_value = x_ref, min(best_value, ref_value)
                trace.append(best_value)
                dual_ineq = refined.dual_ineq
                dual_eq = refined.dual_eq
                dual_bounds = refined.dual_bounds[:n]
                dual_composite = refined.dual_quad.reshape(T, I) if T else dual_composite
            else:
                logger.debug(f"composite engine: refinement rejected ({ref_value:.8g} vs best {best_value:.8g})")

        solution = SubproblemSolution(
            x=best_x,
            objective_value=objective(best_x),
            dual_ineq=dual_ineq,
            dual_eq=dual_eq,
            dual_bounds=dual_bounds,
            dual_quad=np.zeros(0),
            dual_composite=dual_composite,
            status=SubproblemStatus.MAX_ITER,
            primal_residual=0.0,
            dual_residual=0.0,
            iterations=iterations + refined.iterations,
            engine=self.name,
            best_trace=np.array(trace),
        )
        comps = kkt_components(spec, solution)
        dual_residual = max(comps.dual, comps.stationarity, comps.complementarity)
        status = SubproblemStatus.OPTIMAL if max(comps.primal, dual_residual) <= tol else SubproblemStatus.MAX_ITER
        return solution.model_copy(update={
            "status": status,
            "primal_residual": comps.primal,
            "dual_residual": dual_residual,
        })
