"""KKT residuals of a subproblem solution.

Sign conventions: inequality, quadratic-row and composite multipliers are
nonnegative; equality multipliers are free; bound multipliers are signed,
positive at an active upper bound and negative at an active lower bound.
Stationarity reads P x + q + A'lam + E'nu + mu + sum kappa grad r + sum theta grad h = 0.
"""
import numpy as np

from app.models.subproblem import KKTComponents, SubproblemSolution, SubproblemSpec


def _max(values, initial: float = 0.0) -> float:
    return float(np.max(values, initial=initial)) if np.size(values) else initial


def _bound_terms(x, lower, upper, mu):
    """Complementarity and dual-sign violations of signed bound multipliers."""
    mu_up = np.maximum(mu, 0.0)
    mu_low = np.maximum(-mu, 0.0)
    dual = 0.0
    comp = 0.0
    finite_up = np.isfinite(upper)
    finite_low = np.isfinite(lower)
    # multipliers on a missing bound are dual infeasible
    dual = max(dual, _max(mu_up[~finite_up]), _max(mu_low[~finite_low]))
    comp = max(
        comp,
        _max(mu_up[finite_up] * np.abs(upper[finite_up] - x[finite_up])),
        _max(mu_low[finite_low] * np.abs(x[finite_low] - lower[finite_low])),
    )
    return dual, comp


def kkt_components(spec: SubproblemSpec, sol: SubproblemSolution) -> KKTComponents:
    x = np.asarray(sol.x, dtype=float)
    grad = spec.P @ x + spec.q
    primal = [0.0]
    dual = [0.0]
    comp = [0.0]

    if spec.A.shape[0]:
        slack = spec.A @ x - spec.b
        lam = sol.dual_ineq
        primal.append(_max(slack))
        dual.append(_max(-lam))
        comp.append(_max(np.abs(lam * slack)))
        grad = grad + spec.A.T @ lam

    if spec.E.shape[0]:
        primal.append(_max(np.abs(spec.E @ x - spec.e)))
        grad = grad + spec.E.T @ sol.dual_eq

    primal.append(_max(spec.lower - x))
    primal.append(_max(x - spec.upper))
    mu = sol.dual_bounds if sol.dual_bounds.shape == x.shape else np.zeros_like(x)
    bound_dual, bound_comp = _bound_terms(x, spec.lower, spec.upper, mu)
    dual.append(bound_dual)
    comp.append(bound_comp)
    grad = grad + mu

    if spec.quad_rows:
        kappa = sol.dual_quad if sol.dual_quad.shape == (len(spec.quad_rows),) else np.zeros(len(spec.quad_rows))
        for row, k in zip(spec.quad_rows, kappa):
            r = row.value(x)
            primal.append(max(r, 0.0))
            dual.append(max(-k, 0.0))
            comp.append(abs(k * r))
            grad = grad + k * row.gradient(x)

    for t, term in enumerate(spec.composite):
        pieces = term.piece_values(x)
        g = float(np.max(pieces))
        if sol.dual_composite.ndim == 2 and t < sol.dual_composite.shape[0] \
                and sol.dual_composite.shape[1] == pieces.shape[0]:
            theta = sol.dual_composite[t]
        else:
            theta = np.zeros_like(pieces)
        total = float(theta.sum())
        dual.append(_max(-theta))
        dual.append(max(total - term.weight, 0.0))
        comp.append(_max(np.maximum(theta, 0.0) * (g - pieces)))
        comp.append(total * max(-g, 0.0))
        comp.append(max(term.weight - total, 0.0) * max(g, 0.0))
        grad = grad + (2.0 * term.quad * x[None, :] + term.lin).T @ theta

    return KKTComponents(
        primal=max(primal),
        dual=max(dual),
        stationarity=_max(np.abs(grad)),
        complementarity=max(comp),
    )


def kkt_residual(spec: SubproblemSpec, sol: SubproblemSolution) -> float:
    """Max of primal, dual, stationarity and complementarity violations."""
    return kkt_components(spec, sol).residual
