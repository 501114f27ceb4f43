import logging
from typing import Any, Dict, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from app.core.exceptions import InstanceValidationError, InvalidParameterError
from app.models.instance import FeasibleRegion, Objective, ProblemInstance, RiskSpec, ScenarioSet
from app.models.schemas import FAMILY_PARAMS, Family, NormParams, PortfolioParams, TransportParams
from app.services.instance_service import instance_service

logger = logging.getLogger(__name__)

REFERENCE_INSTANCES = ("t1", "example1")


def _coerce_params(family: Family, params: Union[BaseModel, Dict[str, Any], None]) -> BaseModel:
    model = FAMILY_PARAMS[family]
    if isinstance(params, model):
        return params
    try:
        return model.model_validate(params or {})
    except ValidationError as e:
        raise InvalidParameterError(
            f"invalid parameters for family '{family.value}'",
            {"errors": [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]},
        ) from e


def sample_norm_coefficients(params: NormParams, seed: int) -> np.ndarray:
    """Raw Gaussian coefficients xi with shape (S, mcons, d).

    Row j (1-based) has mean j/d, unit variance and within-row correlation
    0.5; rows are independent.
    """
    rng = np.random.default_rng(seed)
    d, mcons = params.d, params.mcons
    cov = 0.5 * np.ones((d, d)) + 0.5 * np.eye(d)
    chol = np.linalg.cholesky(cov)
    means = (np.arange(1, mcons + 1) / d)[None, :, None]
    noise = rng.standard_normal((params.S, mcons, d)) @ chol.T
    return means + noise


class GeneratorService:
    def generate(self, family: Union[Family, str], params: Union[BaseModel, Dict[str, Any], None], seed: int) -> ProblemInstance:
        """Deterministic instance of an experiment family for a given seed."""
        try:
            family = Family(family)
        except ValueError as e:
            raise InvalidParameterError(f"unknown family '{family}'", {"families": [f.value for f in Family]}) from e
        params = _coerce_params(family, params)
        builder = {
            Family.NORM: self.norm_instance,
            Family.TRANSPORT: self.transport_instance,
            Family.PORTFOLIO: self.portfolio_instance,
        }[family]
        instance = builder(params, seed)
        report = instance_service.validate_instance(instance)
        if not report.is_empty:
            raise InstanceValidationError(f"generated {family.value} instance is invalid", report.findings)
        logger.info(f"Generated {family.value} instance '{instance.name}': d={instance.d}, S={instance.S}, m={instance.m}")
        return instance

    def norm_instance(self, params: NormParams, seed: int) -> ProblemInstance:
        xi = sample_norm_coefficients(params, seed)
        d, S = params.d, params.S
        upper = params.upper if params.upper is not None else float(np.sqrt(params.theta))
        return ProblemInstance(
            name=f"norm-d{d}-m{params.mcons}-S{S}-seed{seed}",
            objective=Objective(Q=np.zeros((d, d)), c=-np.ones(d)),
            region=FeasibleRegion.box(np.zeros(d), np.full(d, upper)),
            scenarios=ScenarioSet(
                quad=xi ** 2,
                lin=np.zeros_like(xi),
                offset=np.full((S, params.mcons), -params.theta),
            ),
            risk=RiskSpec(alpha=params.alpha, S=S),
        )

    def transport_instance(self, params: TransportParams, seed: int) -> ProblemInstance:
        rng = np.random.default_rng(seed)
        n, m, S = params.n, params.m_cust, params.S
        costs = rng.uniform(params.cost_low, params.cost_high, size=(n, m))
        demand = rng.lognormal(mean=params.demand_loc, sigma=params.demand_scale, size=(S, m))
        mean_demand = float(np.exp(params.demand_loc + 0.5 * params.demand_scale ** 2))
        capacity = np.full(n, params.capacity_factor * m * mean_demand / n)

        d = n * m
        # x[i * m + j] ships from supplier i to customer j
        supply_rows = np.zeros((n, d))
        for i in range(n):
            supply_rows[i, i * m:(i + 1) * m] = 1.0
        lin = np.zeros((S, m, d))
        for j in range(m):
            lin[:, j, j::m] = -1.0

        return ProblemInstance(
            name=f"transport-n{n}-m{m}-S{S}-seed{seed}",
            objective=Objective(Q=np.zeros((d, d)), c=costs.ravel()),
            region=FeasibleRegion.box(
                np.zeros(d), np.repeat(capacity, m), A=supply_rows, b=capacity,
            ),
            scenarios=ScenarioSet(quad=np.zeros((S, m, d)), lin=lin, offset=demand),
            risk=RiskSpec(alpha=params.alpha, S=S),
        )

    def _synthetic_returns(self, params: PortfolioParams, rng: np.random.Generator) -> np.ndarray:
        n, k = params.n, params.n_factors
        drift = rng.uniform(0.0, 0.02, size=n)
        loadings = rng.normal(0.0, 0.05, size=(n, k))
        idio = rng.uniform(0.01, 0.03, size=n)
        factors = rng.standard_normal((params.S, k))
        return drift + factors @ loadings.T + rng.standard_normal((params.S, n)) * idio

    def portfolio_instance(self, params: PortfolioParams, seed: int) -> ProblemInstance:
        rng = np.random.default_rng(seed)
        if params.returns_csv:
            returns = instance_service.import_scenario_csv(params.returns_csv)
            source = "csv"
        else:
            returns = self._synthetic_returns(params, rng)
            source = "synthetic"
        S, n = returns.shape
        if n < 2:
            raise InvalidParameterError("portfolio needs at least two assets", {"assets": n})
        mu = returns.mean(axis=0)
        sigma = np.cov(returns, rowvar=False, bias=True).reshape(n, n)
        Q = params.gamma * 0.5 * (sigma + sigma.T)
        upper = params.upper if params.upper is not None else min(1.0, 2.0 / n)

        return ProblemInstance(
            name=f"portfolio-{source}-n{n}-S{S}-seed{seed}",
            objective=Objective(Q=Q, c=-mu),
            region=FeasibleRegion.box(np.zeros(n), np.full(n, upper), E=np.ones((1, n)), e=np.ones(1)),
            scenarios=ScenarioSet(
                quad=np.zeros((S, 1, n)),
                lin=-returns[:, None, :],
                offset=np.full((S, 1), params.target),
            ),
            risk=RiskSpec(alpha=params.alpha, S=S),
        )

    def reference_instance(self, name: str) -> ProblemInstance:
        """Built-in fixtures: 't1' and 'example1'."""
        if name == "t1":
            b = np.array([0.1, 0.2, 0.3, 0.9, 1.0])
            return ProblemInstance(
                name="t1",
                objective=Objective(Q=np.zeros((1, 1)), c=[-1.0]),
                region=FeasibleRegion.box([0.0], [1.0]),
                scenarios=ScenarioSet(quad=np.zeros((5, 1, 1)), lin=np.ones((5, 1, 1)), offset=-b[:, None]),
                risk=RiskSpec(alpha=0.2, S=5),
            )
        if name == "example1":
            # scenario 0: max{x, 0}; scenario 1: max{-x, 0}
            lin = np.array([[[1.0], [0.0]], [[-1.0], [0.0]]])
            return ProblemInstance(
                name="example1",
                objective=Objective(Q=np.zeros((1, 1)), c=[1.0]),
                region=FeasibleRegion.box([-1.0], [1.0]),
                scenarios=ScenarioSet(quad=np.zeros((2, 2, 1)), lin=lin, offset=np.zeros((2, 2))),
                risk=RiskSpec(alpha=0.5, S=2),
            )
        raise InvalidParameterError(f"unknown reference instance '{name}'", {"available": list(REFERENCE_INSTANCES)})


# Global instance
generator_service = GeneratorService()


def generate_instance(family: Union[Family, str], params: Union[BaseModel, Dict[str, Any], None], seed: int) -> ProblemInstance:
    return generator_service.generate(family, params, seed)


def reference_instance(name: str) -> ProblemInstance:
    return generator_service.reference_instance(name)
