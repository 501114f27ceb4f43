from types import SimpleNamespace

import numpy as np
import pytest

from app.core.exceptions import EngineError
from app.models.subproblem import CompositeTerm, QuadraticRow, SubproblemSpec, SubproblemStatus
from app.services.composite_engine import CompositeSubgradientEngine
from app.services.constrained_engine import (
    SLSQP_INCOMPATIBLE,
    ConstrainedEngine,
    phase_one_point,
    primal_violation,
)
from app.services.convex_service import (
    SubproblemSolver,
    build_scenario_program,
    kkt_components,
    kkt_residual,
    project_onto_region,
    solve_subproblem,
)
from app.services.splitting_engine import SplittingEngine
from tests.fixtures.sample_data import random_affine_instance


def box_qp(target, lower=-1.0, upper=1.0) -> SubproblemSpec:
    """min 1/2 ||x - target||^2 over a box."""
    target = np.asarray(target, dtype=float)
    n = target.shape[0]
    return SubproblemSpec.build(
        P=np.eye(n), q=-target, constant=0.5 * float(target @ target),
        lower=np.full(n, lower), upper=np.full(n, upper),
    )


def offset_disc_spec() -> SubproblemSpec:
    """min 1/2 ||x||^2 over the disc of radius 1/2 around (3, 3)."""
    return SubproblemSpec.build(
        P=np.eye(2), q=np.zeros(2),
        lower=np.full(2, -5.0), upper=np.full(2, 5.0),
        quad_rows=[QuadraticRow(quad=[1.0, 1.0], lin=[-6.0, -6.0], offset=17.75)],
    )


class TestSplittingEngine:
    """Unit tests for the ADMM engine."""

    @pytest.mark.unit
    def test_box_projection(self):
        sol = SplittingEngine().solve(box_qp([2.0, -0.5, -3.0]), 1e-8)
        assert sol.status == SubproblemStatus.OPTIMAL
        np.testing.assert_allclose(sol.x, [1.0, -0.5, -1.0], atol=1e-7)
        assert sol.dual_bounds[0] > 0 > sol.dual_bounds[2]

    @pytest.mark.unit
    def test_equality_constrained_qp(self):
        """min x1^2 + x2^2 s.t. x1 + x2 = 1 has x = (1/2, 1/2) and multiplier -1."""
        spec = SubproblemSpec.build(P=2.0 * np.eye(2), q=np.zeros(2), E=np.ones((1, 2)), e=np.ones(1))
        sol = SplittingEngine().solve(spec, 1e-8)
        assert sol.optimal
        np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-7)
        np.testing.assert_allclose(sol.dual_eq, [-1.0], atol=1e-6)
        assert kkt_residual(spec, sol) <= 1e-6

    @pytest.mark.unit
    def test_linear_program(self):
        """min -x1 - x2 s.t. x1 + 2 x2 <= 2, 0 <= x <= 1."""
        spec = SubproblemSpec.build(
            P=np.zeros((2, 2)), q=-np.ones(2), A=np.array([[1.0, 2.0]]), b=np.array([2.0]),
            lower=np.zeros(2), upper=np.ones(2),
        )
        sol = SplittingEngine().solve(spec, 1e-8)
        assert sol.optimal
        np.testing.assert_allclose(sol.x, [1.0, 0.5], atol=1e-6)
        assert sol.objective_value == pytest.approx(-1.5, abs=1e-6)

    @pytest.mark.unit
    def test_detects_infeasibility(self):
        spec = SubproblemSpec.build(
            P=np.eye(1), q=np.zeros(1), A=np.array([[1.0], [-1.0]]), b=np.array([-1.0, -1.0]),
        )
        sol = SplittingEngine().solve(spec, 1e-8)
        assert sol.status == SubproblemStatus.INFEASIBLE

    @pytest.mark.unit
    def test_warm_start_at_optimum_is_immediate(self):
        engine = SplittingEngine()
        spec = box_qp([2.0, 0.3])
        first = engine.solve(spec, 1e-8)
        second = engine.solve(spec, 1e-8, warm=first)
        assert second.optimal
        assert second.iterations == 0
        np.testing.assert_allclose(second.x, first.x, atol=1e-9)

    @pytest.mark.unit
    def test_factorization_is_cached_across_solves(self):
        """Changing only q reuses the factorization."""
        engine = SplittingEngine()
        engine.solve(box_qp([0.2, 0.1]), 1e-8)
        count = engine.factorizations
        engine.solve(box_qp([-0.4, 0.5]), 1e-8)
        assert engine.factorizations == count

    @pytest.mark.unit
    def test_rejects_nonlinear_rows(self):
        spec = SubproblemSpec.build(
            P=np.eye(1), q=np.zeros(1),
            quad_rows=[QuadraticRow(quad=[1.0], lin=[0.0], offset=-1.0)],
        )
        with pytest.raises(EngineError):
            SplittingEngine().solve(spec, 1e-8)


class TestConstrainedEngine:
    """Unit tests for the SLSQP engine with quadratic rows."""

    @pytest.mark.unit
    def test_disc_constraint(self):
        """max x1 + x2 over x1^2 + x2^2 <= 2 gives (1, 1) with multiplier 1/2."""
        spec = SubproblemSpec.build(
            P=np.zeros((2, 2)), q=-np.ones(2),
            lower=np.full(2, -5.0), upper=np.full(2, 5.0),
            quad_rows=[QuadraticRow(quad=[1.0, 1.0], lin=[0.0, 0.0], offset=-2.0)],
        )
        sol = ConstrainedEngine().solve(spec, 1e-6)
        assert sol.status != SubproblemStatus.INFEASIBLE
        np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-5)
        np.testing.assert_allclose(sol.dual_quad, [0.5], atol=1e-4)

    @pytest.mark.unit
    def test_infeasible_rows(self):
        spec = SubproblemSpec.build(
            P=np.zeros((1, 1)), q=np.ones(1), lower=[-1.0], upper=[1.0],
            quad_rows=[QuadraticRow(quad=[1.0], lin=[0.0], offset=1.0)],
        )
        assert ConstrainedEngine().solve(spec, 1e-6).status == SubproblemStatus.INFEASIBLE

    @pytest.mark.unit
    def test_phase_one_point_reaches_offset_disc(self):
        """(x1 - 3)^2 + (x2 - 3)^2 <= 1/4 is reached from the origin."""
        spec = offset_disc_spec()
        x = phase_one_point(spec, np.zeros(2), 500)
        assert primal_violation(spec, x) <= 1e-6

    @pytest.mark.unit
    def test_stalled_first_pass_is_retried(self, mocker):
        """A first SLSQP pass that reports incompatible rows does not make the subproblem infeasible."""
        real = ConstrainedEngine._slsqp
        starts = []

        def stalls_once(self, spec, x0, tol):
            starts.append(np.array(x0))
            result, x, violation = real(self, spec, x0, tol)
            if len(starts) == 1:
                return SimpleNamespace(status=SLSQP_INCOMPATIBLE, nit=result.nit), x0, primal_violation(spec, x0)
            return result, x, violation

        mocker.patch.object(ConstrainedEngine, "_slsqp", stalls_once)
        spec = offset_disc_spec()
        sol = ConstrainedEngine().solve(spec, 1e-6, warm=None)
        assert len(starts) == 2
        assert primal_violation(spec, starts[1]) <= 1e-6
        assert sol.status != SubproblemStatus.INFEASIBLE
        # nearest disc point to the origin
        np.testing.assert_allclose(sol.x, [3.0 - 0.5 / np.sqrt(2.0)] * 2, atol=1e-5)


class TestCompositeEngine:
    """Unit tests for the projected subgradient engine."""

    @pytest.mark.unit
    def test_hinge_minimization(self):
        """min -x + 2 [x - 0.5]_+ over [0, 1] is attained at x = 0.5."""
        spec = SubproblemSpec.build(
            P=np.zeros((1, 1)), q=[-1.0], lower=[0.0], upper=[1.0],
            composite=[CompositeTerm(weight=2.0, quad=[[0.0]], lin=[[1.0]], offset=[-0.5])],
        )
        sol = CompositeSubgradientEngine().solve(spec, 1e-6)
        assert sol.x[0] == pytest.approx(0.5, abs=1e-5)
        assert sol.objective_value == pytest.approx(-0.5, abs=1e-5)

    @pytest.mark.unit
    def test_best_trace_is_nonincreasing(self):
        spec = SubproblemSpec.build(
            P=np.eye(2), q=-np.ones(2), lower=np.zeros(2), upper=np.full(2, 2.0),
            composite=[CompositeTerm(weight=1.0, quad=[[1.0, 1.0]], lin=[[0.0, 0.0]], offset=[-1.0])],
        )
        sol = SubproblemSolver().solve(spec, 1e-6)
        assert sol.engine == "composite"
        assert np.all(np.diff(sol.best_trace) <= 1e-12)


class TestConvexFacade:
    """Unit tests for routing, program builders and KKT residuals."""

    @pytest.mark.unit
    def test_routing_by_form(self):
        solver = SubproblemSolver()
        assert solver.solve(box_qp([0.5])).engine == "splitting"
        quad = SubproblemSpec.build(
            P=np.eye(1), q=np.zeros(1), quad_rows=[QuadraticRow(quad=[1.0], lin=[0.0], offset=-1.0)],
        )
        assert solver.solve(quad, 1e-6).engine == "constrained"

    @pytest.mark.unit
    def test_rejects_nonpositive_tolerance(self):
        with pytest.raises(EngineError):
            solve_subproblem(box_qp([0.5]), tol=0.0)

    @pytest.mark.unit
    def test_scenario_program_t1(self, t1, solver):
        """Enforcing scenarios 1..4 of T1 gives x = 0.2."""
        sol = solver.solve(build_scenario_program(t1, [1, 2, 3, 4]))
        assert sol.optimal
        assert sol.x[0] == pytest.approx(0.2, abs=1e-7)
        all_enforced = solver.solve(build_scenario_program(t1, range(5)))
        assert all_enforced.x[0] == pytest.approx(0.1, abs=1e-7)

    @pytest.mark.unit
    def test_kkt_components_at_optimum(self, t1, solver):
        spec = build_scenario_program(t1, [1, 2, 3, 4])
        sol = solver.solve(spec)
        comps = kkt_components(spec, sol)
        assert comps.residual <= 1e-6
        assert comps.primal <= 1e-6

    @pytest.mark.unit
    def test_project_onto_region(self, solver):
        instance = random_affine_instance(0)
        np.testing.assert_allclose(project_onto_region(instance, [3.0, -0.2], solver), [1.0, -0.2])


def random_strongly_convex_qp(seed: int, n: int = 4, rows: int = 3) -> SubproblemSpec:
    """Strongly convex QP with a box and inequality rows that hold strictly at the origin."""
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    return SubproblemSpec.build(
        P=B @ B.T + 0.1 * np.eye(n),
        q=rng.normal(scale=3.0, size=n),
        A=rng.normal(size=(rows, n)),
        b=rng.uniform(0.2, 1.0, size=rows),
        lower=np.full(n, -2.0),
        upper=np.full(n, 2.0),
    )


class TestEngineAgreement:
    """Both engines on the same linearly constrained QPs."""

    @pytest.mark.unit
    @pytest.mark.parametrize("seed", range(20))
    def test_splitting_matches_constrained(self, seed):
        spec = random_strongly_convex_qp(seed)
        admm = SplittingEngine().solve(spec, 1e-8)
        slsqp = ConstrainedEngine().solve(spec, 1e-8)
        assert admm.optimal
        assert slsqp.status != SubproblemStatus.INFEASIBLE
        scale = max(1.0, abs(admm.objective_value))
        assert admm.objective_value == pytest.approx(slsqp.objective_value, abs=1e-5 * scale)
        np.testing.assert_allclose(admm.x, slsqp.x, atol=1e-3)

    @pytest.mark.unit
    @pytest.mark.parametrize("seed", range(5))
    def test_same_input_same_output(self, seed):
        spec = random_strongly_convex_qp(seed)
        first = SubproblemSolver().solve(spec, tol=1e-8)
        second = SubproblemSolver().solve(spec, tol=1e-8)
        assert np.array_equal(first.x, second.x)
        assert first.iterations == second.iterations
        assert first.status == second.status

        warm_a = SplittingEngine().solve(spec, 1e-8, warm=first)
        warm_b = SplittingEngine().solve(spec, 1e-8, warm=first)
        assert np.array_equal(warm_a.x, warm_b.x)

    @pytest.mark.unit
    @pytest.mark.parametrize("seed", range(10))
    def test_warm_start_never_costs_more(self, seed):
        """Re-solving from the previous solution takes no more iterations than a cold solve."""
        spec = random_strongly_convex_qp(seed)
        engine = SplittingEngine()
        cold = engine.solve(spec, 1e-8)
        warm = engine.solve(spec, 1e-8, warm=cold)
        assert warm.optimal
        assert warm.iterations <= cold.iterations
        assert warm.objective_value == pytest.approx(cold.objective_value, abs=1e-7 * max(1.0, abs(cold.objective_value)))
