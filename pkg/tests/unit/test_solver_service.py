import pytest

from app.core.exceptions import InvalidParameterError
from app.models.schemas import Algorithm, Family, PenaltySchedule, SolveStatus
from app.services.solver_service import SolverService, solver_service
from tests.fixtures.sample_data import T1_CVAR_SOLUTION, T1_OPTIMUM


class TestSolverService:
    """Unit tests for the algorithm registry."""

    @pytest.mark.unit
    def test_every_algorithm_is_registered(self):
        assert set(SolverService().algorithms) == set(Algorithm)

    @pytest.mark.unit
    def test_resolve_schedule_with_overrides(self):
        schedule = solver_service.resolve_schedule(Algorithm.PENDC_L, {"beta": 3.0}, Family.NORM)
        assert (schedule.sigma0, schedule.beta, schedule.rho) == (8e-5, 3.0, 1e-3)
        fixed = PenaltySchedule(sigma0=1.0, beta=2.0)
        assert solver_service.resolve_schedule(Algorithm.PENDC_P, fixed) is fixed

    @pytest.mark.unit
    def test_invalid_schedule(self):
        with pytest.raises(InvalidParameterError) as exc_info:
            solver_service.resolve_schedule(Algorithm.PENDC_P, {"beta": 0.5})
        assert any("beta" in err for err in exc_info.value.details["errors"])

    @pytest.mark.unit
    def test_unknown_algorithm(self, t1):
        with pytest.raises(InvalidParameterError):
            solver_service.solve(t1, "simplex")

    @pytest.mark.unit
    @pytest.mark.parametrize("algorithm, expected", [
        ("pendc-l", T1_OPTIMUM),
        ("pendc-p", T1_OPTIMUM),
        ("dca", T1_OPTIMUM),
        ("cvar", T1_CVAR_SOLUTION),
        ("oracle", T1_OPTIMUM),
    ])
    def test_t1_by_algorithm(self, t1, algorithm, expected):
        report = solver_service.solve(t1, algorithm)
        assert report.algorithm == Algorithm(algorithm)
        assert report.x_best[0] == pytest.approx(expected, abs=1e-6)
        assert report.status.is_feasible
        assert report.instance_hash

    @pytest.mark.unit
    def test_dca_start_is_forwarded(self, t1):
        report = solver_service.solve(t1, Algorithm.DCA, x0=[0.05])
        assert report.status == SolveStatus.FEASIBLE_STATIONARY
