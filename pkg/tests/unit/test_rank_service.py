from itertools import product

import numpy as np
import pytest

from app.core.exceptions import DimensionMismatchError, InvalidParameterError
from app.models.instance import RiskSpec
from app.services.rank_service import (
    cvar_dual_value,
    empirical_probability,
    lifted_penalty,
    phi_value,
    project_onto_C,
    rank_functionals,
    scenario_values,
    subgradient_G2,
    top_m_sum,
    vertex_dual_update,
)
from tests.fixtures.sample_data import random_affine_instance, random_quadratic_instance


def brute_force_projection(v: np.ndarray, m: int) -> np.ndarray:
    """Enumerate active sets {z=0, z=1, free} with the sum constraint active or not."""
    S = v.shape[0]
    best, best_dist = None, np.inf
    for pattern in product((0, 1, 2), repeat=S):
        pattern = np.array(pattern)
        free = pattern == 2
        z = np.where(pattern == 1, 1.0, 0.0)
        candidates = []
        # sum constraint inactive: free coordinates keep v
        z_inactive = z.copy()
        z_inactive[free] = v[free]
        candidates.append(z_inactive)
        # sum constraint active: free coordinates are v + lambda
        if free.any():
            lam = (S - m - z[~free].sum() - v[free].sum()) / free.sum()
            z_active = z.copy()
            z_active[free] = v[free] + lam
            if lam >= -1e-12:
                candidates.append(z_active)
        for cand in candidates:
            if np.all(cand >= -1e-12) and np.all(cand <= 1 + 1e-12) and cand.sum() >= S - m - 1e-9:
                dist = np.sum((cand - v) ** 2)
                if dist < best_dist:
                    best, best_dist = cand, dist
    return best


class TestScenarioValues:
    """Unit tests for scenario values and rank functionals."""

    @pytest.mark.unit
    def test_t1_values(self, t1):
        sv = scenario_values(t1, [0.2])
        np.testing.assert_allclose(sv.values, [0.1, 0.0, -0.1, -0.7, -0.8])
        assert list(sv.argmax_piece) == [0] * 5

    @pytest.mark.unit
    def test_argmax_ties_go_to_first_piece(self, example1):
        sv = scenario_values(example1, [0.0])
        np.testing.assert_allclose(sv.values, [0.0, 0.0])
        assert list(sv.argmax_piece) == [0, 0]

    @pytest.mark.unit
    def test_wrong_dimension(self, t1):
        with pytest.raises(DimensionMismatchError):
            scenario_values(t1, [0.1, 0.2])

    @pytest.mark.unit
    def test_rank_functionals_t1(self, t1):
        rf = rank_functionals(scenario_values(t1, [0.2]), t1.risk)
        assert rf.G1 == pytest.approx(0.1)
        assert rf.G2 == pytest.approx(0.1)
        assert rf.phi == pytest.approx(0.0)
        assert phi_value(t1, [0.25]) == pytest.approx(0.05)

    @pytest.mark.unit
    def test_rank_identity_on_random_points(self):
        """phi equals the (S-m)-th smallest value and G1 - G2 on random data."""
        rng = np.random.default_rng(7)
        for trial in range(1000):
            S = int(rng.integers(2, 12))
            risk = RiskSpec(alpha=float(rng.uniform(0.01, 0.49)), S=S)
            values = rng.normal(size=S)
            rf = rank_functionals(values, risk)
            kth = np.sort(values)[S - risk.m - 1]
            assert abs(rf.phi - kth) <= 1e-12 * max(1.0, abs(rf.phi))
            assert rf.G1 - rf.G2 == pytest.approx(rf.phi, abs=1e-12)

    @pytest.mark.unit
    def test_cvar_dual_forms_match_top_sums(self):
        rng = np.random.default_rng(11)
        for trial in range(200):
            values = rng.normal(size=int(rng.integers(1, 15)))
            for k in range(values.shape[0] + 1):
                assert cvar_dual_value(values, k) == pytest.approx(top_m_sum(values, k), abs=1e-9)

    @pytest.mark.unit
    def test_top_m_sum_range(self):
        assert top_m_sum([3.0, 1.0, 2.0], 2) == pytest.approx(5.0)
        assert top_m_sum([3.0, 1.0, 2.0], 0) == 0.0
        with pytest.raises(InvalidParameterError):
            top_m_sum([1.0], 2)

    @pytest.mark.unit
    @pytest.mark.parametrize("builder", [random_affine_instance, random_quadratic_instance])
    def test_subgradient_inequality(self, builder):
        """G2(x') >= G2(x) + <n, x' - x> for the returned subgradient n."""
        rng = np.random.default_rng(3)
        for seed in range(5):
            instance = builder(seed)
            for _ in range(20):
                x = rng.uniform(instance.region.lower, instance.region.upper)
                x_other = rng.uniform(instance.region.lower, instance.region.upper)
                n = subgradient_G2(instance, x)
                G2 = rank_functionals(scenario_values(instance, x), instance.risk).G2
                G2_other = rank_functionals(scenario_values(instance, x_other), instance.risk).G2
                assert G2_other >= G2 + n @ (x_other - x) - 1e-9

    @pytest.mark.unit
    def test_empirical_probability(self, t1):
        assert empirical_probability(t1, [0.2]) == pytest.approx(0.8)
        assert empirical_probability(t1, [0.05]) == pytest.approx(1.0)
        assert empirical_probability(t1, [0.25]) == pytest.approx(0.6)
        with pytest.raises(InvalidParameterError):
            empirical_probability(t1, [0.2], feas_tol=-1.0)


class TestProjection:
    """Unit tests for the projection onto the selector set C."""

    @pytest.mark.unit
    def test_clip_only_case(self):
        np.testing.assert_allclose(project_onto_C([1.0, 1.0, -1.5], 1).z, [1.0, 1.0, 0.0])

    @pytest.mark.unit
    def test_uniform_shift(self):
        np.testing.assert_allclose(project_onto_C([0.5, 0.5, 0.5], 1).z, [2 / 3, 2 / 3, 2 / 3], atol=1e-12)

    @pytest.mark.unit
    def test_shift_with_saturation(self):
        np.testing.assert_allclose(project_onto_C([1.2, 0.7, -0.3], 1).z, [1.0, 1.0, 0.0], atol=1e-12)

    @pytest.mark.unit
    def test_m_zero_is_all_ones(self):
        np.testing.assert_allclose(project_onto_C([-3.0, 0.2], 0).z, [1.0, 1.0])

    @pytest.mark.unit
    def test_invalid_budget(self):
        with pytest.raises(InvalidParameterError):
            project_onto_C([0.5, 0.5], 2)

    @pytest.mark.unit
    @pytest.mark.slow
    def test_matches_active_set_enumeration(self):
        rng = np.random.default_rng(5)
        for trial in range(500):
            S = int(rng.integers(1, 9))
            m = int(rng.integers(0, S))
            v = rng.uniform(-2.0, 2.0, size=S)
            z = project_onto_C(v, m).z
            np.testing.assert_allclose(z, brute_force_projection(v, m), atol=1e-8)

    @pytest.mark.unit
    def test_idempotent_and_nonexpansive(self):
        rng = np.random.default_rng(9)
        for trial in range(500):
            S = int(rng.integers(1, 9))
            m = int(rng.integers(0, S))
            a, b = rng.uniform(-3.0, 3.0, size=(2, S))
            pa, pb = project_onto_C(a, m).z, project_onto_C(b, m).z
            assert project_onto_C(pa, m).in_C(m)
            np.testing.assert_allclose(project_onto_C(pa, m).z, pa, atol=1e-12)
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


class TestLiftedPenalty:
    """Unit tests for the complementarity penalty and its updates."""

    @pytest.mark.unit
    def test_vertex_update_ties_to_smaller_index(self):
        np.testing.assert_allclose(vertex_dual_update([0.5, 0.9, 0.9, 0.0], 1).z, [1.0, 0.0, 1.0, 1.0])
        np.testing.assert_allclose(vertex_dual_update([0.5, 0.9, 0.9, 0.0], 0).z, [1.0, 1.0, 1.0, 1.0])

    @pytest.mark.unit
    def test_z_update_arithmetic(self):
        """z - (sigma / rho) y projected back onto C."""
        z, y, sigma, rho = np.array([1.0, 1.0, 0.5]), np.array([0.0, 0.0, 2.0]), 1.0, 1.0
        np.testing.assert_allclose(project_onto_C(z - (sigma / rho) * y, 1).z, [1.0, 1.0, 0.0])

    @pytest.mark.unit
    def test_penalty_bounds_phi_from_above(self):
        """V(y, z) >= [phi(x)]_+ for every (x, y, z) with y >= [g(x)]_+ and z in C."""
        rng = np.random.default_rng(13)
        for trial in range(1000):
            instance = random_affine_instance(int(rng.integers(0, 50)), S=int(rng.integers(2, 10)), alpha=0.3)
            x = rng.uniform(-1.0, 1.0, size=instance.d)
            g = scenario_values(instance, x).values
            y = np.maximum(g, 0.0) + rng.exponential(0.1, size=instance.S) * (rng.uniform(size=instance.S) < 0.3)
            z = project_onto_C(rng.uniform(-0.5, 1.5, size=instance.S), instance.m).z
            assert lifted_penalty(y, z) >= max(phi_value(instance, x), 0.0) - 1e-10
