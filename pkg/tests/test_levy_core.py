from __future__ import annotations

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from levyflow import rng
from levyflow.errors import QuadratureError
from levyflow.levy_core import (
    CompoundPoisson,
    GeneratingTriplet,
    NormalJumps,
    ParetoJumps,
    PointJumps,
    SmallJumpStable,
    empirical_char_fn,
    levy_exponent,
    sample_ensemble,
    sample_levy_path,
    sphere_average,
    theta_moment,
)

# mpmath quadosc at 30 digits: int_1^inf 1.5 r^-2.5 cos(2r) dr
PARETO_CHAR_15_AT_2 = -0.461602377117240300
# mpmath quad at 30 digits: int_0^1 (1 - cos 3r) r^-2 dr
STABLE_EXPONENT_A1_K3 = 3.555965087397959312


class TestExponent:
    def test_gaussian_two_dim(self):
        assert levy_exponent(GeneratingTriplet(2, np.eye(2)), [1.0, 1.0]) == pytest.approx(1.0)

    @pytest.mark.parametrize("k", [0.0, 0.7, -3.0])
    def test_zero_process(self, k):
        assert levy_exponent(GeneratingTriplet(1), [k]) == 0.0

    def test_point_jump_outside_unit_ball_has_no_compensator(self, cp_point3):
        expected = -2.0 * (cmath.exp(1.5j) - 1.0)
        assert abs(levy_exponent(cp_point3, [0.5]) - expected) < 1e-14

    def test_point_jump_inside_unit_ball_is_compensated(self):
        tr = GeneratingTriplet(1, None, [CompoundPoisson(2.0, PointJumps([0.5]))])
        expected = -2.0 * (cmath.exp(0.5j) - 1.0 - 0.5j)
        assert abs(levy_exponent(tr, [1.0]) - expected) < 1e-14

    def test_unit_jump_counts_as_small(self):
        # the cut between small and large jumps is |x| <= 1
        tr = GeneratingTriplet(1, None, [CompoundPoisson(1.0, PointJumps([1.0]))])
        assert np.allclose(tr.compensator_rate(), [1.0])
        assert theta_moment(tr, 0.5).value == 0.0

    @pytest.mark.parametrize("mu, s, k", [(0.0, 0.5, 1.3), (0.4, 1.2, 0.8), (-2.0, 0.3, 2.0)])
    def test_normal_jumps_against_density_quadrature(self, mu, s, k):
        pdf = stats.norm(mu, s).pdf
        lo, hi = mu - 12 * s, mu + 12 * s
        edges = sorted({lo, hi, *(e for e in (-1.0, 1.0) if lo < e < hi)})
        # int (e^{iky} - 1 - iky 1_{|y|<=1}) pdf(y) dy, piecewise between the cut points
        total = 0.0j
        for a, b in zip(edges[:-1], edges[1:]):
            inner = abs(0.5 * (a + b)) <= 1.0
            re = integrate.quad(lambda y: (math.cos(k * y) - 1) * pdf(y), a, b, limit=200)[0]
            im = integrate.quad(lambda y: (math.sin(k * y) - (k * y if inner else 0.0)) * pdf(y), a, b, limit=200)[0]
            total += complex(re, im)
        tr = GeneratingTriplet(1, None, [CompoundPoisson(1.5, NormalJumps([mu], s))])
        assert abs(levy_exponent(tr, [k]) + 1.5 * total) < 1e-8

    def test_pareto_char_matches_high_precision_oracle(self):
        assert ParetoJumps(1.5).char(np.array([2.0])).real == pytest.approx(PARETO_CHAR_15_AT_2, abs=1e-8)

    def test_small_jump_stable_exponent(self):
        tr = GeneratingTriplet(1, None, [SmallJumpStable(1.0)])
        assert levy_exponent(tr, [3.0]).real == pytest.approx(STABLE_EXPONENT_A1_K3, abs=1e-8)

    @pytest.mark.parametrize("d, z, expected", [(1, 2.5, math.cos(2.5)), (3, 2.5, math.sin(2.5) / 2.5), (2, 0.0, 1.0)])
    def test_sphere_average(self, d, z, expected):
        assert sphere_average(z, d) == pytest.approx(expected, abs=1e-14)

    @given(st.floats(-5, 5), st.floats(0.0, 3.0), st.floats(0.1, 5.0))
    @settings(max_examples=40, deadline=None)
    def test_real_part_nonnegative_and_even(self, k, q, lam):
        tr = GeneratingTriplet(1, [[q]], [CompoundPoisson(lam, NormalJumps([0.3], 0.8))])
        phi = levy_exponent(tr, [k])
        assert phi.real >= -1e-12
        assert abs(levy_exponent(tr, [-k]) - phi.conjugate()) < 1e-12


class TestThetaMoment:
    def test_no_jumps(self):
        tm = theta_moment(GeneratingTriplet(1), 0.5)
        assert tm.finite and tm.value == 0.0

    def test_point_mass(self, cp_point3):
        assert theta_moment(cp_point3, 0.5).value == pytest.approx(2 * math.sqrt(3), abs=1e-12)

    def test_heavy_tail_is_infinite(self):
        tr = GeneratingTriplet(1, None, [CompoundPoisson(1.0, ParetoJumps(0.3))])
        assert not theta_moment(tr, 0.5).finite

    @pytest.mark.parametrize("theta", [0.0, 1.0, -0.2])
    def test_theta_range(self, theta):
        with pytest.raises(ValueError):
            theta_moment(GeneratingTriplet(1), theta)

    def test_normal_tail_moment_against_monte_carlo(self):
        law = NormalJumps([0.0], 2.0)
        y = np.abs(rng.stream(1, rng.AUXILIARY).normal(0.0, 2.0, 400_000))
        mc = np.where(y > 1, y**0.5, 0.0)
        assert abs(law.tail_moment(0.5) - mc.mean()) < 4 * mc.std() / math.sqrt(mc.size)


class TestTripletValidation:
    def test_rejects_non_psd(self):
        with pytest.raises(ValueError, match="semidefinite"):
            GeneratingTriplet(2, [[1.0, 0.0], [0.0, -1e-6]])

    def test_accepts_singular_psd(self):
        tr = GeneratingTriplet(2, [[1.0, 1.0], [1.0, 1.0]])
        assert np.allclose(tr.factor @ tr.factor.T, tr.Q)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            GeneratingTriplet(2, None, [CompoundPoisson(1.0, PointJumps([2.0]))])

    def test_zero_jump_rejected(self):
        with pytest.raises(ValueError):
            PointJumps([0.0])

    def test_quadrature_failure_is_reported(self, monkeypatch):
        import levyflow.levy_core as lc

        monkeypatch.setattr(lc, "QUAD_TOL", 0.0)
        with pytest.raises(QuadratureError):
            ParetoJumps(1.5).char(np.array([2.0]))


class TestSampling:
    def test_zero_triplet_gives_zero_path(self):
        P = sample_levy_path(GeneratingTriplet(1), 1.0, 50, 3)
        assert not P.values.any() and P.jump_times.size == 0

    @given(st.integers(0, 2**64 - 1))
    @settings(max_examples=20, deadline=None)
    def test_deterministic(self, seed):
        tr = GeneratingTriplet(2, np.eye(2), [CompoundPoisson(3.0, NormalJumps([0.0, 0.0], 1.0))])
        a = sample_levy_path(tr, 1.0, 32, seed)
        b = sample_levy_path(tr, 1.0, 32, seed)
        assert np.array_equal(a.values, b.values) and np.array_equal(a.jump_times, b.jump_times)

    @given(st.integers(0, 2**32), st.sampled_from([8, 16, 64]))
    @settings(max_examples=20, deadline=None)
    def test_refinement_keeps_jump_record_and_base_values(self, seed, n):
        tr = GeneratingTriplet(1, [[1.0]], [CompoundPoisson(4.0, PointJumps([2.0])), SmallJumpStable(1.2)])
        coarse = sample_levy_path(tr, 1.0, n, seed)
        fine = sample_levy_path(tr, 1.0, 4 * n, seed)
        assert np.array_equal(coarse.jump_times, fine.jump_times)
        assert np.array_equal(coarse.jump_sizes, fine.jump_sizes)
        assert np.array_equal(fine.part("large").values[-1], coarse.part("large").values[-1])

    def test_parts_sum_to_total(self):
        tr = GeneratingTriplet(1, [[0.5]], [CompoundPoisson(3.0, NormalJumps([0.0], 1.5)), SmallJumpStable(0.8)])
        P = sample_levy_path(tr, 1.0, 100, 9)
        total = sum(p.values for p in P.parts.values())
        assert np.allclose(total, P.values, atol=1e-13)
        assert np.all(np.linalg.norm(P.part("large").jump_sizes, axis=1) > 1.0)
        assert np.all(np.linalg.norm(P.part("small").jump_sizes, axis=1) <= 1.0)

    def test_gaussian_surrogate_adds_variance(self):
        tr = GeneratingTriplet(1, None, [SmallJumpStable(1.5)])
        ends_t = [sample_levy_path(tr, 1.0, 16, s, epsilon=0.1).values[-1, 0] for s in rng.ensemble_seeds(1, 4000)]
        ends_g = [
            sample_levy_path(tr, 1.0, 16, s, epsilon=0.1, small_jumps="gaussian").values[-1, 0]
            for s in rng.ensemble_seeds(1, 4000)
        ]
        # jumps above epsilon plus the surrogate carry the full second moment
        target = SmallJumpStable(1.5).second_moment_below(1.0)
        assert np.var(ends_g) == pytest.approx(target, rel=0.1)
        assert np.var(ends_t) < np.var(ends_g)

    @pytest.mark.slow
    def test_jump_counts_are_poisson(self, cp_point3_ensemble):
        _, counts = cp_point3_ensemble
        kmax = 8
        observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
        pmf = stats.poisson(2.0).pmf(np.arange(kmax))
        expected = counts.size * np.append(pmf, 1.0 - pmf.sum())
        assert stats.chisquare(observed, expected).pvalue > 0.01

    @pytest.mark.slow
    def test_brownian_variance(self, brownian1):
        ends = np.array([P.values[-1, 0] for P in sample_ensemble(brownian1, 1.0, 1000, 5, 10_000)])
        assert abs(ends.var() - 1.0) <= 0.05

    def test_increments_uncorrelated_and_stationary(self):
        tr = GeneratingTriplet(1, [[1.0]], [CompoundPoisson(2.0, PointJumps([3.0]))])
        P = [sample_levy_path(tr, 1.0, 8, s) for s in rng.ensemble_seeds(77, 10_000)]
        a = np.array([p.value_at(0.25)[0] - p.value_at(0.0)[0] for p in P])
        b = np.array([p.value_at(1.0)[0] - p.value_at(0.75)[0] for p in P])
        prod = (a - a.mean()) * (b - b.mean())
        assert abs(prod.mean()) <= 3 * prod.std() / math.sqrt(prod.size)
        assert stats.ks_2samp(a, b).pvalue > 0.01

    def test_empirical_char_fn_matches(self, cp_point3_ensemble, cp_point3):
        ends, _ = cp_point3_ensemble
        for k in (0.25, 0.5, 1.0):
            m, se = empirical_char_fn(ends, [k])
            assert abs(m - cmath.exp(-levy_exponent(cp_point3, [k]))) <= 5 * se
