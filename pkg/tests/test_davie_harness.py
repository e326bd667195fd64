from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyflow import rng
from levyflow.davie_harness import (
    CheckReport,
    build_flow_sample,
    cadlag_in_s_probe,
    davie_uniqueness_check,
    flow_property_check,
    holder_flow_modulus_check,
    lipschitz_pairs,
    linear_flow_factor,
    lp_lipschitz_estimate,
    modulus_pairs,
    scalar_linear_ratio,
)
from levyflow.levy_core import CompoundPoisson, GeneratingTriplet, NormalJumps, sample_levy_path
from levyflow.paths import CadlagPath
from levyflow.sde_solver import HolderField, SdeProblem

brownian2 = GeneratingTriplet.brownian(2)
jumpy2 = GeneratingTriplet(2, np.eye(2), [CompoundPoisson(3.0, NormalJumps([0.0, 0.0], 1.5))])


def problem(drift=None, A=None, triplet=brownian2):
    return SdeProblem(2, 2, np.zeros((2, 2)) if A is None else A, np.eye(2),
                      HolderField.zero(2) if drift is None else drift, 1.0, triplet)


class TestReport:
    def test_pass_rule_and_exports(self, tmp_path):
        r = CheckReport("x", {"a": 0.5, "b": 1.0}, 1.0)
        assert r.passed and r.max_residual == 1.0
        assert json.loads(r.to_json())["pass"] is True
        r.to_csv(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "case,residual,tolerance"
        assert not CheckReport("x", {"a": 1.5}, 1.0).passed

    @given(st.lists(st.tuples(st.floats(0, 10), st.floats(1e-3, 10)), min_size=1, max_size=6))
    @settings(max_examples=50, deadline=None)
    def test_merge_is_conjunction(self, cases):
        reports = [CheckReport(f"r{i}", {"c": v}, tol) for i, (v, tol) in enumerate(cases)]
        merged = CheckReport.merge("m", reports)
        assert merged.passed == all(r.passed for r in reports)


class TestDavie:
    def test_zero_drift_exact(self):
        L = sample_levy_path(jumpy2, 1.0, 400, 1)
        rep = davie_uniqueness_check(problem(triplet=jumpy2), L, 0.0, [0.5, 0.5], 0.01)
        assert rep.max_residual == 0.0 and rep.passed

    @pytest.mark.parametrize("seed", range(20))
    def test_lipschitz_sine_drift(self, seed):
        L = sample_levy_path(brownian2, 1.0, 800, rng.path_seed(2, seed))
        rep = davie_uniqueness_check(problem(HolderField.sine(2)), L, 0.0, [0.3, -0.3], 0.005)
        assert rep.passed, rep.residuals
        assert rep.details["delta_norm"] == pytest.approx(1.0)

    def test_residuals_shrink_with_step(self, kinetic_problem):
        dts = np.array([0.04, 0.02, 0.01, 0.005])
        worst = np.zeros(dts.size)
        for sd in rng.ensemble_seeds(6, 5):
            L = sample_levy_path(kinetic_problem.triplet, 1.0, 800, sd)
            for i, h in enumerate(dts):
                worst[i] += davie_uniqueness_check(kinetic_problem, L, 0.0, [0.0, 0.0], h).max_residual
        assert np.polyfit(np.log(dts), np.log(worst), 1)[0] > 0

    def test_late_start(self, kinetic_problem):
        L = sample_levy_path(kinetic_problem.triplet, 1.0, 800, 3)
        assert davie_uniqueness_check(kinetic_problem, L, 0.5, [1.0, -1.0], 0.005).passed


class TestFlow:
    def test_identity_at_start(self, kinetic_problem):
        L = sample_levy_path(kinetic_problem.triplet, 1.0, 200, 1)
        X = np.array([[0.0, 0.0], [1.0, -2.0]])
        fs = build_flow_sample(kinetic_problem, L, [0.0, 0.25, 0.5], [0.0, 0.25, 0.5], X)
        for i in range(3):
            assert np.array_equal(fs.psi[i, i], X)

    def test_translation_invariance_without_drift(self):
        L = sample_levy_path(jumpy2, 1.0, 100, 2)
        X = np.array([[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]])
        fs = build_flow_sample(problem(triplet=jumpy2), L, [0.0, 0.3], [0.5, 1.0], X)
        disp = fs.psi - X[None, None]
        assert np.allclose(disp, disp[:, :, :1], atol=1e-14, rtol=0)

    def test_zero_drift_flow_law_exact(self):
        L = sample_levy_path(jumpy2, 1.0, 100, 4)
        triples = [(0.0, 0.48, 1.0), (0.2, 0.2, 0.72), (0.12, 0.88, 0.88)]
        rep = flow_property_check(problem(triplet=jumpy2), L, triples, [[0.0, 0.0], [1.0, 1.0]])
        assert rep.max_residual <= 1e-14

    def test_r_equal_s_is_identity(self, kinetic_problem):
        L = sample_levy_path(kinetic_problem.triplet, 1.0, 400, 5)
        rep = flow_property_check(kinetic_problem, L, [(0.25, 0.25, 1.0), (0.5, 0.5, 0.75)], [[0.1, 0.2]])
        assert rep.max_residual == 0.0

    @pytest.mark.parametrize("seed", range(3))
    def test_kinetic_grid(self, seed, kinetic_problem):
        L = sample_levy_path(kinetic_problem.triplet, 1.0, 800, rng.path_seed(8, seed))
        S, R, T = np.linspace(0, 0.4, 5), np.linspace(0.4, 0.6, 5), np.linspace(0.6, 1.0, 5)
        triples = [(s, r, t) for s in S for r in R for t in T]
        X = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]
        rep = flow_property_check(kinetic_problem, L, triples, X, 0.005)
        assert len(rep.residuals) == 125 and rep.passed

    def test_bad_triple(self, kinetic_problem):
        L = sample_levy_path(kinetic_problem.triplet, 1.0, 40, 5)
        with pytest.raises(ValueError, match="s <= r <= t"):
            flow_property_check(kinetic_problem, L, [(0.5, 0.25, 1.0)], [[0.0, 0.0]])


class TestHolderModulus:
    def test_pairs_scales(self):
        pairs = modulus_pairs(2, ks=range(1, 4), per_rung=5)
        d = [np.linalg.norm(y - x) for x, y in pairs]
        assert np.allclose(sorted(set(np.round(d, 12))), [0.125, 0.25, 0.5])

    def test_zero_drift_ratio_formula(self):
        # the flow is a translation: sup distance equals |x - y| exactly
        L = sample_levy_path(brownian2, 1.0, 100, 0)
        pairs = modulus_pairs(2, ks=range(1, 7), per_rung=8) + [(np.zeros(2), np.zeros(2))]
        rep = holder_flow_modulus_check(problem(), L, pairs, m=9)
        assert rep.details["max_ratio"] <= 1.0
        q = np.array(rep.details["quantiles"])
        scale = np.array(rep.details["scales"])
        assert np.all(q <= scale ** (4 / 9) + 1e-12)
        assert rep.passed

    def test_kinetic_no_blow_up(self, kinetic_problem):
        L = sample_levy_path(kinetic_problem.triplet, 1.0, 400, 9)
        rep = holder_flow_modulus_check(kinetic_problem, L, dt=0.01)
        assert rep.details["m"] == 9 and rep.passed

    def test_m_must_exceed_2n(self, kinetic_problem):
        L = sample_levy_path(kinetic_problem.triplet, 1.0, 40, 5)
        with pytest.raises(ValueError, match="2n"):
            holder_flow_modulus_check(kinetic_problem, L, m=4)


class TestCadlag:
    def test_continuous_driver(self, kinetic_problem):
        L = sample_levy_path(kinetic_problem.triplet, 1.0, 4096, 2)
        rep = cadlag_in_s_probe(kinetic_problem, L, 0.5, dt=1.0 / 4096)
        assert rep.passed, rep.details

    def test_jump_at_s_star_zero_drift(self):
        L = CadlagPath.from_jumps(1.0, 1024, [0.5], [[1.0, -2.0]])
        rep = cadlag_in_s_probe(problem(triplet=jumpy2), L, 0.5)
        d = rep.details
        assert max(d["right_gaps"]) == 0.0
        assert np.allclose(d["left_gaps"], math.sqrt(5.0), atol=1e-12)
        assert max(d["left_limit_gaps"]) == 0.0
        assert rep.passed

    def test_jump_at_s_star_with_drift(self):
        pb = SdeProblem(2, 2, np.zeros((2, 2)), np.eye(2), HolderField.sine(2), 1.0, jumpy2)
        L = CadlagPath.from_jumps(1.0, 4096, [0.5], [[1.0, 0.0]])
        rep = cadlag_in_s_probe(pb, L, 0.5)
        assert rep.passed
        assert min(rep.details["left_gaps"]) > 0.5

    def test_ladder_must_fit(self, kinetic_problem):
        L = sample_levy_path(kinetic_problem.triplet, 1.0, 8, 2)
        with pytest.raises(ValueError, match="ladder"):
            cadlag_in_s_probe(kinetic_problem, L, 0.5, ladder=range(6, 9))


class TestLipschitz:
    def test_zero_drift_ratio_is_one(self):
        pairs = lipschitz_pairs(2)
        tab = lp_lipschitz_estimate(problem(), 2, [0.0, 0.5], pairs, 10, dt=0.01)
        assert np.allclose(tab.ratio, 1.0, atol=1e-12)
        assert tab.stability().passed

    @pytest.mark.parametrize("a, p", [(1.0, 2), (1.0, 4), (-0.5, 2)])
    def test_scalar_linear_closed_form(self, a, p):
        pb = SdeProblem(1, 1, [[a]], [[1.0]], HolderField.zero(1), 1.0, GeneratingTriplet.brownian(1))
        S = [0.0, 0.5]
        tab = lp_lipschitz_estimate(pb, p, S, lipschitz_pairs(1), 4, dt=1e-3, estimate_bias=True)
        for i, s in enumerate(S):
            exact = scalar_linear_ratio(a, p, 1.0, s)
            allowed = 3 * tab.se[i] + 2 * tab.bias[i] + 1e-12
            assert np.all(np.abs(tab.ratio[i] - exact) <= allowed)

    def test_scalar_linear_ratio_values(self):
        assert scalar_linear_ratio(1.0, 2, 1.0, 0.0) == pytest.approx(math.exp(2.0))
        assert scalar_linear_ratio(-1.0, 2, 1.0, 0.0) == 1.0
        assert linear_flow_factor(np.zeros((2, 2)), 3.0) == 1.0

    def test_jensen_ordering(self, kinetic_problem):
        tab = lp_lipschitz_estimate(kinetic_problem, 2, [0.0], lipschitz_pairs(2), 200, dt=0.01)
        assert np.all(tab.ratio_for(2) <= np.sqrt(tab.ratio_for(4)) * (1 + 1e-12))

    def test_kinetic_table_stable(self, kinetic_problem):
        tab = lp_lipschitz_estimate(kinetic_problem, 2, [0.0, 0.25, 0.5, 0.75], lipschitz_pairs(2), 400, dt=0.01)
        rep = tab.stability()
        assert rep.passed, rep.residuals
        assert np.isfinite(tab.constant) and tab.constant >= 1.0

    def test_jump_driver_uses_per_path_grids(self):
        tab = lp_lipschitz_estimate(problem(HolderField.sine(2), triplet=jumpy2), 2, [0.0], lipschitz_pairs(2), 8, dt=0.01)
        assert tab.samples.shape == (8, 1, 15)
        assert np.all(np.isfinite(tab.samples)) and np.all(tab.samples > 0)

    @pytest.mark.parametrize("kwargs, msg", [({"p": 1.5}, "at least 2")])
    def test_validation(self, kwargs, msg):
        with pytest.raises(ValueError, match=msg):
            lp_lipschitz_estimate(problem(), kwargs["p"], [0.0], lipschitz_pairs(2), 2)
