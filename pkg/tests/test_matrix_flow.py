from __future__ import annotations

import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import linalg

from levyflow import rng
from levyflow.errors import MatrixExpOverflowError
from levyflow.kinetic import kinetic_matrices
from levyflow.levy_core import CompoundPoisson, GeneratingTriplet, NormalJumps, sample_levy_path
from levyflow.matrix_flow import (
    MatrixExp,
    integration_by_parts_residual,
    integration_by_parts_terms,
    matexp,
    nilpotency_index,
)
from levyflow.paths import CadlagPath

entries = st.floats(-2.0, 2.0, allow_nan=False)


class TestMatexp:
    @pytest.mark.parametrize("t", [0.0, 1.0, -3.5])
    def test_zero_matrix(self, t):
        assert np.array_equal(matexp(np.zeros((3, 3)), t), np.eye(3))

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_kinetic_block_form(self, d):
        A, _ = kinetic_matrices(d)
        t = 0.7
        expected = np.block([[np.eye(d), t * np.eye(d)], [np.zeros((d, d)), np.eye(d)]])
        assert np.array_equal(matexp(A, t), expected)
        assert nilpotency_index(A) == 2

    def test_diagonal(self):
        E = matexp(np.diag([1.0, -1.0]), 1.0)
        assert np.allclose(E, np.diag([math.e, 1 / math.e]), atol=1e-12, rtol=0)

    def test_overflow_raises(self):
        with pytest.raises(MatrixExpOverflowError):
            matexp([[1.0, 2.0], [0.5, 1.0]], 1e4)
        with pytest.raises(MatrixExpOverflowError):
            MatrixExp(np.diag([1.0, 2.0])).at([1e4])

    def test_non_square(self):
        with pytest.raises(ValueError, match="square"):
            matexp(np.ones((2, 3)))

    @given(arrays(float, (4, 4), elements=entries), st.floats(-1.5, 1.5))
    @settings(max_examples=50, deadline=None)
    def test_strictly_upper_series_matches_pade(self, M, t):
        A = np.triu(M, 1)
        assert np.allclose(MatrixExp(A)(t), linalg.expm(t * A), atol=1e-10, rtol=1e-10)

    @given(arrays(float, (3,), elements=entries), st.floats(-2, 2))
    @settings(max_examples=50, deadline=None)
    def test_diagonal_fast_path_matches_pade(self, d, t):
        assert np.allclose(MatrixExp(np.diag(d))(t), linalg.expm(t * np.diag(d)), rtol=1e-12, atol=1e-14)

    @given(arrays(float, (3, 3), elements=entries), st.floats(-1, 1), st.floats(-1, 1))
    @settings(max_examples=50, deadline=None)
    def test_semigroup(self, A, s, t):
        E = MatrixExp(A)
        assert np.allclose(E(s + t), E(s) @ E(t), rtol=1e-9, atol=1e-9)

    def test_vectorised_at_shape(self):
        E = MatrixExp([[0.0, 1.0], [-1.0, 0.0]])
        out = E.at(np.linspace(0, 1, 6).reshape(2, 3))
        assert out.shape == (2, 3, 2, 2)
        assert np.allclose(out[1, 2], [[math.cos(1), math.sin(1)], [-math.sin(1), math.cos(1)]])

    def test_cache_is_thread_safe(self):
        E = MatrixExp([[0.3, 1.0], [-1.0, 0.2]])
        times = np.linspace(0, 2, 200)
        ref = np.array([matexp(E.A, t) for t in times])
        results = []

        def work():
            results.append(E.at(times))

        threads = [threading.Thread(target=work) for _ in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert all(np.array_equal(r, ref) for r in results)

    @pytest.mark.parametrize("A", [np.zeros((2, 2)), kinetic_matrices(1)[0], np.diag([0.5, -2.0]), [[0.1, 1.0], [-1.0, 0.0]]])
    def test_norm_bound_dominates(self, A):
        E = MatrixExp(A)
        ts = np.linspace(-1.0, 1.0, 41)
        assert max(np.linalg.norm(E(t), 2) for t in ts) <= E.norm_bound(1.0) * (1 + 1e-12)


class TestIntegrationByParts:
    def test_zero_A_exact(self, brownian_path):
        assert integration_by_parts_residual(np.zeros((1, 1)), [[1.0]], brownian_path, 0.25, 1.0) == 0.0

    def test_single_unit_jump_exact(self):
        L = CadlagPath.from_jumps(1.0, 100, [0.5], [1.0])
        for s, t in ((0.0, 1.0), (0.25, 0.75), (0.5, 1.0), (0.6, 0.9)):
            assert integration_by_parts_residual([[1.0]], [[1.0]], L, s, t) <= 1e-10

    def test_unit_jump_closed_form_sides(self):
        # for s < 0.5 <= t both sides equal e^{t-0.5} - 1
        L = CadlagPath.from_jumps(1.0, 100, [0.5], [1.0])
        lhs, rhs = integration_by_parts_terms([[1.0]], [[1.0]], L, 0.2, 0.9)
        assert lhs[0] == pytest.approx(math.exp(0.4) - 1.0, abs=1e-12)
        assert rhs[0] == pytest.approx(math.exp(0.4) - 1.0, abs=1e-12)

    def test_pure_jump_driver_machine_exact(self):
        tr = GeneratingTriplet(2, None, [CompoundPoisson(6.0, NormalJumps([0.0, 0.0], 1.3))])
        A, C = kinetic_matrices(1)
        A = A + np.diag([0.3, -0.4])
        for sd in rng.ensemble_seeds(9, 20):
            L = sample_levy_path(tr, 1.0, 64, sd)
            assert integration_by_parts_residual(A, np.eye(2), L, 0.0, 1.0) <= 1e-12

    def test_s_after_t_rejected(self, brownian_path):
        with pytest.raises(ValueError):
            integration_by_parts_residual([[1.0]], [[1.0]], brownian_path, 0.5, 0.25)

    @pytest.mark.parametrize("case", ["scalar", "kinetic"])
    def test_refinement_slope(self, case, brownian1):
        A, sigma = ([[1.0]], [[1.0]]) if case == "scalar" else kinetic_matrices(1)
        dts = np.array([1e-2, 5e-3, 1e-3])
        R = np.array([
            [integration_by_parts_residual(A, sigma, L.coarsen(int(round(h / 1e-3))), 0.25, 1.0) for h in dts]
            for L in (sample_levy_path(brownian1, 1.0, 1000, sd) for sd in rng.ensemble_seeds(4, 100))
        ])
        rms = np.sqrt((R**2).mean(axis=0))
        assert np.polyfit(np.log(dts), np.log(rms), 1)[0] >= 0.5
        # every seed respects the C dt^{1/2} envelope fitted on the coarsest step
        C = (R[:, 0] / math.sqrt(dts[0])).max()
        assert np.all(R <= C * np.sqrt(dts) + 1e-15)
