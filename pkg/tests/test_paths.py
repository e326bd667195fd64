from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyflow.paths import CadlagPath, refine_grid


def test_refine_grid_inserts_off_grid_times():
    grid, base, idx = refine_grid(np.linspace(0, 1, 5), np.array([0.3, 0.5]))
    assert np.allclose(grid, [0, 0.25, 0.3, 0.5, 0.75, 1.0])
    assert base.tolist() == [True, True, False, True, True, True]
    assert grid[idx].tolist() == [0.3, 0.5]


def test_from_jumps_left_and_right_limits():
    P = CadlagPath.from_jumps(1.0, 4, [0.3, 0.75], [2.0, -1.0])
    i = P.index_of(0.3)
    assert P.values[i, 0] == 2.0 and P.left_values[i, 0] == 0.0
    assert P.value_at(0.74)[0] == 2.0
    assert P.value_at(1.0)[0] == 1.0
    assert P.is_jump.sum() == 2


@pytest.mark.parametrize(
    "kwargs, msg",
    [
        ({"grid": [0.0, 0.5, 0.4], "values": [0, 0, 0]}, "increasing"),
        ({"grid": [0.0, 1.0], "values": [0, 0, 0]}, "rows"),
        ({"grid": [0.0, 0.5, 1.0], "values": [0, 1, 1], "jump_times": [0.3], "jump_sizes": [1.0]}, "grid node"),
        ({"grid": [0.0, 0.5, 1.0], "values": [1, 1, 1], "jump_times": [0.0], "jump_sizes": [1.0]}, r"\(t0, T\]"),
    ],
)
def test_validation(kwargs, msg):
    with pytest.raises(ValueError, match=msg):
        CadlagPath(**kwargs)


def test_arrays_are_read_only():
    P = CadlagPath.from_jumps(1.0, 4, [0.3], [1.0])
    with pytest.raises(ValueError):
        P.values[0, 0] = 1.0


def test_decomposed_classifies_by_unit_norm():
    P = CadlagPath.from_jumps(1.0, 10, [0.2, 0.5, 0.8], [1.0, 1.5, -0.5])
    parts = P.decomposed()
    assert parts["large"].jump_sizes[:, 0].tolist() == [1.5]
    assert parts["small"].jump_sizes[:, 0].tolist() == [1.0, -0.5]
    assert np.allclose(parts["gaussian"].values, 0.0)


@given(st.integers(1, 4), st.lists(st.floats(0.01, 0.99), min_size=0, max_size=5, unique=True))
@settings(max_examples=40, deadline=None)
def test_coarsen_keeps_jumps_and_base_values(k, times):
    factor = 2**k
    P = CadlagPath.from_jumps(1.0, 64, times, np.ones(len(times)))
    C = P.coarsen(factor)
    assert np.array_equal(C.jump_times, P.jump_times)
    assert C.base.sum() == 64 // factor + 1
    for t in C.grid:
        assert np.array_equal(C.value_at(t), P.value_at(t))


def test_coarsen_rejects_non_divisor():
    with pytest.raises(ValueError, match="divisible"):
        CadlagPath.zeros(1.0, 10, 1).coarsen(3)


def test_shifted_restarts_at_zero():
    P = CadlagPath.from_jumps(1.0, 8, [0.3, 0.8], [1.0, 2.0])
    S = P.shifted(0.5)
    assert S.grid[0] == 0.0 and np.isclose(S.T, 0.5)
    assert S.values[0, 0] == 0.0
    assert np.allclose(S.jump_times, [0.3])
    assert S.values[-1, 0] == 2.0


def test_apply_time_dependent_matrix_tracks_jumps():
    P = CadlagPath.from_jumps(1.0, 4, [0.5], [1.0])
    mats = P.grid[:, None, None] * np.ones((1, 1, 1))
    Q = P.apply(mats)
    assert np.isclose(Q.jump_sizes[0, 0], 0.5)


def test_add_merges_jump_records():
    a = CadlagPath.from_jump_record(np.linspace(0, 1, 5), [0.5], [1.0])
    b = CadlagPath.from_jump_record(np.linspace(0, 1, 5), [0.75], [2.0])
    c = a + b
    assert c.jump_times.tolist() == [0.5, 0.75]
    assert (a - a).values.max() == 0.0


def test_csv_roundtrip():
    P = CadlagPath.from_jumps(1.0, 4, [1 / 3], [0.1])
    buf = io.StringIO()
    P.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "time,v1,is_jump"
    data = np.loadtxt(io.StringIO(buf.getvalue()), delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 0], P.grid)
    assert np.array_equal(data[:, 1], P.values[:, 0])
    assert data[:, 2].sum() == 1
