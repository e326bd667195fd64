from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from levyflow import rng

seeds = st.integers(min_value=0, max_value=2**64 - 1)


@given(seeds, st.integers(0, 3), st.integers(0, 2**20))
@settings(max_examples=50, deadline=None)
def test_stream_is_pure_function_of_key(seed, sid, idx):
    a = rng.stream(seed, sid, idx).random(8)
    b = rng.stream(seed, sid, idx).random(8)
    assert np.array_equal(a, b)


def test_streams_differ_by_id_and_index():
    draws = {
        (sid, idx): tuple(rng.stream(5, sid, idx).random(4))
        for sid in (rng.GAUSSIAN, rng.JUMPS, rng.BRIDGE, rng.AUXILIARY)
        for idx in range(3)
    }
    assert len(set(draws.values())) == len(draws)


def test_ensemble_seeds_are_prefix_stable():
    short = rng.ensemble_seeds(42, 5)
    long = rng.ensemble_seeds(42, 50)
    assert long[:5] == short
    assert len(set(long)) == 50
    assert all(0 <= s < 2**64 for s in long)


def test_path_seed_depends_on_master():
    assert rng.path_seed(1, 0) != rng.path_seed(2, 0)
