from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from ghvit.rng import Rng


def test_same_seed_same_stream():
    assert_array_equal(Rng(9).normal((5,)), Rng(9).normal((5,)))
    assert_array_equal(Rng(9).permutation(30), Rng(9).permutation(30))


def test_forks_are_distinct_and_reproducible():
    root = Rng(1)
    assert not np.array_equal(root.fork(0).normal((4,)), root.fork(1).normal((4,)))
    assert_array_equal(root.fork(2, 3).uniform((4,)), Rng(1, spawn_key=(2, 3)).uniform((4,)))


def test_permutation_edge_sizes():
    assert Rng(0).permutation(0).tolist() == []
    assert Rng(0).permutation(1).tolist() == [0]
    assert sorted(Rng(0).permutation(100).tolist()) == list(range(100))


def test_truncated_normal_stays_within_two_std():
    draws = Rng(3).truncated_normal((10_000,), std=0.02)
    assert np.abs(draws).max() <= 0.04
    assert draws.std() == pytest.approx(0.0176, abs=0.002)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_seed_must_fit_u64(seed):
    with pytest.raises(ValueError):
        Rng(seed)
