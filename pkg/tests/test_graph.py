from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ghvit.errors import ShapeError
from ghvit.graph import (
    AdjacencyMode,
    build_grid_adjacency,
    gcn_positional_embedding,
    grid_operator,
    normalize_adjacency,
)
from ghvit.rng import Rng
from ghvit.tensor import Tensor, float64_mode


@pytest.mark.parametrize(
    "rows,cols,mode,expected",
    [(4, 4, "one-way", 24), (4, 4, "bidirectional", 48), (2, 2, "one-way", 4), (1, 1, "bidirectional", 0)],
)
def test_edge_counts(rows, cols, mode, expected):
    assert build_grid_adjacency(rows, cols, mode).edge_count == expected


def test_two_by_two_one_way_edges():
    assert set(build_grid_adjacency(2, 2, AdjacencyMode.ONE_WAY).edges()) == {(0, 1), (2, 3), (0, 2), (1, 3)}


def test_bidirectional_is_symmetric_and_one_way_is_not():
    one_way = build_grid_adjacency(4, 4, "one-way").entries
    both = build_grid_adjacency(4, 4, "bidirectional").entries
    assert_array_equal(both, both.T)
    assert_array_equal(both, one_way | one_way.T)
    assert not np.array_equal(one_way, one_way.T)


def test_rejects_empty_grid():
    with pytest.raises(ShapeError):
        build_grid_adjacency(0, 4, "one-way")


@pytest.mark.parametrize("mode", list(AdjacencyMode))
def test_normalized_rows_are_stochastic(mode):
    a = build_grid_adjacency(4, 4, mode)
    a_hat = normalize_adjacency(a).entries
    assert_allclose(a_hat.sum(axis=1), 1.0, atol=1e-6)
    support = (a.entries + np.eye(16)) > 0
    assert np.all(a_hat[~support] == 0)
    assert np.all(a_hat[support] > 0)


def test_one_way_corner_values():
    a_hat = normalize_adjacency(build_grid_adjacency(4, 4, "one-way")).entries
    # top-left reaches itself, right and below
    assert_allclose(a_hat[0, [0, 1, 4]], 1 / 3)
    # bottom-right has only its self-loop
    assert a_hat[15, 15] == 1.0


@pytest.mark.parametrize("mode", ["one-way", "bidirectional"])
def test_gcn_matches_dense_oracle(mode):
    operator = grid_operator(4, 4, mode)
    rng = Rng(11)
    for trial in range(100):
        sub = rng.fork(trial)
        x = sub.normal((2, 16, 6), dtype=np.float64)
        w = sub.normal((6, 6), dtype=np.float64)
        expected = np.maximum(operator.entries @ x @ w, 0.0)
        with float64_mode():
            got = gcn_positional_embedding(Tensor(x), operator, Tensor(w)).data
        assert_allclose(got, expected, atol=1e-6)


def test_gcn_one_way_locality_is_exact():
    operator = grid_operator(4, 4, "one-way")
    rng = Rng(5)
    x = rng.normal((1, 16, 4))
    w = rng.normal((4, 4))
    base = gcn_positional_embedding(Tensor(x), operator, Tensor(w)).data
    for i in range(16):
        r, c = divmod(i, 4)
        neighborhood = {i}
        if c + 1 < 4:
            neighborhood.add(i + 1)
        if r + 1 < 4:
            neighborhood.add(i + 4)
        for j in set(range(16)) - neighborhood:
            perturbed = x.copy()
            perturbed[0, j] += 10.0
            out = gcn_positional_embedding(Tensor(perturbed), operator, Tensor(w)).data
            assert_array_equal(out[0, i], base[0, i])


def test_gcn_rejects_wrong_token_count():
    with pytest.raises(ShapeError, match="16 tokens"):
        gcn_positional_embedding(Tensor(np.zeros((1, 9, 4))), grid_operator(4, 4, "one-way"), Tensor(np.zeros((4, 4))))


def test_small_normalized_examples():
    pair = normalize_adjacency(build_grid_adjacency(1, 2, "bidirectional")).entries
    assert_allclose(pair, [[0.5, 0.5], [0.5, 0.5]])
    square = normalize_adjacency(build_grid_adjacency(2, 2, "one-way")).entries
    assert_allclose(square[0], [1 / 3, 1 / 3, 1 / 3, 0])
    assert_allclose(square[3], [0, 0, 0, 1])


def test_gcn_identity_and_zero_cases():
    single = grid_operator(1, 1, "one-way")
    x = np.array([[0.5, 2.0, 0.0]], dtype=np.float32)
    assert_array_equal(gcn_positional_embedding(Tensor(x), single, Tensor(np.eye(3))).data, x)
    zeros = gcn_positional_embedding(Tensor(np.zeros((16, 3))), grid_operator(4, 4, "one-way"), Tensor(np.ones((3, 3))))
    assert_array_equal(zeros.data, np.zeros((16, 3)))


@pytest.mark.parametrize("mode", ["one-way", "bidirectional"])
@pytest.mark.parametrize("rows", range(1, 9))
@pytest.mark.parametrize("cols", range(1, 9))
def test_edge_count_formula_on_every_small_grid(rows, cols, mode):
    one_way = rows * (cols - 1) + (rows - 1) * cols
    expected = one_way if mode == "one-way" else 2 * one_way
    assert build_grid_adjacency(rows, cols, mode).edge_count == expected
