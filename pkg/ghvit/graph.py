"""Patch-grid adjacency and the GCN positional embedding built on it."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from ghvit.errors import ShapeError
from ghvit.tensor import Tensor, matmul, relu


class AdjacencyMode(str, Enum):
    ONE_WAY = "one-way"
    BIDIRECTIONAL = "bidirectional"


@dataclass(frozen=True, eq=False)
class AdjacencyMatrix:
    """Directed 0/1 neighbor matrix over a row-major patch grid (no self-loops)."""

    rows: int
    cols: int
    mode: AdjacencyMode
    entries: np.ndarray  # [n, n] uint8

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def edges(self) -> list[tuple[int, int]]:
        src, dst = np.nonzero(self.entries)
        return [(int(i), int(j)) for i, j in zip(src, dst)]

    @property
    def edge_count(self) -> int:
        return int(self.entries.sum())


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    n: int
    entries: np.ndarray  # [n, n] float64, rows sum to 1


def build_grid_adjacency(rows: int, cols: int, mode: AdjacencyMode | str) -> AdjacencyMatrix:
    """Edges i -> right(i) and i -> below(i); bidirectional adds the reverse edges."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"grid dimensions must be positive, got {rows}x{cols}")
    mode = AdjacencyMode(mode)
    n = rows * cols
    a = np.zeros((n, n), dtype=np.uint8)
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                a[i, i + 1] = 1
            if r + 1 < rows:
                a[i, i + cols] = 1
    if mode is AdjacencyMode.BIDIRECTIONAL:
        a = a | a.T
    a.setflags(write=False)
    return AdjacencyMatrix(rows=rows, cols=cols, mode=mode, entries=a)


def normalize_adjacency(a: AdjacencyMatrix) -> NormalizedAdjacency:
    """Row-normalized D^-1 (A + I): each node averages itself and its out-neighbors.

    The one-way grid is asymmetric, so the symmetric D^-1/2 (A + I) D^-1/2 form
    does not apply.
    """
    a_tilde = a.entries.astype(np.float64) + np.eye(a.n)
    a_hat = a_tilde / a_tilde.sum(axis=1, keepdims=True)
    a_hat.setflags(write=False)
    return NormalizedAdjacency(n=a.n, entries=a_hat)


@lru_cache(maxsize=None)
def grid_operator(rows: int, cols: int, mode: str) -> NormalizedAdjacency:
    return normalize_adjacency(build_grid_adjacency(rows, cols, mode))


def gcn_positional_embedding(x: Tensor, a_hat: NormalizedAdjacency, w: Tensor) -> Tensor:
    """One GCN layer, ReLU(A_hat . x . W), over tokens x of shape [..., N, D]."""
    if x.ndim < 2 or x.shape[-2] != a_hat.n:
        raise ShapeError(f"GCN expects {a_hat.n} tokens, got input of shape {x.shape}")
    d = x.shape[-1]
    if w.shape != (d, d):
        raise ShapeError(f"GCN weight must be ({d}, {d}), got {w.shape}")
    operator = Tensor(a_hat.entries, dtype=x.dtype)
    return relu(matmul(matmul(operator, x), w))
