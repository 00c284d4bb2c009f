"""Two-sample distances used in place of FID at toy scale."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BLOCK = 512


def _pair_distance_sum(A: np.ndarray, B: np.ndarray) -> float:
    """Sum of ||a - b|| over all pairs, in fixed row blocks."""
    total = 0.0
    for i in range(0, A.shape[0], _BLOCK):
        a = A[i:i + _BLOCK]
        sq = np.zeros((a.shape[0], B.shape[0]))
        for k in range(A.shape[1]):
            d = a[:, k:k + 1] - B[None, :, k]
            sq += d * d
        total += np.sqrt(sq).sum()
    return total


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


def energy_distance(A, B) -> float:
    """V-statistic 2 E|a-b| - E|a-a'| - E|b-b'|; exactly zero for identical multisets."""
    A, B = _as_points(A), _as_points(B)
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise ValueError("energy distance needs at least two points per sample")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    n, m = A.shape[0], B.shape[0]
    ab = _pair_distance_sum(A, B) / (n * m)
    aa = _pair_distance_sum(A, A) / (n * n)
    bb = _pair_distance_sum(B, B) / (m * m)
    return max(2.0 * ab - aa - bb, 0.0)


def sliced_wasserstein(A, B, n_projections: int = 512, seed: int = 0) -> float:
    """Mean 1-D Wasserstein-1 over random unit directions."""
    A, B = _as_points(A), _as_points(B)
    rng = np.random.default_rng(seed)
    if A.shape[0] != B.shape[0]:
        n = min(A.shape[0], B.shape[0])
        if A.shape[0] > n:
            A = A[rng.choice(A.shape[0], n, replace=False)]
        else:
            B = B[rng.choice(B.shape[0], n, replace=False)]
    dirs = rng.standard_normal((A.shape[1], n_projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa = np.sort(A @ dirs, axis=0)
    pb = np.sort(B @ dirs, axis=0)
    return float(np.abs(pa - pb).mean())


@dataclass
class MetricReport:
    energy: float
    sliced_w: float
    n_projections: int
    seed: int
    n_a: int
    n_b: int


def compare(A, B, n_projections: int = 512, seed: int = 0) -> MetricReport:
    return MetricReport(energy_distance(A, B), sliced_wasserstein(A, B, n_projections, seed),
                        n_projections, seed, len(A), len(B))
