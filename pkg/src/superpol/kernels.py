"""Gaussian and exact-match kernels, median-heuristic bandwidths, column standardization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist


@dataclass(frozen=True)
class Gaussian:
    bandwidth: float

    def __post_init__(self):
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"Gaussian bandwidth must be finite and positive, got {self.bandwidth}")

    def describe(self) -> str:
        return f"gaussian h={float(self.bandwidth)!r}"


@dataclass(frozen=True)
class Delta:
    """k(x, y) = 1 if the rows are exactly equal, else 0."""

    def describe(self) -> str:
        return "delta"


KernelSpec = Gaussian | Delta


def _matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def median_heuristic(points, cap: int = 1000) -> float:
    """Median nonzero pairwise Euclidean distance over at most ``cap`` strided rows."""
    x = _matrix(points)
    n = x.shape[0]
    if n < 2:
        raise ValueError("median heuristic needs at least 2 points")
    if cap < 2:
        raise ValueError("cap must be >= 2")
    if n > cap:
        x = x[np.linspace(0, n - 1, cap).round().astype(int)]
    d = pdist(x)
    d = d[d > 0]
    if d.size == 0:
        raise ValueError("degenerate point cloud: all pairwise distances are zero")
    return float(np.median(d))


def _row_ids(x, y):
    both = np.vstack([x, y])
    _, ids = np.unique(both, axis=0, return_inverse=True)
    ids = ids.reshape(-1)
    return ids[: x.shape[0]], ids[x.shape[0]:]


def gram(x, y, spec) -> np.ndarray:
    x, y = _matrix(x), _matrix(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]} columns")
    if isinstance(spec, Gaussian):
        return np.exp(-cdist(x, y, "sqeuclidean") / (2.0 * spec.bandwidth ** 2))
    if isinstance(spec, Delta):
        ix, iy = _row_ids(x, y)
        return (ix[:, None] == iy[None, :]).astype(float)
    raise TypeError(f"unknown kernel spec {spec!r}")


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (_matrix(x) - self.mean) / self.scale

    def inverse(self, x) -> np.ndarray:
        return _matrix(x) * self.scale + self.mean


def standardize(matrix):
    """Center columns and scale to unit sample sd; constant columns keep scale 1."""
    x = _matrix(matrix)
    if x.shape[0] < 2:
        raise ValueError("standardize needs at least 2 rows")
    mean = x.mean(axis=0)
    scale = x.std(axis=0, ddof=1)
    scale = np.where(np.ptp(x, axis=0) > 0, scale, 1.0)
    st = Standardizer(mean, scale)
    return st.transform(x), st
