"""Spatial graph Laplacian and cyclic temporal-difference regularizers."""

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError


@dataclass(frozen=True)
class SpatialGraph:
    """Dense Gaussian-weight graph over sensor locations."""

    weights: np.ndarray
    sigma: float

    @property
    def n(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class Laplacian:
    """``L = D - W`` together with the degree vector ``diag(D)``."""

    matrix: np.ndarray
    degree: np.ndarray

    @property
    def n(self):
        return self.matrix.shape[0]


def pairwise_sq_distances(features):
    features = np.asarray(features, dtype=float)
    diff = features[:, None, :] - features[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_bandwidth(features):
    """Median of the pairwise Euclidean distances between distinct nodes."""
    d2 = pairwise_sq_distances(features)
    iu = np.triu_indices(d2.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    sigma = float(np.median(np.sqrt(d2[iu])))
    return sigma if sigma > 0 else 1.0


def build_graph(features, sigma=None):
    """Gaussian-weight graph ``W[i, j] = exp(-||y_i - y_j||^2 / sigma^2)``.

    Parameters
    ----------
    features : sequence of 1-d arrays, one per node
        Each node's feature vector, e.g. the node's traffic series on a
        reference day. All vectors must have the same length.
    sigma : float, optional
        Bandwidth. Defaults to the median pairwise distance.
    """
    rows = [np.asarray(f, dtype=float).ravel() for f in features]
    lengths = {r.size for r in rows}
    if len(lengths) > 1:
        raise DimensionError(f"feature vectors have mismatched lengths {sorted(lengths)}")
    y = np.vstack(rows) if rows else np.zeros((0, 0))
    if sigma is None:
        sigma = median_bandwidth(y)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    w = np.exp(-pairwise_sq_distances(y) / sigma**2)
    np.fill_diagonal(w, 0.0)
    return SpatialGraph(weights=w, sigma=float(sigma))


def graph_from_weights(weights, sigma=float("nan")):
    """Wrap a precomputed adjacency after validating it."""
    w = np.array(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DimensionError(f"adjacency must be square, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("adjacency contains non-finite values")
    if not np.allclose(w, w.T, rtol=0, atol=1e-12):
        raise ValueError("adjacency is not symmetric")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("adjacency weights must lie in [0, 1]")
    np.fill_diagonal(w, 0.0)
    return SpatialGraph(weights=w, sigma=sigma)


def load_adjacency_csv(path):
    """Load a square symmetric weight matrix from a comma-separated file."""
    w = np.loadtxt(path, delimiter=",", ndmin=2)
    return graph_from_weights(w)


def build_laplacian(graph):
    w = graph.weights
    degree = w.sum(axis=1)
    return Laplacian(matrix=np.diag(degree) - w, degree=degree)


def empty_laplacian(n):
    """Laplacian of the edgeless graph on `n` nodes."""
    return Laplacian(matrix=np.zeros((n, n)), degree=np.zeros(n))


def spatial_penalty(laplacian, u_s):
    """``tr(U_S^T L U_S)``.

    This equals half of ``sum_{i,j} W[i,j] * ||U_S[i] - U_S[j]||^2`` taken
    over ordered pairs.
    """
    u_s = np.asarray(u_s, dtype=float)
    if u_s.ndim != 2 or u_s.shape[0] != laplacian.n:
        raise DimensionError(
            f"factor with shape {u_s.shape} does not match a {laplacian.n}-node Laplacian"
        )
    return float(np.sum(u_s * (laplacian.matrix @ u_s)))


def temporal_penalty(u_t):
    """Cyclic first-difference energy ``sum_i ||U[i+1] - U[i]||^2`` (row n wraps to row 1)."""
    u_t = np.asarray(u_t, dtype=float)
    if u_t.ndim != 2 or u_t.shape[0] < 2:
        raise DimensionError(f"need at least 2 rows, got shape {u_t.shape}")
    diff = np.roll(u_t, -1, axis=0) - u_t
    return float(np.sum(diff**2))


def laplacian_row_combination(laplacian, u_s, r):
    """``sum_c L[c, r] * U_S[c, :]`` for one row index `r`."""
    if not 0 <= r < laplacian.n:
        raise IndexError(f"row {r} out of range for {laplacian.n} nodes")
    return laplacian.matrix[:, r] @ np.asarray(u_s, dtype=float)


def toeplitz_row_combination(u_t, r):
    """``2 U[r] - U[r-1] - U[r+1]`` with cyclic wrap at both ends."""
    u_t = np.asarray(u_t, dtype=float)
    n = u_t.shape[0]
    if not 0 <= r < n:
        raise IndexError(f"row {r} out of range for {n} rows")
    return 2.0 * u_t[r] - u_t[(r - 1) % n] - u_t[(r + 1) % n]


def toeplitz_all_rows(u_t):
    """:func:`toeplitz_row_combination` evaluated for every row at once."""
    return 2.0 * u_t - np.roll(u_t, 1, axis=0) - np.roll(u_t, -1, axis=0)
