"""Synthetic Tucker-structured streams with tunable spatial and temporal smoothness."""

from dataclasses import dataclass

import numpy as np

from .regularizers import SpatialGraph, build_graph, build_laplacian


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    temporal_smoothness
        Half-width (in timestamps) of the cyclic moving average applied to
        the columns of the temporal factor; 0 disables smoothing.
    spatial_steps
        Number of graph-diffusion steps ``U <- (I - eta L) U`` applied to the
        spatial factor; 0 disables smoothing.
    spatial_graph
        Graph the spatial factor is smoothed against. ``None`` builds a
        Gaussian-weight graph over random planar sensor positions.
    drift
        Scale of the per-day random-walk perturbation of both factors.
    """

    dims: tuple = (30, 20, 200)
    true_ranks: tuple = (3, 3, 2)
    temporal_smoothness: float = 0.0
    spatial_steps: int = 0
    spatial_graph: SpatialGraph | None = None
    noise_sigma: float = 0.0
    drift: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if any(r > n for r, n in zip(self.true_ranks[:2], self.dims[:2])):
            raise ValueError(f"ranks {self.true_ranks} exceed dims {self.dims}")
        if min(self.true_ranks) < 1:
            raise ValueError("ranks must be positive")
        if self.temporal_smoothness < 0 or self.spatial_steps < 0:
            raise ValueError("smoothness settings must be nonnegative")
        if self.noise_sigma < 0 or self.drift < 0:
            raise ValueError("noise_sigma and drift must be nonnegative")


@dataclass
class SynthFactors:
    """Generating factors (day-0 values when ``drift > 0``)."""

    core: np.ndarray
    u_temporal: np.ndarray
    u_spatial: np.ndarray
    weights: np.ndarray  # (T, r3)
    graph: SpatialGraph


def random_sensor_graph(n, rng):
    """Gaussian-weight graph over ``n`` uniformly placed planar sensors."""
    coords = rng.uniform(size=(n, 2))
    return build_graph(coords)


def largest_eigenvalue(matrix, iters=200, seed=0):
    """Power-iteration estimate of the largest eigenvalue of a PSD matrix."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(matrix.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam = float(v @ matrix @ v)
    return lam


def cyclic_moving_average(columns, half_width):
    """Average every row with its ``half_width`` cyclic neighbours on each side."""
    h = int(round(half_width))
    if h <= 0:
        return columns.copy()
    out = np.zeros_like(columns)
    for shift in range(-h, h + 1):
        out += np.roll(columns, shift, axis=0)
    return out / (2 * h + 1)


def graph_diffuse(columns, laplacian, steps):
    """Apply ``steps`` rounds of ``I - eta L`` with ``eta = 0.5 / lambda_max(L)``."""
    if steps <= 0:
        return columns.copy()
    lmax = largest_eigenvalue(laplacian.matrix)
    if lmax <= 0:
        return columns.copy()
    eta = 0.5 / lmax
    out = columns.copy()
    for _ in range(steps):
        out = out - eta * (laplacian.matrix @ out)
    return out


def _orthonormal(columns):
    q, r = np.linalg.qr(columns)
    # fix column signs so the factor is a deterministic function of its span
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def _day_weights(rng, T, r3):
    mean = rng.standard_normal(r3) + np.where(np.arange(r3) == 0, 2.0, 0.0)
    x = np.zeros(r3)
    out = np.empty((T, r3))
    for t in range(T):
        x = 0.8 * x + 0.3 * rng.standard_normal(r3)
        out[t] = mean + x
    return out


def gen_stream(spec):
    """Draw a clean ``(n1, n2, T)`` stream and its generating factors.

    Slices are ``G x1 U_T x2 U_S x3 u_t^T`` scaled so the noiseless stream has
    unit root-mean-square value; Gaussian noise of ``noise_sigma`` is then
    added.
    """
    n1, n2, T = spec.dims
    r1, r2, r3 = spec.true_ranks
    rng = np.random.default_rng(spec.seed)
    graph = spec.spatial_graph if spec.spatial_graph is not None else random_sensor_graph(n2, rng)
    if graph.n != n2:
        raise ValueError(f"spatial graph has {graph.n} nodes, expected {n2}")

    u_t = _orthonormal(cyclic_moving_average(rng.standard_normal((n1, r1)), spec.temporal_smoothness))
    u_s = _orthonormal(graph_diffuse(rng.standard_normal((n2, r2)), build_laplacian(graph), spec.spatial_steps))
    core = rng.standard_normal((r1, r2, r3))
    weights = _day_weights(rng, T, r3)

    stream = np.empty((n1, n2, T))
    cur_t, cur_s = u_t, u_s
    for day in range(T):
        if spec.drift > 0 and day > 0:
            cur_t = cur_t + spec.drift * rng.standard_normal(cur_t.shape) / np.sqrt(n1)
            cur_s = cur_s + spec.drift * rng.standard_normal(cur_s.shape) / np.sqrt(n2)
        stream[:, :, day] = cur_t @ (core @ weights[day]) @ cur_s.T

    scale = np.sqrt(np.mean(stream**2))
    if scale > 0:
        stream /= scale
        core = core / scale
    if spec.noise_sigma > 0:
        stream += spec.noise_sigma * rng.standard_normal(stream.shape)
    return stream, SynthFactors(core=core, u_temporal=u_t, u_spatial=u_s, weights=weights, graph=graph)


def reference_graph(day_slice, sigma=None):
    """Graph over locations built from one fully observed day (columns are node series)."""
    return build_graph(np.asarray(day_slice).T, sigma=sigma)
