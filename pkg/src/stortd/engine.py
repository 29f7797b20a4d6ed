"""Streaming robust Tucker decomposition with spatio-temporal regularization.

Each incoming day is an ``n1 x n2`` slice (timestamp x location) with a binary
observation mask. The low-rank part of day ``t`` is modelled as
``G x1 U_T x2 U_S x3 u_t^T`` with a core ``G`` of shape ``(r1, r2, r3)``,
a temporal factor ``U_T`` (``n1 x r1``), a spatial factor ``U_S``
(``n2 x r2``) and a per-day weight vector ``u_t`` of length ``r3``. Outliers
are separated by soft-thresholding; the factors follow per-row recursive
least-squares updates with a forgetting factor, a graph-Laplacian pull on the
rows of ``U_S`` and a cyclic first-difference pull on the rows of ``U_T``.

The state never grows with the number of processed slices.
"""

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .regularizers import Laplacian, empty_laplacian, toeplitz_all_rows
from .tensor import DimensionError, kron, mode_product, pinv, soft_threshold, solve_spd

logger = logging.getLogger(__name__)

# Gaussian-consistent MAD scaling.
MAD_TO_SIGMA = 1.4826


class DegenerateSliceError(ValueError):
    """Raised when a slice has too few observed entries to estimate its weights."""


class Variant(enum.Enum):
    STORTD = "STORTD"
    SORTD = "SORTD"
    TORTD = "TORTD"
    ORTD = "ORTD"

    def apply(self, hyper):
        """Return `hyper` with the regularization weights this variant disables zeroed."""
        if self is Variant.ORTD:
            return replace(hyper, alpha=0.0, beta=0.0)
        if self is Variant.SORTD:
            return replace(hyper, alpha=0.0)
        if self is Variant.TORTD:
            return replace(hyper, beta=0.0)
        return hyper


@dataclass(frozen=True)
class Hyperparams:
    """Engine settings.

    ``gamma=None`` selects the adaptive sparsity threshold
    ``gamma_scale * sigma_hat``, where ``sigma_hat`` is a running MAD-based
    scale of the masked residuals. ``eps=None`` uses ``1e-6`` times the norm
    of the masked slice as the inner-loop tolerance.
    """

    ranks: tuple
    lam: float = 0.98
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float | None = None
    gamma_scale: float = 3.0
    eps: float | None = None
    max_inner_iters: int = 50
    init_gain: float = 1e2
    use_updated_spatial: bool = False
    warm_start: bool = False

    def __post_init__(self):
        ranks = tuple(int(r) for r in self.ranks)
        if len(ranks) != 3 or min(ranks) < 1:
            raise ValueError(f"ranks must be three positive integers, got {self.ranks}")
        object.__setattr__(self, "ranks", ranks)
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"forgetting factor must lie in [0, 1], got {self.lam}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.gamma_scale < 0:
            raise ValueError("gamma_scale must be nonnegative")
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be at least 1")
        if not self.init_gain > 0:
            raise ValueError("init_gain must be positive")


@dataclass
class EngineState:
    core: np.ndarray
    u_temporal: np.ndarray
    u_spatial: np.ndarray
    gains_spatial: np.ndarray
    gains_temporal: np.ndarray
    laplacian: Laplacian
    hyper: Hyperparams
    t: int = 0
    last_weight: np.ndarray = field(default=None)
    residual_scale: float = 0.0

    @property
    def dims(self):
        return self.u_temporal.shape[0], self.u_spatial.shape[0]

    def element_count(self):
        """Number of stored scalars, Laplacian included."""
        arrays = (
            self.core,
            self.u_temporal,
            self.u_spatial,
            self.gains_spatial,
            self.gains_temporal,
            self.last_weight,
            self.laplacian.matrix,
            self.laplacian.degree,
        )
        return sum(a.size for a in arrays) + 2

    def copy(self):
        return EngineState(
            core=self.core.copy(),
            u_temporal=self.u_temporal.copy(),
            u_spatial=self.u_spatial.copy(),
            gains_spatial=self.gains_spatial.copy(),
            gains_temporal=self.gains_temporal.copy(),
            laplacian=self.laplacian,
            hyper=self.hyper,
            t=self.t,
            last_weight=self.last_weight.copy(),
            residual_scale=self.residual_scale,
        )


@dataclass
class SliceResult:
    recovered: np.ndarray
    outliers: np.ndarray
    weight: np.ndarray
    inner_iters: int
    converged: bool
    skipped: bool = False


def init(n1, n2, hyper, laplacian=None, seed=0):
    """Fresh engine state with seeded orthonormal factors and a scaled Gaussian core."""
    r1, r2, r3 = hyper.ranks
    if r1 > n1 or r2 > n2:
        raise DimensionError(f"ranks {hyper.ranks} exceed slice dims ({n1}, {n2})")
    if laplacian is None:
        laplacian = empty_laplacian(n2)
    if laplacian.n != n2:
        raise DimensionError(f"Laplacian has {laplacian.n} nodes, expected {n2}")
    rng = np.random.default_rng(seed)
    u_t, _ = np.linalg.qr(rng.standard_normal((n1, r1)))
    u_s, _ = np.linalg.qr(rng.standard_normal((n2, r2)))
    core = rng.standard_normal((r1, r2, r3)) / np.sqrt(r1 * r2 * r3)
    return EngineState(
        core=core,
        u_temporal=u_t,
        u_spatial=u_s,
        gains_spatial=np.tile(hyper.init_gain * np.eye(r2), (n2, 1, 1)),
        gains_temporal=np.tile(hyper.init_gain * np.eye(r1), (n1, 1, 1)),
        laplacian=laplacian,
        hyper=hyper,
        t=0,
        last_weight=np.zeros(r3),
    )


def _weighted_core(core, u_d):
    """``G x3 u^T`` collapsed to an ``r1 x r2`` matrix."""
    return core @ u_d


def basis_slices(state):
    """``W = G x1 U_T x2 U_S`` as an ``(n1, n2, r3)`` array."""
    w = mode_product(state.core, state.u_temporal, 1)
    return mode_product(w, state.u_spatial, 2)


def reconstruct(state, u_d):
    """Low-rank slice ``G x1 U_T x2 U_S x3 u_d^T``."""
    u_d = np.asarray(u_d, dtype=float)
    return state.u_temporal @ _weighted_core(state.core, u_d) @ state.u_spatial.T


def _check_slice(state, m_t, p_t):
    m_t = np.asarray(m_t, dtype=float)
    p_t = np.asarray(p_t)
    if m_t.shape != state.dims or p_t.shape != state.dims:
        raise DimensionError(
            f"slice {m_t.shape} / mask {p_t.shape} do not match engine dims {state.dims}"
        )
    mask = p_t.astype(bool)
    # unobserved entries may hold NaN placeholders
    m_t = np.where(mask, m_t, 0.0)
    if not np.all(np.isfinite(m_t)):
        raise ValueError("observed entries must be finite")
    return m_t, mask


def _robust_scale(residual):
    if residual.size == 0:
        return 0.0
    med = np.median(residual)
    return MAD_TO_SIGMA * float(np.median(np.abs(residual - med)))


def estimate_slice(state, m_t, p_t, gamma=None):
    """Alternate the weight solve and the soft-threshold outlier step for one slice.

    Returns ``(u_d, s_t, iters, converged)``. The outlier slice is zero
    wherever the mask is zero.

    Raises
    ------
    DegenerateSliceError
        If fewer than ``r3`` entries are observed.
    """
    m_t, mask = _check_slice(state, m_t, p_t)
    hyper = state.hyper
    r3 = hyper.ranks[2]
    n_obs = int(mask.sum())
    if n_obs < r3:
        raise DegenerateSliceError(f"{n_obs} observed entries, need at least {r3}")

    design = basis_slices(state)[mask]  # (n_obs, r3)
    m_obs = m_t[mask]
    gram = design.T @ design
    eps = hyper.eps if hyper.eps is not None else 1e-6 * float(np.linalg.norm(m_obs))
    if gamma is None:
        gamma = hyper.gamma if hyper.gamma is not None else state_gamma(state, design, m_obs)

    s_obs = np.zeros(n_obs)
    u_d = state.last_weight.copy() if hyper.warm_start else None
    converged = False
    iters = 0
    for iters in range(1, hyper.max_inner_iters + 1):
        u_new = solve_spd(gram, design.T @ (m_obs - s_obs))
        s_new = soft_threshold(m_obs - design @ u_new, gamma)
        du = np.inf if u_d is None else float(np.linalg.norm(u_new - u_d))
        ds = float(np.linalg.norm(s_new - s_obs))
        u_d, s_obs = u_new, s_new
        if max(du, ds) <= eps:
            converged = True
            break

    s_t = np.zeros(state.dims)
    s_t[mask] = s_obs
    return u_d, s_t, iters, converged


def state_gamma(state, design, m_obs):
    """Adaptive threshold ``gamma_scale * sigma_hat`` for the current slice.

    ``sigma_hat`` is a running blend (forgetting factor ``lam``) of the
    MAD-based scale of the plain least-squares residual of each slice.
    The blended value is stored back on the state by :func:`step`.
    """
    return state.hyper.gamma_scale * _blend_scale(state, design, m_obs)


def _blend_scale(state, design, m_obs):
    u0 = solve_spd(design.T @ design, design.T @ m_obs)
    current = _robust_scale(m_obs - design @ u0)
    if state.t == 0:
        return current
    lam = state.hyper.lam
    return lam * state.residual_scale + (1.0 - lam) * current


def remove_outliers(m_t, p_t, s_t):
    """``P * (M - S)``: observed data with the detected outliers subtracted."""
    p = np.asarray(p_t).astype(bool)
    return np.where(p, np.asarray(m_t, dtype=float) - s_t, 0.0)


def _residual(n_obs, mask, u_temporal, weighted_core, u_spatial):
    return np.where(mask, n_obs - u_temporal @ weighted_core @ u_spatial.T, 0.0)


def update_spatial_factor(state, n_obs, p_t, u_d):
    """Row-wise recursive update of ``U_S`` and its gain matrices.

    Every row is updated from the same pre-update snapshot, so rows are
    independent and the result does not depend on their processing order.
    Returns ``(u_spatial, gains_spatial)``; `state` is not modified.
    """
    hyper = state.hyper
    lam, alpha = hyper.lam, hyper.alpha
    mask = np.asarray(p_t).astype(bool)
    pf = mask.astype(float)
    gu = _weighted_core(state.core, u_d)
    d2 = (state.u_temporal @ gu).T  # mode-2 unfolding of G x1 U_T x3 u^T, (r2, n1)
    delta = _residual(n_obs, mask, state.u_temporal, gu, state.u_spatial)

    # R_r <- lam R_r + D P_r D^T + alpha (1 - lam) L[r, r] I
    gains = lam * state.gains_spatial + np.einsum("ai,ir,bi->rab", d2, pf, d2)
    reg = alpha * (1.0 - lam)
    if reg:
        r2 = d2.shape[0]
        gains = gains + reg * state.laplacian.degree[:, None, None] * np.eye(r2)
        pull = state.laplacian.matrix @ state.u_spatial
    else:
        pull = 0.0
    rhs = (d2 @ delta).T - reg * pull  # (n2, r2)
    return state.u_spatial + solve_spd(gains, rhs), gains


def update_temporal_factor(state, n_obs, p_t, u_d, u_spatial=None):
    """Row-wise recursive update of ``U_T`` and its gain matrices.

    ``u_spatial`` overrides the spatial factor used to build the regressors;
    by default the pre-slice ``state.u_spatial`` is used. Returns
    ``(u_temporal, gains_temporal)``.
    """
    hyper = state.hyper
    lam, beta = hyper.lam, hyper.beta
    mask = np.asarray(p_t).astype(bool)
    pf = mask.astype(float)
    u_s = state.u_spatial if u_spatial is None else u_spatial
    gu = _weighted_core(state.core, u_d)
    h1 = gu @ u_s.T  # mode-1 unfolding of G x2 U_S x3 u^T, (r1, n2)
    delta = _residual(n_obs, mask, state.u_temporal, gu, u_s)

    # R_r <- lam R_r + H P_r H^T + 2 beta (1 - lam) I
    gains = lam * state.gains_temporal + np.einsum("aj,rj,bj->rab", h1, pf, h1)
    reg = beta * (1.0 - lam)
    if reg:
        gains = gains + 2.0 * reg * np.eye(h1.shape[0])
        pull = toeplitz_all_rows(state.u_temporal)
    else:
        pull = 0.0
    rhs = delta @ h1.T - reg * pull  # (n1, r1)
    return state.u_temporal + solve_spd(gains, rhs), gains


def update_core(core, u_temporal, u_spatial, n_obs, p_t, u_d):
    """Stochastic core correction ``G += fold(pinv(U_T) dN pinv(Z^T))`` with ``Z = u^T kron U_S``.

    The factors passed in are the already updated ones for this slice.
    """
    mask = np.asarray(p_t).astype(bool)
    gu = _weighted_core(core, u_d)
    delta = _residual(n_obs, mask, u_temporal, gu, u_spatial)
    z = kron(np.asarray(u_d, dtype=float)[None, :], u_spatial)  # (n2, r2 * r3)
    step = pinv(u_temporal) @ delta @ pinv(z.T)  # (r1, r2 * r3)
    r1, r2, r3 = core.shape
    # mode-1 fold: column j + r2 * k holds core[:, j, k]
    return core + step.reshape(r1, r2, r3, order="F")


def step(state, m_t, p_t):
    """Process one slice and advance `state` in place.

    The state is only written after every update for the slice has been
    computed, so an exception leaves it untouched. A slice with fewer than
    ``r3`` observed entries is skipped: the result is the reconstruction
    with the last weight vector and the state is held.
    """
    m_t, mask = _check_slice(state, m_t, p_t)
    hyper = state.hyper
    r3 = hyper.ranks[2]
    if int(mask.sum()) < r3:
        logger.debug("skipping degenerate slice at t=%d", state.t)
        return SliceResult(
            recovered=reconstruct(state, state.last_weight),
            outliers=np.zeros(state.dims),
            weight=state.last_weight.copy(),
            inner_iters=0,
            converged=False,
            skipped=True,
        )

    scale = state.residual_scale
    gamma = hyper.gamma
    if gamma is None:
        design = basis_slices(state)[mask]
        scale = _blend_scale(state, design, m_t[mask])
        gamma = hyper.gamma_scale * scale

    u_d, s_t, iters, converged = estimate_slice(state, m_t, mask, gamma=gamma)
    n_obs = remove_outliers(m_t, mask, s_t)
    u_s, gains_s = update_spatial_factor(state, n_obs, mask, u_d)
    u_t, gains_t = update_temporal_factor(
        state, n_obs, mask, u_d, u_spatial=u_s if hyper.use_updated_spatial else None
    )
    core = update_core(state.core, u_t, u_s, n_obs, mask, u_d)

    for arr in (core, u_t, u_s):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite engine state at t={state.t}")

    state.core = core
    state.u_temporal = u_t
    state.u_spatial = u_s
    state.gains_spatial = gains_s
    state.gains_temporal = gains_t
    state.last_weight = u_d
    state.residual_scale = scale
    state.t += 1
    return SliceResult(
        recovered=reconstruct(state, u_d),
        outliers=s_t,
        weight=u_d,
        inner_iters=iters,
        converged=converged,
    )
