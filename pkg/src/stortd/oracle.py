"""Brute-force references for tests and benchmarks.

Nothing here reuses the engine's recursions or kernels: the row solvers
rebuild the normal equations by explicit summation over the slice history,
and the batch imputer is a plain masked alternating least-squares Tucker fit.
Not part of the package's public surface.
"""

import numpy as np


def _solve(a, b):
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(a) @ b


def dense_toeplitz(n):
    """Explicit cyclic first-difference matrix: ``-1`` on the diagonal, ``+1`` above, ``+1`` bottom-left."""
    t = np.zeros((n, n))
    for i in range(n):
        t[i, i] = -1.0
        t[i, (i + 1) % n] += 1.0
    return t


def pairwise_spatial_sum(weights, u_s):
    """``sum_{i,j} W[i,j] ||U[i] - U[j]||^2`` over ordered pairs, by loops."""
    n = weights.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            diff = u_s[i] - u_s[j]
            total += weights[i, j] * float(diff @ diff)
    return total


def spatial_regressors(core, u_temporal, u_d):
    """``D = G x1 U_T x3 u^T`` mode-2 unfolded, built entry by entry: shape (r2, n1)."""
    r1, r2, r3 = core.shape
    n1 = u_temporal.shape[0]
    d = np.zeros((r2, n1))
    for j in range(r2):
        for i in range(n1):
            d[j, i] = sum(
                u_temporal[i, a] * core[a, j, c] * u_d[c] for a in range(r1) for c in range(r3)
            )
    return d


def temporal_regressors(core, u_spatial, u_d):
    """``H = G x2 U_S x3 u^T`` mode-1 unfolded: shape (r1, n2)."""
    r1, r2, r3 = core.shape
    n2 = u_spatial.shape[0]
    h = np.zeros((r1, n2))
    for a in range(r1):
        for j in range(n2):
            h[a, j] = sum(
                core[a, b, c] * u_spatial[j, b] * u_d[c] for b in range(r2) for c in range(r3)
            )
    return h


def spatial_normal_equations(slices, masks, weights, core, u_temporal, u_spatial_prev, r, lam, alpha, laplacian):
    """``(R, v)`` of the row-`r` spatial system summed over the whole history."""
    t = len(slices)
    r2 = core.shape[1]
    big_r = np.zeros((r2, r2))
    v = np.zeros(r2)
    for k in range(t):
        w = lam ** (t - 1 - k)
        d = spatial_regressors(core, u_temporal, weights[k])
        p = np.diag(np.asarray(masks[k], dtype=float)[:, r])
        big_r += w * d @ p @ d.T
        v += w * d @ p @ np.asarray(slices[k], dtype=float)[:, r]
    big_r += alpha * laplacian[r, r] * np.eye(r2)
    for c in range(laplacian.shape[0]):
        if c != r:
            v -= alpha * laplacian[c, r] * u_spatial_prev[c]
    return big_r, v


def direct_row_solve_spatial(slices, masks, weights, core, u_temporal, u_spatial_prev, r, lam, alpha, laplacian):
    """Row `r` of the spatial factor from the explicitly summed normal equations.

    Parameters
    ----------
    slices, masks : sequences of ``n1 x n2`` arrays
        Outlier-free observations and masks for days ``1..t``.
    weights : sequence of length-``r3`` day weights
    core, u_temporal : the (fixed) core and temporal factor
    u_spatial_prev : spatial factor from the previous step (neighbour pull)
    laplacian : dense ``n2 x n2`` Laplacian matrix
    """
    big_r, v = spatial_normal_equations(
        slices, masks, weights, core, u_temporal, u_spatial_prev, r, lam, alpha, laplacian
    )
    return _solve(big_r, v)


def temporal_normal_equations(slices, masks, weights, core, u_spatial, u_temporal_prev, r, lam, beta):
    t = len(slices)
    r1 = core.shape[0]
    n1 = u_temporal_prev.shape[0]
    big_r = np.zeros((r1, r1))
    v = np.zeros(r1)
    for k in range(t):
        w = lam ** (t - 1 - k)
        h = temporal_regressors(core, u_spatial, weights[k])
        p = np.diag(np.asarray(masks[k], dtype=float)[r, :])
        big_r += w * h @ p @ h.T
        v += w * h @ p @ np.asarray(slices[k], dtype=float)[r, :]
    big_r += 2.0 * beta * np.eye(r1)
    v += beta * (u_temporal_prev[(r - 1) % n1] + u_temporal_prev[(r + 1) % n1])
    return big_r, v


def direct_row_solve_temporal(slices, masks, weights, core, u_spatial, u_temporal_prev, r, lam, beta):
    """Row `r` of the temporal factor; neighbours wrap cyclically."""
    big_r, v = temporal_normal_equations(
        slices, masks, weights, core, u_spatial, u_temporal_prev, r, lam, beta
    )
    return _solve(big_r, v)


def _unfold(x, mode):
    # mode is 0-based here; column order: remaining modes, lowest index fastest
    return np.reshape(np.moveaxis(x, mode, 0), (x.shape[mode], -1), order="F")


def _tucker(core, factors):
    return np.einsum("abc,ia,jb,kc->ijk", core, *factors)


def _masked_objective(x, mask, core, factors):
    return float(np.sum((mask * (x - _tucker(core, factors))) ** 2))


def _row_update(x, mask, core, factors, mode):
    """Exact masked least-squares refit of every row of ``factors[mode]``."""
    others = [f for m, f in enumerate(factors) if m != mode]
    # regressors for this mode: core times the other two factors
    if mode == 0:
        reg = np.einsum("abc,jb,kc->ajk", core, *others)
    elif mode == 1:
        reg = np.einsum("abc,ia,kc->bik", core, *others)
    else:
        reg = np.einsum("abc,ia,jb->cij", core, *others)
    reg = reg.reshape(reg.shape[0], -1)  # (r, rest) matching moved axes order
    xm = np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1)
    pm = np.moveaxis(mask, mode, 0).reshape(mask.shape[mode], -1)
    gram = np.einsum("ap,np,bp->nab", reg, pm, reg)
    rhs = np.einsum("ap,np->na", reg, pm * xm)
    return np.einsum("nab,nb->na", np.linalg.pinv(gram), rhs)


def _core_update(x, mask, factors, ranks):
    idx = np.nonzero(mask)
    u1, u2, u3 = factors
    design = np.einsum("na,nb,nc->nabc", u1[idx[0]], u2[idx[1]], u3[idx[2]]).reshape(idx[0].size, -1)
    sol, *_ = np.linalg.lstsq(design, x[idx], rcond=None)
    return sol.reshape(ranks)


def batch_tucker_als(tensor, mask, ranks, iters=30, return_history=False):
    """Masked Tucker completion by alternating least squares.

    Initialised from the truncated HOSVD of the zero-filled, rate-rescaled
    tensor. Each sweep refits every row of the three factors and then the
    core by exact least squares over the observed entries, so the masked
    squared error never increases from one sweep to the next.

    Returns the completed tensor (and the per-sweep objective history when
    ``return_history`` is set; entry 0 is the objective at initialisation).
    """
    x = np.asarray(tensor, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    x = np.where(mask, x, 0.0)
    ranks = tuple(int(r) for r in ranks)
    frac = mask.mean() if mask.any() else 1.0
    filled = x / frac
    factors = []
    for mode in range(3):
        u, _, _ = np.linalg.svd(_unfold(filled, mode), full_matrices=False)
        factors.append(u[:, : ranks[mode]])
    core = np.einsum("ijk,ia,jb,kc->abc", filled, *factors)
    m = mask.astype(float)
    history = [_masked_objective(x, m, core, factors)]
    for _ in range(iters):
        for mode in range(3):
            factors[mode] = _row_update(x, m, core, factors, mode)
        core = _core_update(x, mask, factors, ranks)
        history.append(_masked_objective(x, m, core, factors))
    completed = _tucker(core, factors)
    if return_history:
        return completed, history
    return completed
