"""Dense third-order tensor kernels.

Layout
------
A third-order tensor is a C-contiguous ``ndarray`` of shape ``(n1, n2, n3)``
indexed ``x[i1, i2, i3]``; for streams the axes are timestamp, location, day.

The mode-k unfolding has shape ``(n_k, prod(other dims))``. Its columns
enumerate the two remaining indices with the lower-numbered mode varying
fastest, so for mode 1 the column of ``x[i1, i2, i3]`` is ``i2 + n2 * i3``
and for mode 3 it is ``i1 + n1 * i2``. Under this ordering the Tucker
identity reads ``unfold(G x1 A x2 B x3 C, 1) == A @ unfold(G, 1) @ kron(C, B).T``.

Modes are numbered 1, 2, 3 throughout this package.
"""

import numpy as np

MODES = (1, 2, 3)


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent with an operation."""


def _check_mode(mode):
    if mode not in MODES:
        raise DimensionError(f"mode must be one of {MODES}, got {mode!r}")
    return mode - 1


def unfold(tensor, mode):
    """Mode-`mode` unfolding of a third-order tensor.

    Parameters
    ----------
    tensor : ndarray, shape (n1, n2, n3)
    mode : {1, 2, 3}

    Returns
    -------
    ndarray, shape ``(n_mode, prod of the other two dims)``
    """
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise DimensionError(f"expected a third-order tensor, got ndim={tensor.ndim}")
    axis = _check_mode(mode)
    moved = np.moveaxis(tensor, axis, 0)
    return np.reshape(moved, (tensor.shape[axis], -1), order="F")


def fold(matrix, mode, dims):
    """Inverse of :func:`unfold`."""
    matrix = np.asarray(matrix)
    axis = _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise DimensionError(f"dims must have length 3, got {dims}")
    rest = [d for i, d in enumerate(dims) if i != axis]
    expected = (dims[axis], rest[0] * rest[1])
    if matrix.shape != expected:
        raise DimensionError(
            f"cannot fold matrix of shape {matrix.shape} into {dims} along mode {mode}; "
            f"expected shape {expected}"
        )
    moved = np.reshape(matrix, (dims[axis], rest[0], rest[1]), order="F")
    return np.ascontiguousarray(np.moveaxis(moved, 0, axis))


def mode_product(tensor, matrix, mode):
    """n-mode product ``tensor x_mode matrix``.

    The result replaces dimension `mode` with ``matrix.shape[0]`` and equals
    ``fold(matrix @ unfold(tensor, mode), mode, new_dims)``.
    """
    tensor = np.asarray(tensor)
    matrix = np.atleast_2d(np.asarray(matrix))
    axis = _check_mode(mode)
    if tensor.ndim != 3:
        raise DimensionError(f"expected a third-order tensor, got ndim={tensor.ndim}")
    if matrix.ndim != 2 or matrix.shape[1] != tensor.shape[axis]:
        raise DimensionError(
            f"matrix of shape {matrix.shape} cannot multiply mode {mode} "
            f"of tensor with shape {tensor.shape}"
        )
    out = np.tensordot(matrix, tensor, axes=(1, axis))
    return np.ascontiguousarray(np.moveaxis(out, 0, axis))


def kron(a, b):
    """Kronecker product of two matrices; block ``(i, j)`` equals ``a[i, j] * b``."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def pinv(matrix, tol=1e-12):
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``tol * sigma_max`` are treated as zero.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    m, n = matrix.shape
    if matrix.size == 0:
        return np.zeros((n, m))
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((n, m))
    keep = s > tol * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


def soft_threshold(x, gamma):
    """Elementwise ``sign(x) * max(|x| - gamma, 0)``, the prox of ``gamma * |.|_1``."""
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - gamma, 0.0)


def default_ridge(a):
    """``1e-10 * trace(a) / dim``; accepts a single matrix or a stack."""
    a = np.asarray(a)
    dim = a.shape[-1]
    return 1e-10 * np.abs(np.trace(a, axis1=-2, axis2=-1)) / dim


def solve_spd(a, b, ridge=None):
    """Solve ``(a + ridge * I) x = b`` for symmetric positive (semi)definite `a`.

    Works on a single system or a stack of systems (``a`` of shape
    ``(..., k, k)`` with ``b`` of shape ``(..., k)``). A Cholesky factorization
    is tried first; if it fails the minimum-norm least-squares solution is
    returned via :func:`pinv`.

    Parameters
    ----------
    a : ndarray, shape (..., k, k)
    b : ndarray, shape (..., k)
    ridge : float or ndarray, optional
        Diagonal loading. Defaults to :func:`default_ridge` of `a`.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"solve_spd needs square matrices, got shape {a.shape}")
    if b.shape != a.shape[:-1]:
        raise DimensionError(f"right-hand side shape {b.shape} does not match {a.shape}")
    if ridge is None:
        ridge = default_ridge(a)
    k = a.shape[-1]
    loaded = a + np.asarray(ridge)[..., None, None] * np.eye(k)
    try:
        chol = np.linalg.cholesky(loaded)
    except np.linalg.LinAlgError:
        if loaded.ndim == 2:
            return pinv(loaded) @ b
        flat_a = loaded.reshape(-1, k, k)
        flat_b = b.reshape(-1, k)
        out = np.stack([pinv(m) @ v for m, v in zip(flat_a, flat_b)])
        return out.reshape(b.shape)
    y = np.linalg.solve(chol, b[..., None])
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]
