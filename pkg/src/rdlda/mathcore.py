"""Small dense symmetric eigensolvers.

Cyclic Jacobi for the standard problem, a checked Cholesky factorization,
and the generalized problem ``sb e = v sw e`` solved by whitening with the
Cholesky factor of ``sw``.  Matrices here are small (latent widths of a
few dozen), so clarity wins over blocking.
"""

from typing import NamedTuple

import numpy as np

from .errors import NotPositiveDefiniteError

__all__ = [
    "EigenSolution",
    "as_symmetric",
    "sym_eig",
    "cholesky",
    "solve_lower",
    "solve_upper",
    "generalized_eig",
]

_MAX_SWEEPS = 100
_CLAMP_TOL = 1e-10


class EigenSolution(NamedTuple):
    """Ascending eigenvalues with eigenvectors stored column-wise."""

    values: np.ndarray
    vectors: np.ndarray


def as_symmetric(a, name="matrix"):
    """Validate a square finite matrix and return ``(a + a.T) / 2`` as float64."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise ValueError(f"{name} has a non-finite entry at {tuple(int(i) for i in bad)}")
    return (a + a.T) / 2.0


def _fix_signs(vectors):
    # largest-magnitude component of each column made positive;
    # argmax returns the lowest index on ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[idx, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    return vectors * signs


def sym_eig(a):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Symmetric matrix; it is symmetrized as ``(a + a.T) / 2`` first.

    Returns
    -------
    EigenSolution
        Eigenvalues in ascending order and orthonormal eigenvectors as
        columns, each column signed so its largest-magnitude entry is
        positive.
    """
    a = as_symmetric(a)
    n = a.shape[0]
    A = a.copy()
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if n > 1 and scale > 0:
        iu = np.triu_indices(n, 1)
        for _ in range(_MAX_SWEEPS):
            if np.sqrt(np.sum(A[iu] ** 2)) <= 1e-15 * scale:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if abs(apq) <= 1e-300:
                        continue
                    app, aqq = A[p, p], A[q, q]
                    theta = (aqq - app) / (2.0 * apq)
                    if abs(theta) > 1e150:
                        t = 0.5 / theta
                    else:
                        t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    # A stays symmetric, so one column update serves the row as well
                    ap = A[:, p].copy()
                    aq = A[:, q].copy()
                    new_p = c * ap - s * aq
                    new_q = s * ap + c * aq
                    A[:, p] = new_p
                    A[p, :] = new_p
                    A[:, q] = new_q
                    A[q, :] = new_q
                    A[p, p] = app - t * apq
                    A[q, q] = aqq + t * apq
                    A[p, q] = A[q, p] = 0.0
                    vp = V[:, p].copy()
                    vq = V[:, q].copy()
                    V[:, p] = c * vp - s * vq
                    V[:, q] = s * vp + c * vq
    values = np.diag(A).copy()
    order = np.argsort(values, kind="stable")
    return EigenSolution(values[order], _fix_signs(V[:, order]))


def cholesky(a):
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    A pivot at or below ``1e-12 * trace(a)`` raises
    :class:`~rdlda.errors.NotPositiveDefiniteError` naming its index.
    """
    a = as_symmetric(a)
    n = a.shape[0]
    tol = 1e-12 * max(np.trace(a), 0.0)
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > tol:
            raise NotPositiveDefiniteError(j, pivot)
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_lower(L, b):
    """Forward substitution for ``L x = b`` (``b`` may be a matrix)."""
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    for i in range(L.shape[0]):
        x[i] = (b[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def solve_upper(U, b):
    """Back substitution for ``U x = b``."""
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    for i in range(U.shape[0] - 1, -1, -1):
        x[i] = (b[i] - U[i, i + 1:] @ x[i + 1:]) / U[i, i]
    return x


def generalized_eig(sb, sw):
    """Solve ``sb e = v sw e`` for symmetric ``sb`` and SPD ``sw``.

    The problem is reduced to the standard one on ``L^-1 sb L^-T`` where
    ``sw = L L^T``; eigenvectors are mapped back with ``L^-T`` so that
    ``e.T @ sw @ e == 1``.  Small negative eigenvalues produced by rounding
    (down to ``-1e-10`` relative to ``max(1, ||L^-1 sb L^-T||)``) are
    clamped to zero.
    """
    sb = as_symmetric(sb, "sb")
    sw = as_symmetric(sw, "sw")
    if sb.shape != sw.shape:
        raise ValueError(f"dimension mismatch: sb {sb.shape} vs sw {sw.shape}")
    L = cholesky(sw)
    white = solve_lower(L, solve_lower(L, sb).T)
    values, Y = sym_eig(white)
    tol = _CLAMP_TOL * max(1.0, np.abs(values).max(initial=0.0))
    values = np.where((values < 0) & (values >= -tol), 0.0, values)
    E = solve_upper(L.T, Y)
    return EigenSolution(values, _fix_signs(E))
