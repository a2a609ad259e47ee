"""Central finite differences for checking hand-written gradients."""

import numpy as np

__all__ = ["numerical_grad", "relative_error"]


def numerical_grad(f, x, step=1e-5, indices=None):
    """Central-difference gradient of scalar ``f()`` with respect to array ``x``.

    ``x`` is perturbed in place and restored.  ``indices`` restricts the
    check to a subset of flat positions (others are left at zero).
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        grad.reshape(-1)[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """``max|a - n| / max|n|`` over all entries (arrays or lists of arrays)."""
    if isinstance(analytic, (list, tuple)):
        analytic = np.concatenate([np.ravel(a) for a in analytic])
        numeric = np.concatenate([np.ravel(n) for n in numeric])
    scale = np.abs(numeric).max()
    diff = np.abs(np.asarray(analytic) - np.asarray(numeric)).max()
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)
