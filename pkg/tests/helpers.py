"""Shared test utilities: finite differences and tolerance helpers."""

import numpy as np


def rel_err(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """Relative error with an absolute floor so near-zero pairs compare sanely."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def central_diff(fn, arr: np.ndarray, index, eps: float = 1e-6) -> float:
    """Two-sided difference of scalar fn w.r.t. one coordinate of arr, in place."""
    orig = arr[index]
    arr[index] = orig + eps
    hi = fn()
    arr[index] = orig - eps
    lo = fn()
    arr[index] = orig
    return (hi - lo) / (2.0 * eps)


def pick_coords(grad: np.ndarray, rng: np.random.Generator, top: int = 3, extra: int = 2):
    """Indices worth checking: the largest-magnitude entries plus random ones."""
    flat = np.abs(grad).ravel()
    order = np.argsort(flat)[::-1]
    coords = list(order[:top])
    nz = np.flatnonzero(flat > 1e-12)
    if nz.size:
        coords.extend(rng.choice(nz, size=min(extra, nz.size), replace=False).tolist())
    seen = set()
    out = []
    for c in coords:
        if c not in seen:
            seen.add(c)
            out.append(np.unravel_index(int(c), grad.shape))
    return out


def check_grad_array(fn, arr: np.ndarray, grad: np.ndarray, rng: np.random.Generator,
                     eps: float = 1e-6, tol: float = 1e-4, top: int = 3, extra: int = 2):
    """Compare analytic grad against central differences at selected coords.

    Returns the worst relative error seen; raises AssertionError past tol.
    """
    worst = 0.0
    for idx in pick_coords(grad, rng, top, extra):
        fd = central_diff(fn, arr, idx, eps)
        err = rel_err(float(grad[idx]), fd)
        worst = max(worst, err)
        assert err < tol, (f"gradient mismatch at {idx}: analytic {grad[idx]:.9g}, "
                           f"numeric {fd:.9g}, rel err {err:.3e}")
    return worst
