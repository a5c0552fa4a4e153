"""Radial interaction-kernel gradients shared by the simulator and the trial library.

Every gradient returned here maps an array of offsets ``(..., d)`` to an array
of the same shape and returns exactly zero at the zero offset.
"""

from __future__ import annotations

import math

import numba
import numpy as np

LOG_CUTOFF_DELTA = 0.01


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def _unit(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        u = x / r[..., None]
    u[r == 0] = 0.0
    return u


def power_grad(m: float):
    """Gradient of ``|x|**m``."""

    def grad(x):
        x = np.asarray(x, dtype=float)
        r = _norm(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = m * r ** (m - 1)
            out = g[..., None] * _unit(x, r)
        out[r == 0] = 0.0
        return out

    return grad


def cutoff_grad(fprime, delta: float = LOG_CUTOFF_DELTA):
    """Gradient of the cutoff ``[f(|x|)]_delta``.

    Inside ``|x| < delta`` the potential is continued linearly in ``|x|`` with
    slope ``f'(delta)``, so the gradient there is ``f'(delta) x/|x|``.
    """
    slope_in = float(fprime(delta))

    def grad(x):
        x = np.asarray(x, dtype=float)
        r = _norm(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(r >= delta, fprime(np.maximum(r, delta)), slope_in)
        return g[..., None] * _unit(x, r)

    return grad


def cutoff_potential(f, fprime, delta: float = LOG_CUTOFF_DELTA):
    """The cutoff potential itself, as a function of ``|x|``."""
    f_d, s_d = float(f(delta)), float(fprime(delta))

    def pot(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            outer = f(np.maximum(r, delta))
        return np.where(r >= delta, outer, f_d + s_d * (r - delta))

    return pot


def log_fprime(r):
    return 1.0 / r


def sqrt_fprime(r):
    return 0.5 / np.sqrt(r)


def rlog_fprime(r):
    return np.log(r)


def qanr_grad(x):
    """Gradient of ``x**2/2 - |x|`` in one dimension."""
    x = np.asarray(x, dtype=float)
    return x - np.sign(x)


def qanr_potential(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * x**2 - np.abs(x)


def log2d_grad(delta: float = LOG_CUTOFF_DELTA):
    """Gradient of ``(1/2pi) [log|x|]_delta``."""
    base = cutoff_grad(log_fprime, delta)

    def grad(x):
        return base(x) / (2.0 * math.pi)

    return grad


def log2d_potential(delta: float = LOG_CUTOFF_DELTA):
    base = cutoff_potential(np.log, log_fprime, delta)

    def pot(r):
        return base(r) / (2.0 * math.pi)

    return pot


def qanr_mean_force(x: np.ndarray) -> np.ndarray:
    """Mean pairwise QANR force ``(1/N) sum_j grad K(x_i - x_j)`` for 1D particles.

    Uses ``sum_j sign(x_i - x_j) = #{x_j < x_i} - #{x_j > x_i}`` so the cost is a
    sort instead of an N x N table.
    """
    x1 = x[:, 0]
    n = x1.size
    srt = np.sort(x1)
    below = np.searchsorted(srt, x1, side="left")
    above = n - np.searchsorted(srt, x1, side="right")
    f = x1 - x1.mean() - (below - above) / n
    return f[:, None]


@numba.njit(cache=True)
def _log2d_mean_force(X, delta):
    n = X.shape[0]
    F = np.zeros_like(X)
    c = 1.0 / (2.0 * np.pi)
    d2 = delta * delta
    for i in range(n):
        xi = X[i, 0]
        yi = X[i, 1]
        fx = 0.0
        fy = 0.0
        for j in range(i + 1, n):
            dx = xi - X[j, 0]
            dy = yi - X[j, 1]
            r2 = dx * dx + dy * dy
            if r2 == 0.0:
                continue
            if r2 >= d2:
                s = c / r2
            else:
                s = c / (delta * np.sqrt(r2))
            fx += s * dx
            fy += s * dy
            F[j, 0] -= s * dx
            F[j, 1] -= s * dy
        F[i, 0] += fx
        F[i, 1] += fy
    return F / n


def log2d_mean_force(delta: float = LOG_CUTOFF_DELTA):
    def force(x):
        return _log2d_mean_force(np.ascontiguousarray(x, dtype=np.float64), delta)

    return force
