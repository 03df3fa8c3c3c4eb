"""
Heat Kernel for HeatCluster
Free-space fundamental solution of the 3-D heat operator, its gradient and
the closed-form time integrals used as product-integration weights.

All functions are pure and vectorized over numpy arrays.
"""

import math
from typing import Union

import numpy as np
from scipy import integrate, special

from utils.errors import KernelError


ArrayLike = Union[float, np.ndarray]

# exp() arguments below this are flushed to zero
UNDERFLOW_EXPONENT = -700.0

FOUR_PI = 4.0 * math.pi
SQRT_PI = math.sqrt(math.pi)


# ==========================================
# POINT EVALUATION
# ==========================================

def phi_many(r: ArrayLike, elapsed: ArrayLike) -> np.ndarray:
    """
    Phi at distance r after elapsed time s = t - tau.

    Returns zero wherever s <= 0 or the Gaussian underflows.
    """
    r, elapsed = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(elapsed, dtype=float))
    out = np.zeros(r.shape)
    positive = elapsed > 0
    if not np.any(positive):
        return out

    s = elapsed[positive]
    exponent = -np.square(r[positive]) / (4.0 * s)
    values = np.zeros(s.shape)
    live = exponent >= UNDERFLOW_EXPONENT
    values[live] = np.power(FOUR_PI * s[live], -1.5) * np.exp(exponent[live])
    out[positive] = values
    return out


def eval_phi(x, t: float, y, tau: float) -> float:
    """Phi(x, t; y, tau); exactly zero for t <= tau"""
    if t <= tau:
        return 0.0
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return float(phi_many(r, t - tau))


def eval_grad_phi(x, t: float, y, tau: float) -> np.ndarray:
    """
    Spatial gradient in x: -(x - y) / (2 (t - tau)) * Phi.

    Returns the zero vector for t <= tau.
    """
    offset = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if t <= tau:
        return np.zeros(3)
    value = phi_many(np.linalg.norm(offset), t - tau)
    return -offset / (2.0 * (t - tau)) * float(value)


# ==========================================
# TIME INTEGRALS
# ==========================================

def cumulative_phi(r: ArrayLike, elapsed: ArrayLike) -> np.ndarray:
    """
    Integral of Phi(r; u) for u in [0, s]: erfc(r / (2 sqrt(s))) / (4 pi r).

    Zero for s <= 0. Requires r > 0 wherever s > 0.
    """
    r, elapsed = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(elapsed, dtype=float))
    out = np.zeros(r.shape)
    positive = elapsed > 0
    if np.any(positive):
        rr = r[positive]
        out[positive] = special.erfc(rr / (2.0 * np.sqrt(elapsed[positive]))) / (FOUR_PI * rr)
    return out


def time_integral_phi(r: float, t0: float, t1: float, t: float) -> float:
    """
    Integral of Phi(r; t - tau) for tau in [t0, t1], in closed form.

    The part of the interval beyond t contributes nothing.

    Raises:
        KernelError: "degenerate distance" for r <= 0,
            "inverted interval" for t1 < t0
    """
    if not r > 0:
        raise KernelError("degenerate distance", {'r': r})
    if t1 < t0:
        raise KernelError("inverted interval", {'t0': t0, 't1': t1})
    return float(cumulative_phi(r, t - t0) - cumulative_phi(r, t - t1))


def time_integral_phi_many(r: ArrayLike, t0: ArrayLike, t1: ArrayLike, t: ArrayLike) -> np.ndarray:
    """
    Elementwise time_integral_phi.

    Entries with r <= 0 are allowed only where the interval is empty.
    """
    r, t0, t1, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, t0, t1, t)))
    if np.any(t1 < t0):
        raise KernelError("inverted interval")
    empty = t1 == t0
    if np.any((r <= 0) & ~empty):
        raise KernelError("degenerate distance")
    out = np.zeros(r.shape)
    live = ~empty
    if np.any(live):
        out[live] = (cumulative_phi(r[live], t[live] - t0[live])
                     - cumulative_phi(r[live], t[live] - t1[live]))
    return out


def lag_weights(r: ArrayLike, dt: float, n_lags: int) -> np.ndarray:
    """
    Weights of a piecewise-constant history at lags 0..n_lags-1.

    Entry [l, ...] integrates Phi(r; t_k - tau) over the interval
    (t_{k-l-1}, t_{k-l}], i.e. G((l+1) dt) - G(l dt) with G = cumulative_phi.
    """
    r = np.asarray(r, dtype=float)
    edges = np.arange(n_lags + 1) * dt
    cumulative = cumulative_phi(r[None, ...], edges.reshape((-1,) + (1,) * r.ndim))
    return np.diff(cumulative, axis=0)


# ==========================================
# SINGULAR SELF WEIGHTS
# ==========================================

def _disk_cumulative(rho: ArrayLike, elapsed: ArrayLike) -> np.ndarray:
    """Integral of cumulative_phi over a disk of radius rho, seen from its centre"""
    rho, elapsed = np.broadcast_arrays(np.asarray(rho, dtype=float), np.asarray(elapsed, dtype=float))
    out = np.zeros(elapsed.shape)
    positive = elapsed > 0
    root = np.sqrt(elapsed[positive])
    X = rho[positive] / (2.0 * root)
    out[positive] = root * (X * special.erfc(X) - np.exp(-X * X) / SQRT_PI + 1.0 / SQRT_PI)
    return out


def _ball_cumulative(rho: ArrayLike, elapsed: ArrayLike) -> np.ndarray:
    """Integral of cumulative_phi over a ball of radius rho, seen from its centre"""
    rho, elapsed = np.broadcast_arrays(np.asarray(rho, dtype=float), np.asarray(elapsed, dtype=float))
    out = np.zeros(elapsed.shape)
    positive = elapsed > 0
    s = elapsed[positive]
    X = rho[positive] / (2.0 * np.sqrt(s))
    out[positive] = 4.0 * s * (
        0.5 * X * X * special.erfc(X)
        + 0.25 * special.erf(X)
        - X * np.exp(-X * X) / (2.0 * SQRT_PI)
    )
    return out


def disk_time_weight(rho: ArrayLike, s0: ArrayLike, s1: ArrayLike) -> np.ndarray:
    """
    Integral over a flat disk of radius rho (evaluated at its centre) of the
    time-integrated kernel for lags t - tau in [s0, s1].

    Tends to the static value rho / 2 as s1 grows with s0 = 0.
    """
    if np.any(np.asarray(rho) <= 0):
        raise KernelError("degenerate distance", {'rho': rho})
    return _disk_cumulative(rho, s1) - _disk_cumulative(rho, s0)


def ball_time_weight(rho: ArrayLike, s0: ArrayLike, s1: ArrayLike) -> np.ndarray:
    """Same as disk_time_weight for a solid ball; static limit rho^2 / 2"""
    if np.any(np.asarray(rho) <= 0):
        raise KernelError("degenerate distance", {'rho': rho})
    return _ball_cumulative(rho, s1) - _ball_cumulative(rho, s0)


def disk_lag_weights(rho: float, dt: float, n_lags: int) -> np.ndarray:
    edges = np.arange(n_lags + 1) * dt
    return np.diff(_disk_cumulative(rho, edges))


def ball_lag_weights(rho: float, dt: float, n_lags: int) -> np.ndarray:
    edges = np.arange(n_lags + 1) * dt
    return np.diff(_ball_cumulative(rho, edges))


# ==========================================
# NORMS
# ==========================================

def kernel_l2_norm(r: float, horizon: float, tolerance: float = 1e-10) -> float:
    """
    (int_0^T int_0^t Phi(r; t - tau)^2 dtau dt)^(1/2).

    The double integral collapses to int_0^T (T - s) Phi(r; s)^2 ds.
    """
    if not r > 0:
        raise KernelError("degenerate distance", {'r': r})
    if horizon <= 0:
        return 0.0

    def integrand(s: float) -> float:
        return (horizon - s) * float(phi_many(r, s)) ** 2

    # Phi(r; s)^2 peaks at s = r^2 / 3
    peak = r * r / 3.0
    points = [peak] if 0 < peak < horizon else None
    value, _ = integrate.quad(integrand, 0.0, horizon, points=points,
                              epsabs=0.0, epsrel=tolerance, limit=200)
    return math.sqrt(value)
