"""Gamma and Dirichlet variates, plus the Dirichlet log-density.

Vectors are plain float64 numpy arrays. ``as_concentration`` and
``as_simplex`` validate and convert; everything else assumes valid input
after that point.
"""

from __future__ import annotations

import math

import numpy as np

SIMPLEX_FLOOR = 1e-12

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def as_concentration(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] < 2:
        raise ValueError(f"concentration vector needs K >= 2 components, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise ValueError("concentration components must be finite and strictly positive")
    return a


def as_simplex(x, atol: float = 1e-12) -> np.ndarray:
    p = np.asarray(x, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ValueError(f"simplex vector needs K >= 2 components, got shape {p.shape}")
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("simplex components must be strictly positive")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"simplex components must sum to 1, got {p.sum()!r}")
    return p


def log_gamma_fn(x):
    """log Gamma(x) for x > 0 using the Lanczos series (g=7, 9 terms)."""
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(x <= 0):
        raise ValueError("log_gamma_fn is defined here for positive arguments only")
    small = x < 0.5
    # reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
    z = np.where(small, 1.0 - x, x) - 1.0
    series = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        series = series + _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    lg = _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(series)
    if np.any(small):
        lg[small] = math.log(math.pi) - np.log(np.sin(math.pi * x[small])) - lg[small]
    return float(lg[0]) if scalar else lg


def _log_gamma_variates(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """log of Gamma(shape, 1) draws, element-wise over ``shape``.

    Marsaglia-Tsang squeeze; shapes below 1 are boosted through
    Gamma(a) = Gamma(a + 1) * U**(1/a), applied in log space so tiny
    shapes do not underflow before normalization.
    """
    shape = np.asarray(shape, dtype=np.float64)
    flat = shape.ravel()
    boost = flat < 1.0
    a = np.where(boost, flat + 1.0, flat)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(flat)
    pending = np.arange(flat.size)
    while pending.size:
        dp, cp = d[pending], c[pending]
        x = rng.standard_normal(pending.size)
        v = 1.0 + cp * x
        ok = v > 0
        v = np.where(ok, v * v * v, 1.0)
        u = rng.random(pending.size)
        x2 = x * x
        with np.errstate(divide="ignore"):
            accept = ok & (
                (u < 1.0 - 0.0331 * x2 * x2)
                | (np.log(u) < 0.5 * x2 + dp * (1.0 - v + np.log(v)))
            )
        done = pending[accept]
        out[done] = np.log(dp[accept]) + np.log(v[accept])
        pending = pending[~accept]
    if np.any(boost):
        idx = np.flatnonzero(boost)
        u = rng.random(idx.size)
        with np.errstate(divide="ignore"):
            out[idx] += np.log(u) / flat[idx]
    return out.reshape(shape.shape)


def sample_gamma(shape: float, rng: np.random.Generator, size=None):
    """Draw from Gamma(shape, scale=1).

    Returns a float when ``size`` is None, else an array of that size.
    Draws are strictly positive; values that would underflow are floored
    at the smallest normal float.
    """
    if not (np.isfinite(shape) and shape > 0):
        raise ValueError(f"gamma shape must be positive, got {shape!r}")
    n = 1 if size is None else size
    logs = _log_gamma_variates(np.full(n, float(shape)), rng)
    draws = np.maximum(np.exp(logs), np.finfo(np.float64).tiny)
    return float(draws[0]) if size is None else draws


def _normalize_log(log_g: np.ndarray) -> np.ndarray:
    m = log_g.max(axis=-1, keepdims=True)
    w = np.exp(log_g - m)
    x = w / w.sum(axis=-1, keepdims=True)
    if np.any(x < SIMPLEX_FLOOR):
        x = np.maximum(x, SIMPLEX_FLOOR)
        x = x / x.sum(axis=-1, keepdims=True)
    return x


def sample_dirichlet(alpha, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """One draw (``size=None``, shape ``(K,)``) or ``size`` draws ``(size, K)`` from Dir(alpha).

    Components are floored at 1e-12 and renormalized so their logs stay finite.
    """
    a = as_concentration(alpha)
    shape = a if size is None else np.broadcast_to(a, (size, a.shape[0]))
    return _normalize_log(_log_gamma_variates(shape, rng))


def sample_symmetric_dirichlet(
    alpha: float, k: int, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    if int(k) != k or k < 2:
        raise ValueError(f"symmetric Dirichlet needs k >= 2, got {k!r}")
    if not (np.isfinite(alpha) and alpha > 0):
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    return sample_dirichlet(np.full(int(k), float(alpha)), rng, size=size)


def log_beta(alpha) -> float:
    a = as_concentration(alpha)
    return float(np.sum(log_gamma_fn(a)) - log_gamma_fn(a.sum()))


def log_density(x, alpha) -> float:
    """log p(x | alpha) for x strictly inside the simplex."""
    a = as_concentration(alpha)
    p = np.asarray(x, dtype=np.float64)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: x has shape {p.shape}, alpha {a.shape}")
    if np.any(p <= 0):
        raise ValueError("log_density requires every x_c > 0")
    p = as_simplex(p)
    return float(-log_beta(a) + np.sum((a - 1.0) * np.log(p)))


def symmetric_variance(alpha: float, k: int) -> float:
    """Per-component variance of Dir(alpha * 1_k)."""
    return (k - 1) / (k * k * (k * alpha + 1.0))
