"""Dirichlet prior augmentation: logit adjustment and the losses on adjusted logits.

All functions take logits of shape ``(K,)`` or ``(B, K)`` and integer labels
(0-based). Losses are evaluated through log-softmax, never by taking the
log of a normalized probability vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .dirichlet import sample_symmetric_dirichlet

LossKind = Literal["ce", "fl"]
LOSS_KINDS = ("ce", "fl")


@dataclass(frozen=True)
class DipaConfig:
    alpha: float = 1.0
    tau: float = 1.0
    enabled: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"dipa alpha must be positive, got {self.alpha!r}")
        if not (np.isfinite(self.tau) and self.tau >= 0):
            raise ValueError(f"dipa tau must be non-negative, got {self.tau!r}")


def _check_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return z


def _check_labels(y, z: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    k = z.shape[-1]
    if y.shape != z.shape[:-1]:
        raise ValueError(f"labels shape {y.shape} does not match logits {z.shape}")
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    return y.astype(np.intp)


def log_softmax(z) -> np.ndarray:
    z = _check_logits(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z) -> np.ndarray:
    z = _check_logits(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def adjust_logits(z, prior, tau: float) -> np.ndarray:
    """z + tau * log(prior), broadcast over a leading batch axis."""
    z = _check_logits(z)
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape[-1] != z.shape[-1]:
        raise ValueError(f"prior length {prior.shape[-1]} != logit length {z.shape[-1]}")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if np.any(prior <= 0):
        raise ValueError("prior components must be strictly positive")
    return z + tau * np.log(prior)


def sample_pseudo_prior(cfg: DipaConfig, k: int, rng: np.random.Generator) -> np.ndarray:
    return sample_symmetric_dirichlet(cfg.alpha, k, rng)


def _label_log_prob(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    lp = log_softmax(z)
    return np.take_along_axis(lp, y[..., None], axis=-1)[..., 0]


def cross_entropy(z, y) -> np.ndarray:
    """Per-sample -log softmax(z)_y."""
    z = _check_logits(z)
    y = _check_labels(y, z)
    return -_label_log_prob(z, y)


def focal_loss(z, y, gamma: float) -> np.ndarray:
    """Per-sample (1 - p_y)**gamma * -log p_y, without class weighting."""
    if gamma < 0:
        raise ValueError("focal gamma must be non-negative")
    z = _check_logits(z)
    y = _check_labels(y, z)
    logp = _label_log_prob(z, y)
    one_minus_p = -np.expm1(logp)
    return np.power(one_minus_p, gamma) * -logp


def loss(z, y, kind: LossKind, gamma: float = 0.0) -> np.ndarray:
    if kind == "ce":
        return cross_entropy(z, y)
    if kind == "fl":
        return focal_loss(z, y, gamma)
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_gradient_wrt_logits(z, y, kind: LossKind, gamma: float = 0.0) -> np.ndarray:
    """d loss_i / d z_i per sample, same shape as ``z``.

    Because the prior adjustment is additive, this is also the gradient
    with respect to the unadjusted logits.
    """
    z = _check_logits(z)
    y = _check_labels(y, z)
    p = softmax(z)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, y[..., None], 1.0, axis=-1)
    residual = p - onehot
    if kind == "ce":
        return residual
    if kind != "fl":
        raise ValueError(f"unknown loss kind {kind!r}")
    if gamma < 0:
        raise ValueError("focal gamma must be non-negative")
    logp = _label_log_prob(z, y)
    py = np.exp(logp)
    q = -np.expm1(logp)
    # dL/dz_c = [(1-p)^g - g (1-p)^(g-1) p log p] * (p_c - 1[c=y])
    if gamma == 0:
        scale = np.ones_like(q)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.where(q > 0, gamma * np.power(q, gamma - 1.0) * py * logp, 0.0)
        scale = np.power(q, gamma) - inner
    return scale[..., None] * residual
