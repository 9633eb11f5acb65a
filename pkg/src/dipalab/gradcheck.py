"""Central finite-difference check of the model's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import augment
from .model import ModelConfig, Parameters, backward, forward, init_parameters, pack

TINY_MODEL = ModelConfig(channels=3, embed_dim=8, num_heads=2, ffn_hidden=16, num_blocks=1, num_classes=4)


@dataclass
class GradcheckReport:
    loss_kind: str
    gamma: float
    adjusted: bool
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.worst <= tol


def random_batch(cfg: ModelConfig, rng: np.random.Generator, lengths=(6, 6, 4)):
    samples = []
    for n in lengths:
        days = np.sort(rng.choice(cfg.max_len, size=n, replace=False))
        samples.append(SimpleNamespace(values=rng.normal(size=(n, cfg.channels)), days=days))
    return pack(samples)


def perturbed_parameters(cfg: ModelConfig, rng: np.random.Generator, scale: float = 0.3) -> Parameters:
    """Initial parameters plus noise, so biases and norm scales are non-trivial."""
    params = init_parameters(cfg, rng)
    for t in params.tensors.values():
        t += rng.normal(scale=scale, size=t.shape)
    return params


def check_gradients(
    loss_kind: str = "ce",
    gamma: float = 0.0,
    prior: np.ndarray | None = None,
    tau: float = 1.0,
    cfg: ModelConfig = TINY_MODEL,
    coords_per_tensor: int = 50,
    h: float = 1e-5,
    floor: float = 1e-8,
    seed: int = 0,
) -> GradcheckReport:
    """Compare backprop gradients of the mean batch loss against central differences.

    ``prior`` switches on logit adjustment with that fixed pseudo-prior.
    Coordinates where both estimates are below ``floor`` in magnitude are
    skipped (true zeros, e.g. attention key biases).
    """
    rng = np.random.default_rng(seed)
    params = perturbed_parameters(cfg, rng)
    batch = random_batch(cfg, rng)
    y = rng.integers(0, cfg.num_classes, size=batch.size)

    def adjusted(z):
        return z if prior is None else augment.adjust_logits(z, prior, tau)

    def objective() -> float:
        z, _ = forward(batch, params, cfg)
        return float(augment.loss(adjusted(z), y, loss_kind, gamma).mean())

    z, cache = forward(batch, params, cfg)
    dz = augment.loss_gradient_wrt_logits(adjusted(z), y, loss_kind, gamma) / batch.size
    params.zero_grad()
    backward(cache, dz, params)

    report = GradcheckReport(loss_kind, gamma, prior is not None)
    for name, tensor in params.tensors.items():
        grad = params.grads[name]
        flat = tensor.reshape(-1)
        n = flat.size
        picks = np.arange(n) if n <= coords_per_tensor else rng.choice(n, size=coords_per_tensor, replace=False)
        worst, count = 0.0, 0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            fp = objective()
            flat[i] = orig - h
            fm = objective()
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            an = grad.reshape(-1)[i]
            scale = max(abs(fd), abs(an))
            if scale < floor:
                continue
            worst = max(worst, abs(fd - an) / scale)
            count += 1
        report.max_rel_error[name] = worst
        report.checked[name] = count
    return report


def standard_suite(seed: int = 0) -> list[GradcheckReport]:
    """CE and FL(gamma=2), each without and with a skewed pseudo-prior."""
    prior = np.array([0.55, 0.25, 0.15, 0.05])
    reports = []
    for kind, gamma in (("ce", 0.0), ("fl", 2.0)):
        for p in (None, prior):
            reports.append(check_gradients(kind, gamma, prior=p, tau=1.0, seed=seed))
    return reports
