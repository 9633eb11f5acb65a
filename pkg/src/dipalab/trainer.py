"""Mini-batch training with optional Dirichlet prior augmentation.

One pseudo-prior is drawn per optimization step and shared by the whole
mini-batch. Validation always uses the unadjusted logits. Early stopping
watches validation loss; the returned parameters are those of the
best-validation-loss epoch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import augment
from .augment import DipaConfig
from .data import TimeSeriesSample, validation_subset
from .metrics import confusion_matrix, summarize
from .model import ModelConfig, Parameters, backward, forward, init_parameters, pack, predict_logits, reset_head

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 42, 123, 1234)

PriorSampler = Callable[[int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "ce"
    focal_gamma: float = 2.0
    dipa: DipaConfig = field(default_factory=DipaConfig)
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 15
    seed: int = 0
    validation_subsample: int = 1000

    def __post_init__(self):
        if self.loss_kind not in augment.LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {augment.LOSS_KINDS}")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")
        if self.validation_subsample < 1:
            raise ValueError("validation_subsample must be >= 1")


@dataclass
class TrainTrace:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_acc_epoch: int = 0
    stop_reason: str = ""
    error: str | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.epochs)

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss,val_acc"]
        for e, tl, vl, va in zip(self.epochs, self.train_loss, self.val_loss, self.val_acc):
            rows.append(f"{e},{tl!r},{vl!r},{va!r}")
        rows.append(f"# best_epoch={self.best_epoch} best_acc_epoch={self.best_acc_epoch} stop={self.stop_reason}")
        if self.error:
            rows.append(f"# error={self.error}")
        return "\n".join(rows) + "\n"


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, trace: TrainTrace):
        super().__init__(msg)
        self.trace = trace


class EarlyStopping:
    """Stop once ``patience`` epochs pass without a strict val-loss improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0

    def update(self, epoch: int, val_loss: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if val_loss < self.best:
            self.best, self.best_epoch = val_loss, epoch
            return True, False
        return False, epoch - self.best_epoch >= self.patience


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Parameters) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, w in params.tensors.items():
            g = params.grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            elif self.m[name].shape != w.shape:
                raise ValueError(f"optimizer state for {name} has shape {self.m[name].shape}, parameter {w.shape}")
            if g.shape != w.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            w -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(params: Parameters, state: Adam) -> Parameters:
    state.step(params)
    return params


def _labels(samples) -> np.ndarray:
    return np.array([s.label for s in samples], dtype=np.intp)


def _dirichlet_sampler(dipa: DipaConfig) -> PriorSampler:
    return lambda k, rng: augment.sample_pseudo_prior(dipa, k, rng)


def uniform_prior(k: int, rng: np.random.Generator) -> np.ndarray:
    return np.full(k, 1.0 / k)


def evaluation_loss(params: Parameters, model_cfg: ModelConfig, samples, cfg: TrainConfig):
    """(mean loss, accuracy) on unadjusted logits."""
    logits = predict_logits(params, model_cfg, samples)
    y = _labels(samples)
    losses = augment.loss(logits, y, cfg.loss_kind, cfg.focal_gamma)
    return float(losses.mean()), float(np.mean(logits.argmax(-1) == y))


def train(
    params: Parameters,
    episode: list[TimeSeriesSample],
    validation: list[TimeSeriesSample],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    prior_sampler: PriorSampler | None = None,
) -> tuple[Parameters, TrainTrace]:
    """Train a copy of ``params``; returns the best-val-loss parameters and the trace."""
    if not episode:
        raise ValueError("empty training episode")
    if not validation:
        raise ValueError("empty validation set")
    k = params.num_classes()
    if any(s.label >= k for s in episode):
        raise ValueError("episode contains labels outside the head's class range")
    params = params.copy()
    val = validation_subset(validation, cfg.validation_subsample, seed=cfg.seed)
    labels = _labels(episode)
    opt = Adam(cfg.learning_rate)
    sampler = prior_sampler or _dirichlet_sampler(cfg.dipa)
    prior_rng = np.random.default_rng([cfg.seed, 2])
    stopper = EarlyStopping(cfg.patience)
    trace = TrainTrace()
    best = params.copy()
    best_acc = -1.0
    n = len(episode)

    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = forward(pack([episode[i] for i in idx]), params, model_cfg)
            if not np.all(np.isfinite(logits)):
                trace.stop_reason, trace.error = "diverged", f"non-finite logits at epoch {epoch}"
                raise TrainingDiverged(trace.error, trace)
            if cfg.dipa.enabled:
                logits = augment.adjust_logits(logits, sampler(k, prior_rng), cfg.dipa.tau)
            y = labels[idx]
            losses = augment.loss(logits, y, cfg.loss_kind, cfg.focal_gamma)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                trace.stop_reason, trace.error = "diverged", f"non-finite loss at epoch {epoch}"
                raise TrainingDiverged(trace.error, trace)
            grad = augment.loss_gradient_wrt_logits(logits, y, cfg.loss_kind, cfg.focal_gamma) / len(idx)
            params.zero_grad()
            backward(cache, grad, params)
            opt.step(params)
            total += float(losses.sum())

        val_loss, val_acc = evaluation_loss(params, model_cfg, val, cfg)
        if not np.isfinite(val_loss):
            trace.stop_reason, trace.error = "diverged", f"non-finite validation loss at epoch {epoch}"
            raise TrainingDiverged(trace.error, trace)
        trace.epochs.append(epoch)
        trace.train_loss.append(total / n)
        trace.val_loss.append(val_loss)
        trace.val_acc.append(val_acc)
        if val_acc > best_acc:
            best_acc, trace.best_acc_epoch = val_acc, epoch
        improved, stop = stopper.update(epoch, val_loss)
        if improved:
            best = params.copy()
            trace.best_epoch = epoch
        log.debug("epoch %d train %.4f val %.4f acc %.4f", epoch, total / n, val_loss, val_acc)
        if stop:
            trace.stop_reason = "early_stopping"
            break
    else:
        trace.stop_reason = "max_epochs"
    return best, trace


def evaluate(params: Parameters, model_cfg: ModelConfig, samples) -> tuple[np.ndarray, list[int], dict[str, float]]:
    """Confusion matrix over the union of true and predicted classes, plus metrics."""
    logits = predict_logits(params, model_cfg, samples)
    cm, labels = confusion_matrix(_labels(samples), logits.argmax(-1))
    return cm, labels, summarize(cm)


def pretrain_then_finetune(
    source_train: list[TimeSeriesSample],
    source_val: list[TimeSeriesSample],
    target_episode: list[TimeSeriesSample],
    target_val: list[TimeSeriesSample],
    source_model: ModelConfig,
    target_classes: int,
    pretrain_cfg: TrainConfig,
    finetune_cfg: TrainConfig,
    pretrained: Parameters | None = None,
) -> tuple[Parameters, TrainTrace, Parameters]:
    """Supervised source run, head reset to ``target_classes``, then end-to-end fine-tuning.

    Returns (fine-tuned params, fine-tuning trace, pretrained params). Pass
    ``pretrained`` to reuse an existing source model and skip the first stage.
    """
    d_src = source_train[0].values.shape[1] if source_train else source_model.channels
    d_tgt = target_episode[0].values.shape[1]
    if d_src != d_tgt or source_model.channels != d_tgt:
        raise ValueError(f"channel mismatch: source has {d_src}, target {d_tgt}")
    if pretrained is None:
        init = init_parameters(source_model, np.random.default_rng([pretrain_cfg.seed, 0]))
        pretrained, _ = train(init, source_train, source_val, pretrain_cfg, source_model)
    head_rng = np.random.default_rng([finetune_cfg.seed, 3])
    start = reset_head(pretrained, head_rng, target_classes)
    target_model = ModelConfig(**{**source_model.__dict__, "num_classes": target_classes})
    tuned, trace = train(start, target_episode, target_val, finetune_cfg, target_model)
    return tuned, trace, pretrained
