"""AdamW with decoupled weight decay and the two-phase epoch schedule.

The schedule ramps linearly from lr_max/warmup to lr_max over the warm-up
epochs, then follows cosine annealing down to eta_min over the remaining
epochs.  Both phases meet at lr_max, so the curve is continuous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ScheduleError, ShapeError


@dataclass(frozen=True)
class ScheduleConfig:
    lr_max: float = 1e-4
    warmup_epochs: int = 5
    cosine_epochs: int = 27
    total_epochs: int = 32
    eta_min: float = 0.0

    def validate(self) -> None:
        if self.warmup_epochs < 0 or self.cosine_epochs < 1:
            raise ConfigError("warmup_epochs must be >= 0 and cosine_epochs >= 1")
        if self.warmup_epochs + self.cosine_epochs != self.total_epochs:
            raise ConfigError(
                f"warmup ({self.warmup_epochs}) + cosine ({self.cosine_epochs}) "
                f"must equal total_epochs ({self.total_epochs})"
            )
        if not (np.isfinite(self.lr_max) and self.lr_max > 0):
            raise ConfigError(f"lr_max must be positive, got {self.lr_max}")
        if not (np.isfinite(self.eta_min) and 0 <= self.eta_min <= self.lr_max):
            raise ConfigError(f"eta_min must lie in [0, lr_max], got {self.eta_min}")


def lr_at(epoch: int, config: ScheduleConfig) -> float:
    """Learning rate for an epoch index.

    Warm-up epoch e gives lr_max * (e + 1) / warmup (so epoch warmup-1
    reaches lr_max exactly); cosine epoch e gives
    eta_min + (lr_max - eta_min) * (1 + cos(pi (e - warmup) / cosine)) / 2.
    """
    config.validate()
    if not 0 <= epoch < config.total_epochs:
        raise ScheduleError(
            f"epoch {epoch} outside the configured range [0, {config.total_epochs})"
        )
    if epoch < config.warmup_epochs:
        return config.lr_max * (epoch + 1) / config.warmup_epochs
    phase = np.pi * (epoch - config.warmup_epochs) / config.cosine_epochs
    return config.eta_min + 0.5 * (config.lr_max - config.eta_min) * (1.0 + np.cos(phase))


@dataclass
class AdamWState:
    """First/second moment accumulators per tensor plus the step counter."""

    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamWState":
        first = {name: np.zeros_like(t) for name, t in params.tensors()}
        second = {name: np.zeros_like(t) for name, t in params.tensors()}
        return cls(first=first, second=second, step=0)


def adamw_step(
    params,
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """One in-place update.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta),
    with bias-corrected moments; the decay term is decoupled from the
    adaptive term, so with zero gradient the update is a pure shrink.
    """
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, tensor in params.tensors():
        grad = grads[name]
        if grad.shape != tensor.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match tensor {name} {tensor.shape}"
            )
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient for tensor {name}")
        m = state.first[name]
        v = state.second[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        tensor -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * tensor)
