"""Domain-adaptive training loop and batched evaluation.

Each step pairs one source and one target mini-batch, casts each as its
own ring graph, and combines task cross-entropy (source only), adversarial
domain losses through the gradient-reversal stage, and the statistical
alignment terms computed on the tapped embeddings of both batches.  Source
and target orders are shuffled independently per epoch; the shorter batch
stream cycles so every step has a pair.  Given one seed the whole run is
deterministic, including emitted checkpoint bytes.

Target labels are never read here; they may be consumed only by explicit
evaluation on a labeled dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bank import PrototypeBank
from .data import Dataset, make_batches
from .errors import ConfigError, DataError, EvalError
from .graph import build_ring
from .losses import (
    HISTORY_HEADER,
    KernelConfig,
    LossReport,
    coral_loss,
    domain_loss,
    history_row,
    mmd_loss,
    task_loss,
    total_loss,
)
from .metrics import ConfusionMatrix, Metrics, confusion, summarize
from .model import ModelParams, backward_full, forward_full, init_params, save_checkpoint
from .optim import AdamWState, ScheduleConfig, adamw_step, lr_at

# XOR salt decorrelating the target shuffle stream from the source stream.
TARGET_SHUFFLE_SALT = 0x9E3779B97F4A7C15


@dataclass
class TrainConfig:
    """Training hyperparameters; the defaults reproduce the reference
    configuration (batch 64, 32 epochs, lr 1e-4 with 5-epoch warm-up and
    27-epoch cosine annealing, 4 attention heads, unit reversal and
    alignment weights)."""

    batch_size: int = 64
    epochs: int = 32
    grl_lambda: float = 1.0
    align_lambda: float = 1.0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    use_grl: bool = True
    use_coral: bool = True
    use_mmd: bool = True
    use_gat: bool = True
    self_loops: bool = False
    dim_hidden: int = 512
    num_heads: int = 4
    dim_domain_hidden: int = 128
    leaky_slope: float = 0.2
    activation: str = "leaky_relu"
    domain_tap: str = "post_gat"
    kernel: KernelConfig = field(default_factory=KernelConfig)
    bank_momentum: float = 0.9
    bank_slots: int = 1

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        self.schedule.validate()
        if self.epochs != self.schedule.total_epochs:
            raise ConfigError(
                f"epochs ({self.epochs}) must match the schedule's total "
                f"({self.schedule.total_epochs})"
            )
        self.kernel.validate()


@dataclass(frozen=True)
class HistoryStep:
    epoch: int
    step: int
    report: LossReport
    lr: float


@dataclass
class TrainHistory:
    """Per-step loss rows plus per-epoch evaluation metrics when an eval
    set was supplied; rows are strictly ordered by (epoch, step)."""

    steps: list[HistoryStep] = field(default_factory=list)
    evals: list[tuple[int, Metrics]] = field(default_factory=list)

    def csv_lines(self) -> list[str]:
        lines = [HISTORY_HEADER]
        lines.extend(
            history_row(item.step, item.epoch, item.report, item.lr) for item in self.steps
        )
        return lines

    def write_csv(self, path) -> None:
        Path(path).write_text("\n".join(self.csv_lines()) + "\n")


@dataclass
class EvalResult:
    metrics: Metrics
    confusion: ConfusionMatrix
    predictions: np.ndarray
    probabilities: np.ndarray


@dataclass
class TrainResult:
    params: ModelParams
    history: TrainHistory
    bank: PrototypeBank


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _tap_embeddings(state, params: ModelParams) -> np.ndarray:
    return state.post_gat if params.domain_tap == "post_gat" else state.projected


def _tap_argument(params: ModelParams) -> str:
    return "d_post_gat" if params.domain_tap == "post_gat" else "d_post_projection"


def train(
    source: Dataset,
    target: Dataset,
    config: TrainConfig,
    eval_dataset: Dataset | None = None,
    checkpoint_dir=None,
) -> TrainResult:
    """Run the full adaptation loop and return the trained model, the loss
    history, and the prototype bank accumulated from source batches.

    With every alignment component disabled the loop degenerates to
    source-only supervised training and never touches the target features.
    When ``checkpoint_dir`` is set, a checkpoint is written per epoch plus
    ``checkpoint_best.bin`` tracking evaluation accuracy.
    """
    config.validate()
    if len(source) < 2 or len(target) < 2:
        raise DataError("need at least 2 records per domain")
    if not source.is_fully_labeled:
        raise DataError("every source record must carry a label")
    if source.dim != target.dim:
        raise ConfigError(f"domain dims differ: {source.dim} vs {target.dim}")
    if source.num_classes != target.num_classes:
        raise ConfigError(
            f"domain class counts differ: {source.num_classes} vs {target.num_classes}"
        )

    params = init_params(
        dim_in=source.dim,
        num_classes=source.num_classes,
        dim_hidden=config.dim_hidden,
        num_heads=config.num_heads,
        dim_domain_hidden=config.dim_domain_hidden,
        seed=config.seed,
        grl_lambda=config.grl_lambda,
        activation=config.activation,
        domain_tap=config.domain_tap,
        use_gat=config.use_gat,
        self_loops=config.self_loops,
        leaky_slope=config.leaky_slope,
    )
    opt_state = AdamWState.for_params(params)
    bank = PrototypeBank(
        source.num_classes, config.dim_hidden, config.bank_slots, config.bank_momentum
    )
    history = TrainHistory()
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    needs_target = config.use_grl or config.use_coral or config.use_mmd
    target_seed = config.seed ^ TARGET_SHUFFLE_SALT
    tap_arg = _tap_argument(params)
    best_accuracy = -1.0

    for epoch in range(config.epochs):
        lr = lr_at(epoch, config.schedule)
        source_batches = make_batches(source, config.batch_size, config.seed, epoch)
        if not source_batches:
            raise DataError("source domain yields no usable batch")
        if needs_target:
            target_batches = make_batches(target, config.batch_size, target_seed, epoch)
            if not target_batches:
                raise DataError("target domain yields no usable batch")
            steps = max(len(source_batches), len(target_batches))
        else:
            target_batches = []
            steps = len(source_batches)

        for step in range(steps):
            source_idx = source_batches[step % len(source_batches)]
            state_s = forward_full(
                source.features[source_idx],
                params,
                build_ring(len(source_idx), params.self_loops),
            )
            task_value, d_task = task_loss(state_s.task_logits, source.labels[source_idx])

            dom_s_value = dom_t_value = coral_value = mmd_value = 0.0
            d_dom_s = d_dom_t = None
            align_grad_s = align_grad_t = None
            coral_skipped = False
            state_t = None

            if needs_target:
                target_idx = target_batches[step % len(target_batches)]
                state_t = forward_full(
                    target.features[target_idx],
                    params,
                    build_ring(len(target_idx), params.self_loops),
                )
                tap_s = _tap_embeddings(state_s, params)
                tap_t = _tap_embeddings(state_t, params)
                if config.use_grl:
                    dom_s_value, d_dom_s = domain_loss(state_s.domain_logits, 0)
                    dom_t_value, d_dom_t = domain_loss(state_t.domain_logits, 1)
                if config.use_coral or config.use_mmd:
                    align_grad_s = np.zeros_like(tap_s)
                    align_grad_t = np.zeros_like(tap_t)
                if config.use_coral:
                    if len(tap_s) >= 2 and len(tap_t) >= 2:
                        coral_value, grad_s, grad_t = coral_loss(tap_s, tap_t)
                        align_grad_s += config.align_lambda * grad_s
                        align_grad_t += config.align_lambda * grad_t
                    else:
                        coral_skipped = True
                if config.use_mmd:
                    mmd_value, grad_s, grad_t = mmd_loss(tap_s, tap_t, config.kernel)
                    align_grad_s += config.align_lambda * grad_s
                    align_grad_t += config.align_lambda * grad_t

            backward_kwargs = {"d_task_logits": d_task}
            if d_dom_s is not None:
                backward_kwargs["d_domain_logits"] = d_dom_s
            if align_grad_s is not None:
                backward_kwargs[tap_arg] = align_grad_s
            grads, _ = backward_full(state_s, params, **backward_kwargs)

            if state_t is not None and (d_dom_t is not None or align_grad_t is not None):
                target_kwargs = {}
                if d_dom_t is not None:
                    target_kwargs["d_domain_logits"] = d_dom_t
                if align_grad_t is not None:
                    target_kwargs[tap_arg] = align_grad_t
                target_grads, _ = backward_full(state_t, params, **target_kwargs)
                for name in grads:
                    grads[name] += target_grads[name]

            adamw_step(
                params,
                grads,
                opt_state,
                lr,
                beta1=config.beta1,
                beta2=config.beta2,
                eps=config.eps,
                weight_decay=config.weight_decay,
            )
            bank.update(state_s.post_gat, source.labels[source_idx])
            report = total_loss(
                task_value,
                dom_s_value,
                dom_t_value,
                coral_value,
                mmd_value,
                config.align_lambda,
                coral_skipped=coral_skipped,
            )
            history.steps.append(HistoryStep(epoch=epoch, step=step, report=report, lr=lr))

        if checkpoint_dir is not None:
            save_checkpoint(params, checkpoint_dir / f"checkpoint_{epoch:03d}.bin")
        if eval_dataset is not None:
            result = evaluate(params, eval_dataset, config.batch_size)
            history.evals.append((epoch, result.metrics))
            if result.metrics.accuracy > best_accuracy:
                best_accuracy = result.metrics.accuracy
                if checkpoint_dir is not None:
                    save_checkpoint(params, checkpoint_dir / "checkpoint_best.bin")

    return TrainResult(params=params, history=history, bank=bank)


def evaluate(params: ModelParams, dataset: Dataset, batch_size: int = 64) -> EvalResult:
    """Deterministic batched evaluation over unshuffled ring graphs.

    Records are chunked in order; a trailing chunk of one record is folded
    into the previous batch so nothing is dropped (rings need two nodes).
    """
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    n = len(dataset)
    if n == 0:
        raise EvalError("cannot evaluate an empty dataset")
    if not dataset.is_fully_labeled:
        raise EvalError("evaluation needs a label on every record")
    if n == 1:
        raise EvalError("cannot build a batch graph over a single record")
    if params.dim_in != dataset.dim:
        raise ConfigError(
            f"model expects {params.dim_in}-dim features, dataset has {dataset.dim}"
        )
    if params.num_classes != dataset.num_classes:
        raise ConfigError(
            f"model has {params.num_classes} classes, dataset declares {dataset.num_classes}"
        )

    bounds = list(range(0, n, batch_size)) + [n]
    if n % batch_size == 1:
        bounds.pop(-2)  # merge the trailing singleton into the last batch

    probabilities = np.empty((n, params.num_classes))
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        state = forward_full(
            dataset.features[lo:hi], params, build_ring(hi - lo, params.self_loops)
        )
        probabilities[lo:hi] = _softmax_rows(state.task_logits)
    predictions = probabilities.argmax(axis=1)
    cm = confusion(dataset.labels, predictions, params.num_classes)
    metrics = summarize(cm, probabilities, dataset.labels)
    return EvalResult(
        metrics=metrics, confusion=cm, predictions=predictions, probabilities=probabilities
    )
