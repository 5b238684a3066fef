"""Unsupervised domain adaptation over embedding vectors.

The pipeline couples a projection encoder with batch-level ring-graph
attention and aligns source and target domains through a reversed-gradient
adversarial domain classifier plus covariance (CORAL) and kernel-mean
(MMD) alignment losses.  Single-query inference runs against a prototype
memory bank via a star graph.
"""

from .bank import PrototypeBank, infer_single, load_bank, save_bank, update_bank
from .data import (
    Dataset,
    EmbeddingRecord,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    make_batches,
    save_dataset,
)
from .graph import RingGraph, StarGraph, build_ring, build_star, cosine_similarity
from .losses import (
    DomainBatchStats,
    KernelConfig,
    LossReport,
    coral_loss,
    domain_loss,
    mmd_loss,
    task_loss,
    total_loss,
)
from .metrics import Metrics, confusion, summarize
from .model import (
    GatParams,
    HeadParams,
    ModelParams,
    ProjectionParams,
    attention_coefficients,
    backward_full,
    forward_full,
    gat_forward,
    grl,
    init_params,
    load_checkpoint,
    project,
    save_checkpoint,
)
from .optim import AdamWState, ScheduleConfig, adamw_step, lr_at
from .trainer import EvalResult, TrainConfig, TrainHistory, TrainResult, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AdamWState",
    "Dataset",
    "DomainBatchStats",
    "EmbeddingRecord",
    "EvalResult",
    "GatParams",
    "HeadParams",
    "KernelConfig",
    "LossReport",
    "Metrics",
    "ModelParams",
    "ProjectionParams",
    "PrototypeBank",
    "RingGraph",
    "ScheduleConfig",
    "StarGraph",
    "SyntheticConfig",
    "TrainConfig",
    "TrainHistory",
    "TrainResult",
    "attention_coefficients",
    "backward_full",
    "build_ring",
    "build_star",
    "confusion",
    "coral_loss",
    "cosine_similarity",
    "domain_loss",
    "evaluate",
    "forward_full",
    "gat_forward",
    "generate_synthetic",
    "grl",
    "infer_single",
    "init_params",
    "load_bank",
    "load_checkpoint",
    "load_dataset",
    "lr_at",
    "make_batches",
    "mmd_loss",
    "project",
    "save_bank",
    "save_checkpoint",
    "save_dataset",
    "summarize",
    "task_loss",
    "total_loss",
    "train",
    "update_bank",
    "adamw_step",
]
