"""Objective components and their exact gradients.

Conventions used throughout:

* Covariances are mean-centered with the unbiased 1/(n-1) normalization.
* The covariance-alignment loss is ``|C_s - C_t|_F^2 / (4 d^2)``.
* The kernel mean-discrepancy uses a Gaussian RBF
  ``k(x, y) = exp(-|x - y|^2 / (2 sigma^2))``; the default bandwidth is the
  median heuristic ``sigma^2 = median(pairwise squared distances) / 2``
  over the pooled batch, treated as a constant in differentiation, with a
  fallback to ``sigma = 1`` when all pairwise distances vanish.
* The discrepancy estimator is the biased V-statistic (all pairs,
  diagonals included); the unbiased U-statistic is an option.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LossError, NumericError, ShapeError

HISTORY_HEADER = "step,epoch,L_task,L_dom_s,L_dom_t,L_coral,L_mmd,L_total,lr"


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian RBF kernel settings.

    ``bandwidth=None`` selects the per-call median heuristic; a float fixes
    sigma.  ``unbiased`` switches the discrepancy estimator to the
    U-statistic (diagonal terms removed), which needs >= 2 rows per side.
    """

    bandwidth: float | None = None
    unbiased: bool = False

    def validate(self) -> None:
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise NumericError(f"fixed kernel bandwidth must be > 0, got {self.bandwidth}")


@dataclass(frozen=True)
class DomainBatchStats:
    """Per-step first- and second-order feature statistics of both domains."""

    cov_source: np.ndarray
    cov_target: np.ndarray
    mean_source: np.ndarray
    mean_target: np.ndarray
    n_source: int
    n_target: int


@dataclass(frozen=True)
class LossReport:
    """All loss components of one training step.

    ``total = task + domain_source + domain_target + align_weight * (coral + mmd)``.
    ``coral_skipped`` marks steps where a degenerate batch (fewer than two
    rows in one domain) forced the covariance term to 0.
    """

    task: float
    domain_source: float
    domain_target: float
    coral: float
    mmd: float
    total: float
    align_weight: float
    stats: DomainBatchStats | None = None
    coral_skipped: bool = False


def history_row(step: int, epoch: int, report: LossReport, lr: float) -> str:
    """One history.csv row; floats use shortest round-trip formatting."""
    values = [
        str(step),
        str(epoch),
        repr(report.task),
        repr(report.domain_source),
        repr(report.domain_target),
        repr(report.coral),
        repr(report.mmd),
        repr(report.total),
        repr(lr),
    ]
    return ",".join(values)


def task_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of class logits; returns (loss, d loss / d logits).

    The gradient is ``(softmax - onehot) / n``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (n, classes), got {logits.shape}")
    n, num_classes = logits.shape
    if n == 0:
        raise LossError("task loss undefined on an empty batch")
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} logits rows")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ShapeError(f"labels outside [0, {num_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(n), labels]))
    softmax = np.exp(shifted - log_norm[:, None])
    grad = softmax
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    expx = np.exp(x[~pos])
    out[~pos] = expx / (1.0 + expx)
    return out


def domain_loss(logits: np.ndarray, domain_label: int) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of domain logits against a constant label.

    Computed in the overflow-safe form
    ``max(u, 0) - u * d + log1p(exp(-|u|))``; gradient is
    ``(sigmoid(u) - d) / n``.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if logits.size == 0:
        raise LossError("domain loss undefined on an empty batch")
    if domain_label not in (0, 1):
        raise ShapeError(f"domain label must be 0 or 1, got {domain_label}")
    loss = float(
        np.mean(np.maximum(logits, 0.0) - logits * domain_label + np.log1p(np.exp(-np.abs(logits))))
    )
    grad = (_sigmoid(logits) - domain_label) / logits.size
    return loss, grad


def _centered(rows: np.ndarray) -> np.ndarray:
    return rows - rows.mean(axis=0, keepdims=True)


def _covariance(rows: np.ndarray) -> np.ndarray:
    centered = _centered(rows)
    return centered.T @ centered / (rows.shape[0] - 1)


def batch_stats(source_rows: np.ndarray, target_rows: np.ndarray) -> DomainBatchStats:
    """Means and covariances of both feature batches."""
    source_rows = np.asarray(source_rows, dtype=np.float64)
    target_rows = np.asarray(target_rows, dtype=np.float64)
    if source_rows.shape[0] < 2 or target_rows.shape[0] < 2:
        raise LossError("covariance statistics need at least 2 rows per domain")
    return DomainBatchStats(
        cov_source=_covariance(source_rows),
        cov_target=_covariance(target_rows),
        mean_source=source_rows.mean(axis=0),
        mean_target=target_rows.mean(axis=0),
        n_source=source_rows.shape[0],
        n_target=target_rows.shape[0],
    )


def coral_loss(
    source_rows: np.ndarray, target_rows: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Squared Frobenius distance of domain covariances, scaled by 1/(4 d^2).

    Returns (loss, grad wrt source rows, grad wrt target rows).
    """
    source_rows = np.asarray(source_rows, dtype=np.float64)
    target_rows = np.asarray(target_rows, dtype=np.float64)
    if source_rows.ndim != 2 or target_rows.ndim != 2:
        raise ShapeError("feature batches must be 2-D")
    if source_rows.shape[1] != target_rows.shape[1]:
        raise ShapeError(
            f"feature dims differ: {source_rows.shape[1]} vs {target_rows.shape[1]}"
        )
    n_source, dim = source_rows.shape
    n_target = target_rows.shape[0]
    if n_source < 2 or n_target < 2:
        raise LossError("covariance alignment needs at least 2 rows per domain")

    centered_s = _centered(source_rows)
    centered_t = _centered(target_rows)
    cov_s = centered_s.T @ centered_s / (n_source - 1)
    cov_t = centered_t.T @ centered_t / (n_target - 1)
    diff = cov_s - cov_t
    loss = float((diff * diff).sum() / (4.0 * dim * dim))

    # d loss / d cov = diff / (2 d^2); chain through X -> centered -> cov.
    scaled = diff / (2.0 * dim * dim)
    grad_centered_s = 2.0 * centered_s @ scaled / (n_source - 1)
    grad_centered_t = -2.0 * centered_t @ scaled / (n_target - 1)
    grad_s = grad_centered_s - grad_centered_s.mean(axis=0, keepdims=True)
    grad_t = grad_centered_t - grad_centered_t.mean(axis=0, keepdims=True)
    return loss, grad_s, grad_t


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * a @ b.T, 0.0)


def median_heuristic_bandwidth(source_rows: np.ndarray, target_rows: np.ndarray) -> float:
    """sigma from the pooled-batch median of pairwise squared distances.

    Falls back to 1.0 when every pairwise distance is zero.
    """
    pooled = np.concatenate([source_rows, target_rows], axis=0)
    dists = _pairwise_sq_dists(pooled, pooled)
    off_diag = dists[~np.eye(len(pooled), dtype=bool)]
    if off_diag.size == 0:
        return 1.0
    median = float(np.median(off_diag))
    if median <= 0.0:
        return 1.0
    return float(np.sqrt(median / 2.0))


def mmd_loss(
    source_rows: np.ndarray,
    target_rows: np.ndarray,
    kernel: KernelConfig = KernelConfig(),
) -> tuple[float, np.ndarray, np.ndarray]:
    """Squared kernel mean discrepancy between the two batches.

    V-statistic by default:
    ``mean(K_ss) + mean(K_tt) - 2 mean(K_st)``, which is the exact plug-in
    of the squared RKHS distance between empirical mean embeddings and is
    non-negative up to rounding.  Returns (loss, grad_source, grad_target);
    the bandwidth is treated as a constant in differentiation.
    """
    kernel.validate()
    source_rows = np.asarray(source_rows, dtype=np.float64)
    target_rows = np.asarray(target_rows, dtype=np.float64)
    if source_rows.ndim != 2 or target_rows.ndim != 2:
        raise ShapeError("feature batches must be 2-D")
    if source_rows.shape[1] != target_rows.shape[1]:
        raise ShapeError(
            f"feature dims differ: {source_rows.shape[1]} vs {target_rows.shape[1]}"
        )
    n_source = source_rows.shape[0]
    n_target = target_rows.shape[0]
    if n_source < 1 or n_target < 1:
        raise LossError("mean discrepancy needs at least 1 row per domain")
    if kernel.unbiased and (n_source < 2 or n_target < 2):
        raise LossError("the unbiased estimator needs at least 2 rows per domain")

    sigma = kernel.bandwidth
    if sigma is None:
        sigma = median_heuristic_bandwidth(source_rows, target_rows)
    gamma = 1.0 / (2.0 * sigma * sigma)

    k_ss = np.exp(-gamma * _pairwise_sq_dists(source_rows, source_rows))
    k_tt = np.exp(-gamma * _pairwise_sq_dists(target_rows, target_rows))
    k_st = np.exp(-gamma * _pairwise_sq_dists(source_rows, target_rows))

    if kernel.unbiased:
        np.fill_diagonal(k_ss, 0.0)
        np.fill_diagonal(k_tt, 0.0)
        w_ss = 1.0 / (n_source * (n_source - 1))
        w_tt = 1.0 / (n_target * (n_target - 1))
    else:
        w_ss = 1.0 / (n_source * n_source)
        w_tt = 1.0 / (n_target * n_target)
    w_st = 2.0 / (n_source * n_target)
    loss = float(w_ss * k_ss.sum() + w_tt * k_tt.sum() - w_st * k_st.sum())

    # d k(x, y) / d x = -2 gamma (x - y) k(x, y); within-domain pairs count
    # twice because both (i, j) and (j, i) appear in the double sum.
    row_ss = k_ss.sum(axis=1)
    row_st = k_st.sum(axis=1)
    grad_s = (
        -4.0 * gamma * w_ss * (row_ss[:, None] * source_rows - k_ss @ source_rows)
        + 2.0 * gamma * w_st * (row_st[:, None] * source_rows - k_st @ target_rows)
    )
    col_tt = k_tt.sum(axis=1)
    col_st = k_st.sum(axis=0)
    grad_t = (
        -4.0 * gamma * w_tt * (col_tt[:, None] * target_rows - k_tt @ target_rows)
        + 2.0 * gamma * w_st * (col_st[:, None] * target_rows - k_st.T @ source_rows)
    )
    return loss, grad_s, grad_t


def total_loss(
    task: float,
    domain_source: float,
    domain_target: float,
    coral: float,
    mmd: float,
    align_weight: float,
    stats: DomainBatchStats | None = None,
    coral_skipped: bool = False,
) -> LossReport:
    """Combine the components; NaN components are rejected by name."""
    components = {
        "task": task,
        "domain_source": domain_source,
        "domain_target": domain_target,
        "coral": coral,
        "mmd": mmd,
    }
    for name, value in components.items():
        if not np.isfinite(value):
            raise NumericError(f"loss component {name} is not finite: {value}")
    total = task + domain_source + domain_target + align_weight * (coral + mmd)
    return LossReport(
        task=task,
        domain_source=domain_source,
        domain_target=domain_target,
        coral=coral,
        mmd=mmd,
        total=total,
        align_weight=align_weight,
        stats=stats,
        coral_skipped=coral_skipped,
    )
