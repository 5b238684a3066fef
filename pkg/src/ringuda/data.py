"""Dataset ingestion, two-domain synthetic generation, and mini-batching.

File formats (byte layouts detailed in the README):

* CSV: header line ``dim=<D>,classes=<C>,domain=<source|target>``, then one
  record per line as ``<label or -1>,<f_0>,...,<f_{D-1}>``.
* Binary: magic ``UDAE``, u16 version (1), u32 dim, u32 classes, u8 domain,
  u64 record count, then per record an i32 label (-1 = none) followed by
  ``dim`` little-endian f32 features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from . import rng
from .errors import ConfigError, DataError, FormatError, NumericError, ShapeError

Domain = Literal["source", "target"]

DATASET_MAGIC = b"UDAE"
DATASET_VERSION = 1

_DOMAIN_CODES = {"source": 0, "target": 1}
_DOMAIN_NAMES = {0: "source", 1: "target"}


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """One feature vector tagged with its domain and optional class label."""

    features: np.ndarray
    label: int | None
    domain: Domain


class Dataset:
    """Feature vectors of one domain, column-stacked with optional labels.

    Features are stored as a contiguous float64 matrix, labels as int64
    with -1 meaning absent.  Instances are immutable after construction
    and safe to share across threads.
    """

    def __init__(self, features, labels, domain: Domain, num_classes: int):
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ShapeError(f"features must be a 2-D matrix, got shape {features.shape}")
        if labels is None:
            labels = np.full(features.shape[0], -1, dtype=np.int64)
        else:
            labels = np.ascontiguousarray(labels, dtype=np.int64)
        if labels.shape != (features.shape[0],):
            raise ShapeError(
                f"labels shape {labels.shape} does not match {features.shape[0]} records"
            )
        if domain not in _DOMAIN_CODES:
            raise DataError(f"unknown domain {domain!r}")
        if num_classes < 0:
            raise DataError(f"num_classes must be non-negative, got {num_classes}")
        if features.size and not np.isfinite(features).all():
            raise NumericError("features contain NaN or Inf")
        if labels.size:
            if labels.min() < -1:
                raise DataError(f"range error: negative label {labels.min()}")
            if labels.max() >= num_classes:
                raise DataError(
                    f"range error: label {labels.max()} outside [0, {num_classes})"
                )
        self._features = features
        self._labels = labels
        self._domain: Domain = domain
        self._num_classes = num_classes
        self._features.setflags(write=False)
        self._labels.setflags(write=False)

    @classmethod
    def from_records(
        cls, records: list[EmbeddingRecord], num_classes: int, domain: Domain | None = None
    ) -> "Dataset":
        if not records:
            return cls(np.zeros((0, 0)), None, domain or "source", num_classes)
        dim = len(records[0].features)
        for i, rec in enumerate(records):
            if len(rec.features) != dim:
                raise DataError(f"schema error: record {i} has {len(rec.features)} features, expected {dim}")
        features = np.stack([np.asarray(r.features, dtype=np.float64) for r in records])
        labels = np.array([-1 if r.label is None else r.label for r in records], dtype=np.int64)
        return cls(features, labels, domain or records[0].domain, num_classes)

    def __len__(self) -> int:
        return self._features.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self._domain == other._domain
            and self._num_classes == other._num_classes
            and np.array_equal(self._features, other._features)
            and np.array_equal(self._labels, other._labels)
        )

    def __repr__(self) -> str:
        return (
            f"Dataset(n={len(self)}, dim={self.dim}, classes={self.num_classes}, "
            f"domain={self._domain!r})"
        )

    @property
    def dim(self) -> int:
        return self._features.shape[1]

    @property
    def num_classes(self) -> int:
        return self._num_classes

    @property
    def domain(self) -> Domain:
        return self._domain

    @property
    def features(self) -> np.ndarray:
        return self._features

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def is_fully_labeled(self) -> bool:
        return bool(len(self)) and bool((self._labels >= 0).all())

    @property
    def records(self) -> list[EmbeddingRecord]:
        return [
            EmbeddingRecord(
                features=self._features[i],
                label=None if self._labels[i] < 0 else int(self._labels[i]),
                domain=self._domain,
            )
            for i in range(len(self))
        ]


@dataclass(frozen=True)
class SyntheticConfig:
    """Two-domain Gaussian-mixture benchmark with a controllable shift.

    Source classes are isotropic Gaussians centered on a seeded random
    orthonormal frame scaled by ``separation_radius`` (which requires
    ``num_classes <= dim``).  Target records are fresh draws from the same
    class-conditional process transformed by scale, then rotation by
    ``rotation_angle`` in a seeded random 2-D subspace, then translation
    along a seeded random direction of length ``shift_magnitude``.
    """

    num_classes: int
    dim: int
    samples_per_class: int
    separation_radius: float = 5.0
    covariance_scale: float = 1.0
    shift_magnitude: float = 0.0
    rotation_angle: float = 0.0
    scale_factor: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if self.num_classes > self.dim:
            raise ConfigError(
                f"the orthonormal class-mean frame needs num_classes <= dim, "
                f"got {self.num_classes} > {self.dim}"
            )
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if self.rotation_angle != 0.0 and self.dim < 2:
            raise ConfigError("rotation needs dim >= 2")
        for name in ("separation_radius", "covariance_scale", "shift_magnitude",
                     "rotation_angle", "scale_factor"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value}")
        if self.separation_radius <= 0:
            raise ConfigError("separation_radius must be > 0")
        if self.covariance_scale <= 0:
            raise ConfigError("covariance_scale must be > 0")
        if self.shift_magnitude < 0:
            raise ConfigError("shift_magnitude must be >= 0")
        if self.scale_factor <= 0:
            raise ConfigError("scale_factor must be > 0")


def _orthonormal_columns(gen: np.random.Generator, dim: int, count: int) -> np.ndarray:
    """Seeded random (dim x count) matrix with orthonormal columns.

    Signs are fixed by forcing the R diagonal positive so the result does
    not depend on the LAPACK sign convention.
    """
    q, r = np.linalg.qr(gen.standard_normal((dim, count)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _plane_rotation(u: np.ndarray, v: np.ndarray, angle: float) -> np.ndarray:
    """Rotation by ``angle`` in the plane spanned by orthonormal u, v."""
    dim = u.shape[0]
    outer_uu = np.outer(u, u)
    outer_vv = np.outer(v, v)
    outer_uv = np.outer(u, v)
    return (
        np.eye(dim)
        + (np.cos(angle) - 1.0) * (outer_uu + outer_vv)
        + np.sin(angle) * (outer_uv - outer_uv.T)
    )


def generate_synthetic(config: SyntheticConfig) -> tuple[Dataset, Dataset]:
    """Deterministic (source, target) pair for a config.

    Draw order is fixed: class-mean frame, rotation plane (only when the
    angle is nonzero), translation direction, source samples class by
    class, target samples class by class.  Equal configs produce
    bitwise-equal datasets.
    """
    config.validate()
    gen = rng.stream(config.seed, rng.SYNTHESIS)
    classes = config.num_classes
    dim = config.dim
    per_class = config.samples_per_class

    frame = _orthonormal_columns(gen, dim, classes)
    means = config.separation_radius * frame.T  # one mean per row

    rotation = None
    if config.rotation_angle != 0.0:
        plane = _orthonormal_columns(gen, dim, 2)
        rotation = _plane_rotation(plane[:, 0], plane[:, 1], config.rotation_angle)

    direction = gen.standard_normal(dim)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise NumericError("degenerate translation direction draw")
    translation = config.shift_magnitude * direction / norm

    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)

    source_rows = [
        means[c] + config.covariance_scale * gen.standard_normal((per_class, dim))
        for c in range(classes)
    ]
    source = np.concatenate(source_rows, axis=0)

    target_rows = [
        means[c] + config.covariance_scale * gen.standard_normal((per_class, dim))
        for c in range(classes)
    ]
    target = np.concatenate(target_rows, axis=0)
    target = target * config.scale_factor
    if rotation is not None:
        target = target @ rotation.T
    target = target + translation

    return (
        Dataset(source, labels, "source", classes),
        Dataset(target, labels.copy(), "target", classes),
    )


def make_batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches for one epoch, deterministic in (seed, epoch).

    Indices are permuted, then chunked; a trailing chunk of size 1 is
    dropped because a ring graph is undefined on one node, while a
    trailing chunk of size >= 2 is kept.
    """
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    n = len(dataset)
    perm = rng.stream(seed, rng.SHUFFLE, epoch).permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) == 1:
        batches.pop()
    return batches


def _infer_format(path: Path) -> str:
    return "csv" if path.suffix.lower() == ".csv" else "bin"


def load_dataset(path, format: str | None = None) -> Dataset:
    """Read a dataset file; ``format`` in {"csv", "bin"}, inferred from the
    suffix when omitted."""
    path = Path(path)
    format = format or _infer_format(path)
    if format == "csv":
        return _load_csv(path)
    if format == "bin":
        return _load_bin(path)
    raise ConfigError(f"unknown dataset format {format!r}")


def save_dataset(dataset: Dataset, path, format: str | None = None) -> None:
    path = Path(path)
    format = format or _infer_format(path)
    if format == "csv":
        _save_csv(dataset, path)
    elif format == "bin":
        _save_bin(dataset, path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")


def _load_csv(path: Path) -> Dataset:
    text = path.read_text()
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        return Dataset(np.zeros((0, 0)), None, "source", 0)
    header = lines[0].strip()
    parts = header.split(",")
    if len(parts) != 3:
        raise FormatError(f"bad CSV header: {header!r}")
    try:
        dim = int(_header_field(parts[0], "dim"))
        classes = int(_header_field(parts[1], "classes"))
        domain = _header_field(parts[2], "domain")
    except ValueError as exc:
        raise FormatError(f"bad CSV header: {header!r}") from exc
    if domain not in _DOMAIN_CODES:
        raise FormatError(f"bad CSV header domain: {domain!r}")

    n = len(lines) - 1
    features = np.empty((n, dim), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        tokens = line.strip().split(",")
        if len(tokens) != dim + 1:
            raise DataError(
                f"schema error at row {i}: expected {dim + 1} fields, got {len(tokens)}"
            )
        try:
            labels[i] = int(tokens[0])
        except ValueError as exc:
            raise DataError(f"parse error at row {i}: bad label {tokens[0]!r}") from exc
        try:
            features[i] = [float(t) for t in tokens[1:]]
        except ValueError as exc:
            raise DataError(f"parse error at row {i}: non-numeric feature") from exc
    return Dataset(features, labels, domain, classes)


def _header_field(part: str, key: str) -> str:
    name, _, value = part.partition("=")
    if name.strip() != key:
        raise ValueError(part)
    return value.strip()


def _save_csv(dataset: Dataset, path: Path) -> None:
    lines = [f"dim={dataset.dim},classes={dataset.num_classes},domain={dataset.domain}"]
    for i in range(len(dataset)):
        row = [str(int(dataset.labels[i]))]
        row.extend(repr(float(x)) for x in dataset.features[i])
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


_BIN_HEADER = struct.Struct("<4sHIIBQ")


def _load_bin(path: Path) -> Dataset:
    blob = path.read_bytes()
    if len(blob) < _BIN_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, classes, domain_code, count = _BIN_HEADER.unpack_from(blob, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if domain_code not in _DOMAIN_NAMES:
        raise FormatError(f"{path}: bad domain code {domain_code}")
    record_bytes = 4 + 4 * dim
    expected = _BIN_HEADER.size + count * record_bytes
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {count} records, got {len(blob)}"
        )
    if count == 0:
        return Dataset(np.zeros((0, dim)), None, _DOMAIN_NAMES[domain_code], classes)
    record_dtype = np.dtype([("label", "<i4"), ("features", "<f4", (dim,))])
    records = np.frombuffer(blob, dtype=record_dtype, offset=_BIN_HEADER.size)
    return Dataset(
        records["features"].astype(np.float64),
        records["label"].astype(np.int64),
        _DOMAIN_NAMES[domain_code],
        classes,
    )


def _save_bin(dataset: Dataset, path: Path) -> None:
    header = _BIN_HEADER.pack(
        DATASET_MAGIC,
        DATASET_VERSION,
        dataset.dim,
        dataset.num_classes,
        _DOMAIN_CODES[dataset.domain],
        len(dataset),
    )
    record_dtype = np.dtype([("label", "<i4"), ("features", "<f4", (dataset.dim,))])
    records = np.empty(len(dataset), dtype=record_dtype)
    if len(dataset):
        records["label"] = dataset.labels.astype(np.int32)
        records["features"] = dataset.features.astype(np.float32)
    path.write_bytes(header + records.tobytes())
