"""Prototype memory bank for single-query inference.

During training the bank accumulates per-class prototypes of post-graph
embeddings with an exponential moving average.  A single query cannot form
a batch ring, so inference projects it, retrieves its top-k prototypes by
cosine similarity into a star graph, runs the trained attention over that
star with the query as the only updated node, and classifies the result.

Bank file layout: magic ``UDAB``, u16 version (1), u32 classes, u32 slots
per class, u32 embedding width, f32 momentum, then classes * slots records
of (u8 occupied, width little-endian f32 values).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, FormatError, InferenceError, NumericError, ShapeError
from .graph import build_star
from .model import ModelParams, _activate, _attention_internals, project

BANK_MAGIC = b"UDAB"
BANK_VERSION = 1


class PrototypeBank:
    """Per-class EMA prototypes with round-robin slot assignment."""

    def __init__(self, num_classes: int, dim: int, slots_per_class: int = 1, momentum: float = 0.9):
        if num_classes < 1 or dim < 1 or slots_per_class < 1:
            raise ConfigError("bank needs positive num_classes, dim, and slots_per_class")
        if not 0.0 <= momentum <= 1.0:
            raise ConfigError(f"momentum must lie in [0, 1], got {momentum}")
        self.num_classes = num_classes
        self.dim = dim
        self.slots_per_class = slots_per_class
        self.momentum = momentum
        self.vectors = np.zeros((num_classes, slots_per_class, dim))
        self.occupied = np.zeros((num_classes, slots_per_class), dtype=bool)
        self._cursor = np.zeros(num_classes, dtype=np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PrototypeBank):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.slots_per_class == other.slots_per_class
            and self.dim == other.dim
            and self.momentum == other.momentum
            and np.array_equal(self.vectors, other.vectors)
            and np.array_equal(self.occupied, other.occupied)
        )

    @property
    def is_empty(self) -> bool:
        return not self.occupied.any()

    def prototypes(self) -> tuple[list[int], list[np.ndarray]]:
        """Occupied slots flattened in (class, slot) order: (classes, vectors)."""
        classes = []
        vectors = []
        for c in range(self.num_classes):
            for s in range(self.slots_per_class):
                if self.occupied[c, s]:
                    classes.append(c)
                    vectors.append(self.vectors[c, s])
        return classes, vectors

    def update(self, embeddings: np.ndarray, labels: np.ndarray) -> None:
        """Fold one labeled batch of embeddings into the bank.

        For each class in the batch the current slot (advancing round-robin
        when slots_per_class > 1) moves toward the batch class-mean:
        slot <- momentum * slot + (1 - momentum) * mean; an empty slot is
        initialized to the mean directly.
        """
        embeddings = np.asarray(embeddings, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if embeddings.ndim != 2 or embeddings.shape[1] != self.dim:
            raise ShapeError(f"embeddings shape {embeddings.shape} incompatible with width {self.dim}")
        if labels.shape != (embeddings.shape[0],):
            raise ShapeError("labels must align with embedding rows")
        if not np.isfinite(embeddings).all():
            raise NumericError("embeddings contain non-finite values")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ShapeError(f"labels outside [0, {self.num_classes})")
        for c in np.unique(labels):
            mean = embeddings[labels == c].mean(axis=0)
            slot = self._cursor[c] % self.slots_per_class
            self._cursor[c] += 1
            if self.occupied[c, slot]:
                self.vectors[c, slot] = (
                    self.momentum * self.vectors[c, slot] + (1.0 - self.momentum) * mean
                )
            else:
                self.vectors[c, slot] = mean
                self.occupied[c, slot] = True


def update_bank(bank: PrototypeBank, embeddings: np.ndarray, labels: np.ndarray) -> PrototypeBank:
    bank.update(embeddings, labels)
    return bank


def infer_single(
    features: np.ndarray, params: ModelParams, bank: PrototypeBank, k: int = 5
) -> np.ndarray:
    """Class probabilities for one raw feature vector.

    The query is projected, tied to its top-k prototypes in a star graph,
    updated by one attention pass over the retrieved set (identity when
    the graph stage is disabled), and scored by the task head.
    """
    if bank.is_empty:
        raise InferenceError("prototype bank is empty")
    if k < 1:
        raise ConfigError(f"retrieval count must be >= 1, got {k}")
    features = np.asarray(features, dtype=np.float64).reshape(1, -1)
    query = project(features, params.projection)[0]

    classes, vectors = bank.prototypes()
    star = build_star(query, vectors, k)
    if params.use_gat:
        nodes = np.vstack([query] + [vectors[i] for i in star.prototype_indices])
        z_all, _, alpha = _attention_internals(star, nodes, params.gat)
        query_edges = slice(star.edge_offsets[0], star.edge_offsets[1])
        aggregated = np.zeros(params.dim_hidden)
        for h in range(params.num_heads):
            weights = alpha[h][query_edges]
            aggregated += weights @ z_all[h][star.edge_dst[query_edges]]
        aggregated /= params.num_heads
        updated = _activate(aggregated, params.activation, params.gat.leaky_slope)
    else:
        updated = query

    logits = params.heads.task_weight @ updated + params.heads.task_bias
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


_BANK_HEADER = struct.Struct("<4sHIIIf")


def save_bank(bank: PrototypeBank, path) -> None:
    chunks = [
        _BANK_HEADER.pack(
            BANK_MAGIC,
            BANK_VERSION,
            bank.num_classes,
            bank.slots_per_class,
            bank.dim,
            bank.momentum,
        )
    ]
    for c in range(bank.num_classes):
        for s in range(bank.slots_per_class):
            chunks.append(struct.pack("<B", int(bank.occupied[c, s])))
            chunks.append(np.ascontiguousarray(bank.vectors[c, s], dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_bank(path) -> PrototypeBank:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _BANK_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, num_classes, slots, dim, momentum = _BANK_HEADER.unpack_from(blob, 0)
    if magic != BANK_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != BANK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    slot_bytes = 1 + 4 * dim
    expected = _BANK_HEADER.size + num_classes * slots * slot_bytes
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(blob)}")
    bank = PrototypeBank(num_classes, dim, slots, float(momentum))
    offset = _BANK_HEADER.size
    for c in range(num_classes):
        for s in range(slots):
            occupied = blob[offset]
            offset += 1
            values = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset)
            offset += 4 * dim
            if occupied:
                bank.occupied[c, s] = True
                bank.vectors[c, s] = values.astype(np.float64)
                bank._cursor[c] = max(bank._cursor[c], s + 1)
    return bank
