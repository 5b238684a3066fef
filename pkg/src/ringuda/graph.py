"""Batch-level connectivity structures.

Training and batched inference cast each mini-batch as a ring graph in
which node ``i`` is connected to ``(i +/- 1) mod n``.  Single-query
inference instead builds a star graph connecting the query to its most
cosine-similar prototypes.  Both expose the same flattened directed-edge
arrays consumed by the attention code: ``edge_src[e]`` is the node being
updated and ``edge_dst[e]`` the neighbor it attends to, with the edges of
node ``i`` stored contiguously at ``edge_offsets[i]:edge_offsets[i + 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphError, NumericError, ShapeError


def _edge_arrays(neighbors: tuple[tuple[int, ...], ...]):
    src = []
    dst = []
    offsets = [0]
    for i, adj in enumerate(neighbors):
        for j in adj:
            src.append(i)
            dst.append(j)
        offsets.append(len(src))
    return (
        np.asarray(src, dtype=np.int64),
        np.asarray(dst, dtype=np.int64),
        np.asarray(offsets, dtype=np.int64),
    )


@dataclass(frozen=True, eq=False)
class RingGraph:
    """Undirected cycle over a batch, stored as directed edge pairs."""

    n: int
    neighbors: tuple[tuple[int, ...], ...]
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_offsets: np.ndarray

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return frozenset(zip(self.edge_src.tolist(), self.edge_dst.tolist()))


@dataclass(frozen=True, eq=False)
class StarGraph:
    """Query node 0 joined to its retrieved prototypes (nodes 1..k).

    ``prototype_indices`` keeps the original positions of the retrieved
    prototypes, in retrieval order; ``scores`` holds the matching cosine
    similarities, non-increasing.
    """

    n: int
    prototype_indices: tuple[int, ...]
    scores: tuple[float, ...]
    neighbors: tuple[tuple[int, ...], ...]
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_offsets: np.ndarray

    query_node: int = 0

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return frozenset(zip(self.edge_src.tolist(), self.edge_dst.tolist()))


def build_ring(n: int, self_loops: bool = False) -> RingGraph:
    """Ring over ``n`` nodes; undefined (GraphError) for n < 2.

    For n >= 3 every node has the two neighbors ``(i - 1) mod n`` and
    ``(i + 1) mod n``; for n = 2 the forward and reverse edges coincide,
    so each node has exactly one neighbor.

    The default edge set carries no self-loops, so a node's update sees
    only its neighbors.  ``self_loops=True`` adds ``(i, i)`` edges, the
    common graph-attention convention, which lets each node keep a stake
    in its own update; that is essential when batch order is shuffled and
    the task head must classify individual records.
    """
    if n < 2:
        raise GraphError(f"a ring needs at least 2 nodes, got {n}")
    if n == 2:
        neighbors = ((0, 1), (0, 1)) if self_loops else ((1,), (0,))
    else:
        neighbors = tuple(
            tuple(sorted({(i - 1) % n, (i + 1) % n} | ({i} if self_loops else set())))
            for i in range(n)
        )
    src, dst, offsets = _edge_arrays(neighbors)
    return RingGraph(n=n, neighbors=neighbors, edge_src=src, edge_dst=dst, edge_offsets=offsets)


def cosine_similarity(q: np.ndarray, p: np.ndarray) -> float:
    """q.p / (|q||p|); raises on zero-norm input or length mismatch."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape or q.ndim != 1:
        raise ShapeError(f"cosine similarity needs equal-length vectors, got {q.shape} and {p.shape}")
    nq = float(np.linalg.norm(q))
    np_ = float(np.linalg.norm(p))
    if nq == 0.0 or np_ == 0.0:
        raise NumericError("cosine similarity undefined for a zero-norm vector")
    return float(q @ p) / (nq * np_)


def build_star(query: np.ndarray, prototypes: list[np.ndarray], k: int) -> StarGraph:
    """Star graph from ``query`` to its top-k prototypes by cosine similarity.

    ``k`` is clamped to the number of prototypes; ties break toward the
    lower prototype index.  The result is invariant under positive
    rescaling of the query.
    """
    if not prototypes:
        raise GraphError("cannot build a star graph over zero prototypes")
    if k < 1:
        raise GraphError(f"retrieval count must be >= 1, got {k}")
    sims = np.array([cosine_similarity(query, p) for p in prototypes])
    effective_k = min(k, len(prototypes))
    # Stable sort on negated scores: equal scores keep ascending index order.
    order = np.argsort(-sims, kind="stable")[:effective_k]
    neighbors = (tuple(range(1, effective_k + 1)),) + tuple((0,) for _ in range(effective_k))
    src, dst, offsets = _edge_arrays(neighbors)
    return StarGraph(
        n=effective_k + 1,
        prototype_indices=tuple(int(i) for i in order),
        scores=tuple(float(sims[i]) for i in order),
        neighbors=neighbors,
        edge_src=src,
        edge_dst=dst,
        edge_offsets=offsets,
    )
