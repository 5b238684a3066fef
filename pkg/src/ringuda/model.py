"""Trainable forward pipeline and its hand-derived exact gradients.

The pipeline is: ReLU projection encoder -> multi-head graph attention
over a batch graph -> task classifier, plus a domain classifier fed
through a gradient-reversal stage.  Attention per head ``k`` is

    alpha_ij = softmax_{j in N(i)} LeakyReLU(a_k . [W_k h_i || W_k h_j])

and node updates average heads:

    h'_i = act( (1/K) sum_k sum_{j in N(i)} alpha_ij W_k h_j ).

There is no self-loop: a node's update sees only its neighbors.
``backward_full`` differentiates the exact composition; every routine
operates in float64, and checkpoints store f32 payloads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigError, FormatError, GraphError, NumericError, ShapeError

CHECKPOINT_MAGIC = b"UDAM"
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("leaky_relu", "elu", "identity")
DOMAIN_TAPS = ("post_projection", "post_gat")

_ACTIVATION_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}
_TAP_CODES = {name: i for i, name in enumerate(DOMAIN_TAPS)}


@dataclass
class ProjectionParams:
    weight: np.ndarray  # (dim_hidden, dim_in)
    bias: np.ndarray  # (dim_hidden,)


@dataclass
class GatParams:
    weights: list[np.ndarray]  # per head, (dim_hidden, dim_hidden)
    attn: list[np.ndarray]  # per head, (2 * dim_hidden,)
    leaky_slope: float = 0.2

    @property
    def num_heads(self) -> int:
        return len(self.weights)


@dataclass
class HeadParams:
    task_weight: np.ndarray  # (num_classes, dim_hidden)
    task_bias: np.ndarray  # (num_classes,)
    domain_weight1: np.ndarray  # (dim_domain_hidden, dim_hidden)
    domain_bias1: np.ndarray  # (dim_domain_hidden,)
    domain_weight2: np.ndarray  # (dim_domain_hidden,)
    domain_bias2: np.ndarray  # (1,)


@dataclass
class ModelParams:
    projection: ProjectionParams
    gat: GatParams
    heads: HeadParams
    grl_lambda: float = 1.0
    activation: str = "leaky_relu"
    domain_tap: str = "post_gat"
    use_gat: bool = True
    self_loops: bool = False

    @property
    def dim_in(self) -> int:
        return self.projection.weight.shape[1]

    @property
    def dim_hidden(self) -> int:
        return self.projection.weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.heads.task_weight.shape[0]

    @property
    def num_heads(self) -> int:
        return self.gat.num_heads

    @property
    def dim_domain_hidden(self) -> int:
        return self.heads.domain_weight1.shape[0]

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """All trainable tensors in their canonical (checkpoint) order."""
        out = [
            ("projection.weight", self.projection.weight),
            ("projection.bias", self.projection.bias),
        ]
        for k in range(self.num_heads):
            out.append((f"gat.weight.{k}", self.gat.weights[k]))
            out.append((f"gat.attn.{k}", self.gat.attn[k]))
        out.extend(
            [
                ("heads.task_weight", self.heads.task_weight),
                ("heads.task_bias", self.heads.task_bias),
                ("heads.domain_weight1", self.heads.domain_weight1),
                ("heads.domain_bias1", self.heads.domain_bias1),
                ("heads.domain_weight2", self.heads.domain_weight2),
                ("heads.domain_bias2", self.heads.domain_bias2),
            ]
        )
        return out

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(tensor) for name, tensor in self.tensors()}


def init_params(
    dim_in: int,
    num_classes: int,
    dim_hidden: int = 512,
    num_heads: int = 4,
    dim_domain_hidden: int = 128,
    seed: int = 0,
    grl_lambda: float = 1.0,
    activation: str = "leaky_relu",
    domain_tap: str = "post_gat",
    use_gat: bool = True,
    self_loops: bool = False,
    leaky_slope: float = 0.2,
) -> ModelParams:
    """Seeded initialization: weights uniform(-s, s) with s = 1/sqrt(fan_in),
    biases zero.  Draw order follows the canonical tensor order."""
    if min(dim_in, num_classes, dim_hidden, num_heads, dim_domain_hidden) < 1:
        raise ConfigError("all model dimensions must be positive")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}; pick one of {ACTIVATIONS}")
    if domain_tap not in DOMAIN_TAPS:
        raise ConfigError(f"unknown domain tap {domain_tap!r}; pick one of {DOMAIN_TAPS}")
    if not np.isfinite(grl_lambda):
        raise ConfigError(f"grl_lambda must be finite, got {grl_lambda}")
    gen = rng.stream(seed, rng.PARAMETER_INIT)

    def draw(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return gen.uniform(-bound, bound, size=shape)

    projection = ProjectionParams(
        weight=draw((dim_hidden, dim_in), dim_in),
        bias=np.zeros(dim_hidden),
    )
    weights = []
    attn = []
    for _ in range(num_heads):
        weights.append(draw((dim_hidden, dim_hidden), dim_hidden))
        attn.append(draw(2 * dim_hidden, 2 * dim_hidden))
    heads = HeadParams(
        task_weight=draw((num_classes, dim_hidden), dim_hidden),
        task_bias=np.zeros(num_classes),
        domain_weight1=draw((dim_domain_hidden, dim_hidden), dim_hidden),
        domain_bias1=np.zeros(dim_domain_hidden),
        domain_weight2=draw(dim_domain_hidden, dim_domain_hidden),
        domain_bias2=np.zeros(1),
    )
    return ModelParams(
        projection=projection,
        gat=GatParams(weights=weights, attn=attn, leaky_slope=leaky_slope),
        heads=heads,
        grl_lambda=grl_lambda,
        activation=activation,
        domain_tap=domain_tap,
        use_gat=use_gat,
        self_loops=self_loops,
    )


def _activate(pre: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "leaky_relu":
        return np.where(pre > 0, pre, slope * pre)
    if kind == "elu":
        return np.where(pre > 0, pre, np.expm1(np.minimum(pre, 0.0)))
    if kind == "identity":
        return pre
    raise ConfigError(f"unknown activation {kind!r}")


def _activation_grad(pre: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "leaky_relu":
        return np.where(pre > 0, 1.0, slope)
    if kind == "elu":
        return np.where(pre > 0, 1.0, np.exp(np.minimum(pre, 0.0)))
    if kind == "identity":
        return np.ones_like(pre)
    raise ConfigError(f"unknown activation {kind!r}")


def project(features: np.ndarray, projection: ProjectionParams) -> np.ndarray:
    """ReLU(features @ W.T + b), row per record."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != projection.weight.shape[1]:
        raise ShapeError(
            f"features shape {features.shape} incompatible with projection "
            f"weight {projection.weight.shape}"
        )
    out = np.maximum(features @ projection.weight.T + projection.bias, 0.0)
    if not np.isfinite(out).all():
        raise NumericError("projection produced non-finite values")
    return out


def _check_graph(graph, n: int) -> None:
    if graph.n != n:
        raise ShapeError(f"graph has {graph.n} nodes but batch has {n} rows")
    degrees = np.diff(graph.edge_offsets)
    if (degrees < 1).any():
        raise GraphError("every node needs at least one neighbor")


def _attention_internals(graph, embeddings: np.ndarray, gat: GatParams):
    """Per-head projected features, pre-activation edge scores, and
    softmax-normalized coefficients aligned with the graph edge arrays."""
    _check_graph(graph, embeddings.shape[0])
    src = graph.edge_src
    dst = graph.edge_dst
    starts = graph.edge_offsets[:-1]
    dim_hidden = embeddings.shape[1]
    num_edges = len(src)
    num_heads = gat.num_heads

    z_all = np.empty((num_heads, embeddings.shape[0], dim_hidden))
    score_pre = np.empty((num_heads, num_edges))
    alpha = np.empty((num_heads, num_edges))
    for k in range(num_heads):
        if gat.weights[k].shape != (dim_hidden, dim_hidden):
            raise ShapeError(
                f"head {k} weight shape {gat.weights[k].shape} incompatible with "
                f"embeddings of width {dim_hidden}"
            )
        z = embeddings @ gat.weights[k].T
        src_score = z @ gat.attn[k][:dim_hidden]
        dst_score = z @ gat.attn[k][dim_hidden:]
        pre = src_score[src] + dst_score[dst]
        logits = np.where(pre > 0, pre, gat.leaky_slope * pre)
        # Softmax per source node, max-subtracted for overflow safety.
        seg_max = np.maximum.reduceat(logits, starts)
        weights = np.exp(logits - seg_max[src])
        seg_sum = np.add.reduceat(weights, starts)
        z_all[k] = z
        score_pre[k] = pre
        alpha[k] = weights / seg_sum[src]
    return z_all, score_pre, alpha


def attention_coefficients(graph, embeddings: np.ndarray, gat: GatParams) -> np.ndarray:
    """Attention weights, shape (num_heads, num_edges), aligned with
    ``graph.edge_src``/``graph.edge_dst``.  Rows of each source node sum
    to 1."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    _, _, alpha = _attention_internals(graph, embeddings, gat)
    return alpha


def gat_forward(
    graph, embeddings: np.ndarray, gat: GatParams, activation: str = "leaky_relu"
) -> np.ndarray:
    """Head-averaged attention aggregation followed by the output activation."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    z_all, _, alpha = _attention_internals(graph, embeddings, gat)
    aggregated = _aggregate(graph, z_all, alpha)
    return _activate(aggregated, activation, gat.leaky_slope)


def _aggregate(graph, z_all: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    starts = graph.edge_offsets[:-1]
    dst = graph.edge_dst
    num_heads = z_all.shape[0]
    out = np.zeros((graph.n, z_all.shape[2]))
    for k in range(num_heads):
        contrib = alpha[k][:, None] * z_all[k][dst]
        out += np.add.reduceat(contrib, starts, axis=0)
    return out / num_heads


def grl(values: np.ndarray, lam: float, direction: str) -> np.ndarray:
    """Gradient-reversal stage: identity forward, -lam * g backward."""
    if not np.isfinite(lam):
        raise NumericError(f"reversal scale must be finite, got {lam}")
    if direction == "forward":
        return values
    if direction == "backward":
        return -lam * np.asarray(values, dtype=np.float64)
    raise ConfigError(f"direction must be 'forward' or 'backward', got {direction!r}")


@dataclass
class ForwardState:
    """Cached intermediates of one forward pass, consumed by backward_full."""

    features: np.ndarray
    graph: object
    projection_pre: np.ndarray
    projected: np.ndarray
    z_all: np.ndarray | None
    score_pre: np.ndarray | None
    alpha: np.ndarray | None
    gat_pre: np.ndarray | None
    post_gat: np.ndarray
    domain_input: np.ndarray
    domain_hidden_pre: np.ndarray
    domain_hidden: np.ndarray
    task_logits: np.ndarray
    domain_logits: np.ndarray

    @property
    def embeddings(self) -> np.ndarray:
        return self.post_gat


def forward_full(features: np.ndarray, params: ModelParams, graph) -> ForwardState:
    """Run the whole pipeline over one batch graph and cache intermediates.

    With ``use_gat`` disabled the graph stage is the identity and the
    post-graph embeddings equal the projection output.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.dim_in:
        raise ShapeError(
            f"features shape {features.shape} incompatible with input width {params.dim_in}"
        )
    projection_pre = features @ params.projection.weight.T + params.projection.bias
    projected = np.maximum(projection_pre, 0.0)
    if not np.isfinite(projected).all():
        raise NumericError("projection produced non-finite values")

    if params.use_gat:
        z_all, score_pre, alpha = _attention_internals(graph, projected, params.gat)
        gat_pre = _aggregate(graph, z_all, alpha)
        post_gat = _activate(gat_pre, params.activation, params.gat.leaky_slope)
    else:
        _check_graph(graph, features.shape[0])
        z_all = score_pre = alpha = gat_pre = None
        post_gat = projected

    task_logits = post_gat @ params.heads.task_weight.T + params.heads.task_bias

    domain_input = post_gat if params.domain_tap == "post_gat" else projected
    domain_hidden_pre = domain_input @ params.heads.domain_weight1.T + params.heads.domain_bias1
    domain_hidden = np.maximum(domain_hidden_pre, 0.0)
    domain_logits = domain_hidden @ params.heads.domain_weight2 + params.heads.domain_bias2[0]

    return ForwardState(
        features=features,
        graph=graph,
        projection_pre=projection_pre,
        projected=projected,
        z_all=z_all,
        score_pre=score_pre,
        alpha=alpha,
        gat_pre=gat_pre,
        post_gat=post_gat,
        domain_input=domain_input,
        domain_hidden_pre=domain_hidden_pre,
        domain_hidden=domain_hidden,
        task_logits=task_logits,
        domain_logits=domain_logits,
    )


def backward_full(
    state: ForwardState,
    params: ModelParams,
    d_task_logits: np.ndarray | None = None,
    d_domain_logits: np.ndarray | None = None,
    d_post_gat: np.ndarray | None = None,
    d_post_projection: np.ndarray | None = None,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients for every parameter tensor and the input features.

    Upstream gradients may target the task logits, the domain logits, the
    post-graph embeddings (alignment losses), or the projection output.
    The reversal scale flips only the domain-branch flow into the encoder;
    at lambda = 0 that flow is dropped outright so the remaining gradients
    are bitwise independent of the domain loss.
    """
    grads = params.zero_grads()
    d_post = np.zeros_like(state.post_gat)
    d_proj = np.zeros_like(state.projected)

    if d_task_logits is not None:
        d_task_logits = np.asarray(d_task_logits, dtype=np.float64)
        grads["heads.task_weight"] += d_task_logits.T @ state.post_gat
        grads["heads.task_bias"] += d_task_logits.sum(axis=0)
        d_post += d_task_logits @ params.heads.task_weight

    if d_domain_logits is not None:
        du = np.asarray(d_domain_logits, dtype=np.float64).reshape(-1)
        grads["heads.domain_weight2"] += state.domain_hidden.T @ du
        grads["heads.domain_bias2"] += du.sum()
        d_hidden = du[:, None] * params.heads.domain_weight2[None, :]
        d_hidden_pre = d_hidden * (state.domain_hidden_pre > 0)
        grads["heads.domain_weight1"] += d_hidden_pre.T @ state.domain_input
        grads["heads.domain_bias1"] += d_hidden_pre.sum(axis=0)
        if params.grl_lambda != 0.0:
            d_reversed = -params.grl_lambda * (d_hidden_pre @ params.heads.domain_weight1)
            if params.domain_tap == "post_gat":
                d_post += d_reversed
            else:
                d_proj += d_reversed

    if d_post_gat is not None:
        d_post += d_post_gat
    if d_post_projection is not None:
        d_proj += d_post_projection

    if params.use_gat:
        d_proj += _gat_backward(state, params, d_post, grads)
    else:
        d_proj += d_post

    d_projection_pre = d_proj * (state.projection_pre > 0)
    grads["projection.weight"] += d_projection_pre.T @ state.features
    grads["projection.bias"] += d_projection_pre.sum(axis=0)
    d_features = d_projection_pre @ params.projection.weight
    return grads, d_features


def _gat_backward(
    state: ForwardState,
    params: ModelParams,
    d_post: np.ndarray,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Backward through aggregation, softmax, edge scoring, and the head
    projections; returns the gradient reaching the projection output."""
    graph = state.graph
    src = graph.edge_src
    dst = graph.edge_dst
    starts = graph.edge_offsets[:-1]
    num_heads = params.num_heads
    dim_hidden = state.projected.shape[1]
    slope = params.gat.leaky_slope

    d_aggregated = d_post * _activation_grad(state.gat_pre, params.activation, slope)
    d_proj = np.zeros_like(state.projected)
    for k in range(num_heads):
        z = state.z_all[k]
        alpha = state.alpha[k]
        pre = state.score_pre[k]

        d_alpha = (d_aggregated[src] * z[dst]).sum(axis=1) / num_heads
        d_z = np.zeros_like(z)
        np.add.at(d_z, dst, (alpha / num_heads)[:, None] * d_aggregated[src])

        seg = np.add.reduceat(alpha * d_alpha, starts)
        d_logits = alpha * (d_alpha - seg[src])
        d_pre = d_logits * np.where(pre > 0, 1.0, slope)

        g_attn = grads[f"gat.attn.{k}"]
        g_attn[:dim_hidden] += z[src].T @ d_pre
        g_attn[dim_hidden:] += z[dst].T @ d_pre

        d_src_score = np.zeros(graph.n)
        d_dst_score = np.zeros(graph.n)
        np.add.at(d_src_score, src, d_pre)
        np.add.at(d_dst_score, dst, d_pre)
        attn_vec = params.gat.attn[k]
        d_z += d_src_score[:, None] * attn_vec[None, :dim_hidden]
        d_z += d_dst_score[:, None] * attn_vec[None, dim_hidden:]

        grads[f"gat.weight.{k}"] += d_z.T @ state.projected
        d_proj += d_z @ params.gat.weights[k]
    return d_proj


_CONFIG_BLOCK = struct.Struct("<IIIIIdBBBBd")


def save_checkpoint(params: ModelParams, path) -> None:
    """Write the checkpoint container (f32 tensor payloads)."""
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<H", CHECKPOINT_VERSION),
        _CONFIG_BLOCK.pack(
            params.dim_in,
            params.dim_hidden,
            params.num_classes,
            params.num_heads,
            params.dim_domain_hidden,
            params.grl_lambda,
            _ACTIVATION_CODES[params.activation],
            _TAP_CODES[params.domain_tap],
            int(params.use_gat),
            int(params.self_loops),
            params.gat.leaky_slope,
        ),
    ]
    tensors = params.tensors()
    chunks.append(struct.pack("<I", len(tensors)))
    for name, tensor in tensors:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.blob):
            raise FormatError(f"{self.path}: truncated file")
        out = self.blob[self.offset : self.offset + count]
        self.offset += count
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def done(self) -> None:
        if self.offset != len(self.blob):
            raise FormatError(f"{self.path}: {len(self.blob) - self.offset} trailing bytes")


def load_checkpoint(path) -> ModelParams:
    """Read a checkpoint back into float64 parameters."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic")
    (version,) = reader.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (
        dim_in,
        dim_hidden,
        num_classes,
        num_heads,
        dim_domain_hidden,
        grl_lambda,
        activation_code,
        tap_code,
        use_gat,
        self_loops,
        leaky_slope,
    ) = reader.unpack(_CONFIG_BLOCK.format)
    if activation_code >= len(ACTIVATIONS) or tap_code >= len(DOMAIN_TAPS):
        raise FormatError(f"{path}: unknown activation or tap code")

    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        payload = reader.take(4 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
    reader.done()

    try:
        params = ModelParams(
            projection=ProjectionParams(
                weight=tensors["projection.weight"], bias=tensors["projection.bias"]
            ),
            gat=GatParams(
                weights=[tensors[f"gat.weight.{k}"] for k in range(num_heads)],
                attn=[tensors[f"gat.attn.{k}"] for k in range(num_heads)],
                leaky_slope=leaky_slope,
            ),
            heads=HeadParams(
                task_weight=tensors["heads.task_weight"],
                task_bias=tensors["heads.task_bias"],
                domain_weight1=tensors["heads.domain_weight1"],
                domain_bias1=tensors["heads.domain_bias1"],
                domain_weight2=tensors["heads.domain_weight2"],
                domain_bias2=tensors["heads.domain_bias2"],
            ),
            grl_lambda=grl_lambda,
            activation=ACTIVATIONS[activation_code],
            domain_tap=DOMAIN_TAPS[tap_code],
            use_gat=bool(use_gat),
            self_loops=bool(self_loops),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing tensor {exc.args[0]!r}") from exc
    expected = (dim_in, dim_hidden, num_classes, dim_domain_hidden)
    actual = (params.dim_in, params.dim_hidden, params.num_classes, params.dim_domain_hidden)
    if expected != actual:
        raise FormatError(f"{path}: config block {expected} disagrees with tensors {actual}")
    return params
