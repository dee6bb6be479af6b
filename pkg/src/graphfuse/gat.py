"""Multi-head graph attention with scalar edge attributes.

For a directed edge ``j -> i`` and head ``h`` the attention logit is

    leaky_relu(a_s . W_t x_i + a_t . W_t x_j + a_e . W_e e_ij)

normalised by a softmax over all edges entering ``i``. The new feature of
``i`` is the attention-weighted sum of ``W_t x_j`` plus a bias, followed by
the layer activation. Hidden layers concatenate heads; the last layer
averages them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .graph import FEATURE_DIM, MultimodalGraph, add_self_loops
from .tensor import Adjacency, ContractError, Segments, ShapeError, Tensor

PARAM_NAMES = ("W_t", "W_e", "a_s", "a_t", "a_e", "bias")


@dataclass(frozen=True)
class NetConfig:
    layers: int = 3
    hidden: int = 56
    heads: int = 4
    in_dim: int = FEATURE_DIM
    classes: int = 50

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1 or self.classes < 1 or self.in_dim < 1:
            raise ContractError(f"invalid network config {self}")
        if self.layers > 1 and self.hidden % self.heads:
            raise ContractError(f"hidden width {self.hidden} is not divisible by {self.heads} heads")

    def to_dict(self) -> dict:
        return asdict(self)


class GatLayerParams:
    """Parameters of one attention layer; heads are stored side by side in column blocks."""

    def __init__(self, in_dim: int, head_dim: int, heads: int, concat: bool, rng: np.random.Generator | None = None):
        if heads < 1:
            raise ContractError("a layer needs at least one head")
        self.in_dim, self.head_dim, self.heads, self.concat = in_dim, head_dim, heads, concat
        out_dim = heads * head_dim if concat else head_dim

        def glorot(rows, cols, fan_in, fan_out):
            if rng is None:
                return np.zeros((rows, cols))
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(rows, cols))

        # per-head blocks are initialised independently, each with its own fan
        self.W_t = Tensor(np.hstack([glorot(in_dim, head_dim, in_dim, head_dim) for _ in range(heads)]), requires_grad=True)
        self.W_e = Tensor(np.hstack([glorot(1, head_dim, 1, head_dim) for _ in range(heads)]), requires_grad=True)
        self.a_s = Tensor(glorot(heads, head_dim, head_dim, 1), requires_grad=True)
        self.a_t = Tensor(glorot(heads, head_dim, head_dim, 1), requires_grad=True)
        self.a_e = Tensor(glorot(heads, head_dim, head_dim, 1), requires_grad=True)
        self.bias = Tensor(np.zeros((1, out_dim)), requires_grad=True)

    @property
    def out_dim(self) -> int:
        return self.bias.cols

    def tensors(self) -> list[Tensor]:
        return [getattr(self, name) for name in PARAM_NAMES]


class GatNetwork:
    def __init__(self, config: NetConfig | None = None, seed: int | None = 0):
        """Glorot-initialised network; ``seed=None`` gives all-zero parameters."""
        self.config = config or NetConfig()
        cfg = self.config
        rng = None if seed is None else np.random.default_rng(seed)
        self.layers: list[GatLayerParams] = []
        in_dim = cfg.in_dim
        for i in range(cfg.layers):
            last = i == cfg.layers - 1
            head_dim = cfg.classes if last else cfg.hidden // cfg.heads
            layer = GatLayerParams(in_dim, head_dim, cfg.heads, concat=not last, rng=rng)
            self.layers.append(layer)
            in_dim = layer.out_dim

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer.tensors()]

    def state(self) -> dict[str, np.ndarray]:
        return {
            f"layer{i}.{name}": t.data
            for i, layer in enumerate(self.layers)
            for name, t in zip(PARAM_NAMES, layer.tensors())
        }

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for key, t in zip(self.state(), self.parameters()):
            arr = np.asarray(state[key], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{key}: expected {t.shape}, got {arr.shape}")
            t.data[...] = arr

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()


@dataclass
class EdgeIndex:
    """Directed edges ready for attention: ``src -> dst`` with a length per edge."""

    src: Segments
    dst: Segments
    attr: np.ndarray
    adj: Adjacency

    @classmethod
    def from_arrays(cls, src, dst, attr, num_nodes: int) -> EdgeIndex:
        dst = np.asarray(dst, dtype=np.int64)
        if np.any(np.bincount(dst, minlength=num_nodes) == 0):
            raise ContractError("every node needs at least one incoming edge")
        return cls(
            Segments(src, num_nodes),
            Segments(dst, num_nodes),
            np.asarray(attr, dtype=np.float64).reshape(-1, 1),
            Adjacency(src, dst, num_nodes),
        )

    @classmethod
    def from_graph(cls, graph: MultimodalGraph) -> EdgeIndex:
        """Self-loops added, every undirected edge expanded to both directions."""
        looped = add_self_loops(graph)
        p, a = looped.edges.pairs, looped.edges.attrs
        both = p[:, 0] != p[:, 1]
        src = np.concatenate([p[:, 0], p[both, 1]])
        dst = np.concatenate([p[:, 1], p[both, 0]])
        attr = np.concatenate([a, a[both]])
        return cls.from_arrays(src, dst, attr, graph.num_nodes)


def attention(x: Tensor, edges: EdgeIndex, params: GatLayerParams) -> tuple[Tensor, Tensor]:
    """Projected node features (N x H*D) and attention coefficients (E x H)."""
    if x.cols != params.in_dim:
        raise ShapeError(f"layer expects {params.in_dim} input features, got {x.cols}")
    wx = T.matmul(x, params.W_t)
    target_score = T.head_dot(wx, params.a_s)
    source_score = T.head_dot(wx, params.a_t)
    edge_score = T.head_dot(T.matmul(Tensor(edges.attr), params.W_e), params.a_e)
    logits = T.add(T.add(T.gather_rows(target_score, edges.dst), T.gather_rows(source_score, edges.src)), edge_score)
    alpha = T.segment_softmax(T.leaky_relu(logits), edges.dst)
    return wx, alpha


def gat_layer_forward(x: Tensor, edges: EdgeIndex, params: GatLayerParams, concat_heads: bool | None = None) -> Tensor:
    """One attention layer before its activation."""
    concat = params.concat if concat_heads is None else concat_heads
    wx, alpha = attention(x, edges, params)
    out = T.weighted_aggregate(wx, alpha, edges.adj)
    if not concat:
        out = T.head_mean(out, params.heads)
    return T.add(out, params.bias)


def network_forward_edges(features: np.ndarray | Tensor, edges: EdgeIndex, net: GatNetwork) -> Tensor:
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.cols != net.config.in_dim:
        raise ShapeError(f"network expects {net.config.in_dim} input features, got {x.cols}")
    for i, layer in enumerate(net.layers):
        x = gat_layer_forward(x, edges, layer)
        if i < len(net.layers) - 1:
            x = T.elu(x)
    return x


def network_forward(graph: MultimodalGraph, net: GatNetwork) -> Tensor:
    """Per-node class logits (N x C) for every node, image and spectral."""
    if graph.features.shape[1] != net.config.in_dim:
        raise ShapeError(f"graph features are {graph.features.shape[1]}-d, network expects {net.config.in_dim}")
    return network_forward_edges(graph.features, EdgeIndex.from_graph(graph), net)


def extract_image_logits(logits: Tensor | np.ndarray, graph: MultimodalGraph) -> np.ndarray:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    h, w = graph.image_shape
    return data[: h * w].reshape(h, w, data.shape[1])


def predict(logit_map: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties go to the lowest class index."""
    return np.argmax(logit_map, axis=-1)
