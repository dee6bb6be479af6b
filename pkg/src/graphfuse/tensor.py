"""Dense 2-D tensors with tape-based reverse-mode gradients.

Only the handful of operations the attention network needs are provided.
Every op records a backward closure on its output; ``Tensor.backward`` walks
the recorded graph in reverse topological order and accumulates gradients
into every tensor created with ``requires_grad=True``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        # op outputs are fresh arrays already; only user-supplied data is copied
        arr = np.asarray(data, dtype=np.float64) if _parents else np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        # leaves accumulate across backward passes; interior buffers appear on demand
        self.grad = np.zeros_like(arr) if self.requires_grad and not _parents else None
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self) -> None:
        """Back-propagate from this scalar tensor into all tracked ancestors."""
        if self.data.size != 1:
            raise ShapeError(f"backward() starts from a 1x1 tensor, got {self.shape}")
        if not self.requires_grad:
            return
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            if node._backward is not None:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


class Segments:
    """Grouping of E entries into ``n`` segments, with a cached summation operator."""

    def __init__(self, ids, n: int | None = None):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ContractError("segment ids must be a nonempty 1-D array")
        if ids.min() < 0:
            raise ContractError("segment ids must be non-negative")
        self.ids = ids
        self.n = int(ids.max()) + 1 if n is None else int(n)
        if ids.max() >= self.n:
            raise ContractError(f"segment id {ids.max()} out of range for {self.n} segments")
        e = ids.size
        self._sum = sp.csr_matrix((np.ones(e), (ids, np.arange(e))), shape=(self.n, e))
        self.counts = np.bincount(ids, minlength=self.n)
        self._order = np.argsort(ids, kind="stable")
        self._starts = np.concatenate(([0], np.cumsum(self.counts)[:-1]))

    def __len__(self) -> int:
        return self.ids.size

    def sum(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self._sum @ values)

    def max(self, values: np.ndarray) -> np.ndarray:
        if np.any(self.counts == 0):
            raise ContractError("segment max over an empty segment")
        return np.maximum.reduceat(values[self._order], self._starts, axis=0)


def _as_segments(segments, n: int | None = None) -> Segments:
    return segments if isinstance(segments, Segments) else Segments(segments, n)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a single row broadcast over ``a``'s rows."""
    if b.shape != a.shape and not (b.rows == 1 and b.cols == a.cols):
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")

    def backward(g):
        _acc(a, g)
        _acc(b, g if b.shape == a.shape else g.sum(axis=0, keepdims=True))

    return Tensor(a.data + b.data, _parents=(a, b), _backward=backward)


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.data * c, _parents=(a,), _backward=lambda g: _acc(a, g * c))


def total(a: Tensor, weights: np.ndarray | None = None) -> Tensor:
    """Sum of all entries, optionally weighted entrywise by a constant array."""
    w = np.ones_like(a.data) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != a.shape:
        raise ShapeError(f"weights {w.shape} do not match tensor {a.shape}")
    return Tensor(np.sum(a.data * w), _parents=(a,), _backward=lambda g: _acc(a, g[0, 0] * w))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            _acc(p, g[:, lo:hi])

    return Tensor(np.hstack([p.data for p in parts]), _parents=tuple(parts), _backward=backward)


# -- gather / scatter along rows ----------------------------------------------


def gather_rows(x: Tensor, index) -> Tensor:
    """Row ``e`` of the result is row ``index[e]`` of ``x``."""
    seg = _as_segments(index, x.rows)
    if seg.n != x.rows:
        raise ShapeError(f"index addresses {seg.n} rows, tensor has {x.rows}")
    return Tensor(x.data[seg.ids], _parents=(x,), _backward=lambda g: _acc(x, seg.sum(g)))


def segment_sum(x: Tensor, segments, n: int | None = None) -> Tensor:
    """Sum rows of ``x`` that share a segment id; result has one row per segment."""
    seg = _as_segments(segments, n)
    if len(seg) != x.rows:
        raise ShapeError(f"{len(seg)} segment ids for {x.rows} rows")
    return Tensor(seg.sum(x.data), _parents=(x,), _backward=lambda g: _acc(x, g[seg.ids]))


def segment_softmax(logits: Tensor, segments, n: int | None = None) -> Tensor:
    """Softmax of each column over the entries sharing a segment id."""
    seg = _as_segments(segments, n)
    if len(seg) != logits.rows:
        raise ShapeError(f"{len(seg)} segment ids for {logits.rows} logits")
    shifted = logits.data - seg.max(logits.data)[seg.ids]
    ex = np.exp(shifted)
    out = ex / seg.sum(ex)[seg.ids]

    def backward(g):
        dot = seg.sum(g * out)[seg.ids]
        _acc(logits, out * (g - dot))

    return Tensor(out, _parents=(logits,), _backward=backward)


DENSE_LIMIT = 128


class Adjacency:
    """Directed edge set ``src[e] -> dst[e]`` over ``n`` nodes, laid out for sparse products.

    Graphs with at most ``DENSE_LIMIT`` nodes use dense matrices instead, which
    avoids the fixed cost of building sparse ones.
    """

    def __init__(self, src, dst, n: int):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.n = int(n)
        if self.src.shape != self.dst.shape or self.src.ndim != 1:
            raise ShapeError("src and dst must be 1-D arrays of equal length")
        self._perm = np.lexsort((self.src, self.dst))
        self._indices = self.src[self._perm]
        self._indptr = np.concatenate(([0], np.cumsum(np.bincount(self.dst, minlength=self.n))))
        self.dense = self.n <= DENSE_LIMIT
        self._flat = self.dst * self.n + self.src

    def matrix(self, weights: np.ndarray):
        """n x n matrix with ``weights[e]`` at (dst[e], src[e])."""
        if self.dense:
            return np.bincount(self._flat, weights=weights, minlength=self.n * self.n).reshape(self.n, self.n)
        return sp.csr_matrix((weights[self._perm], self._indices, self._indptr), shape=(self.n, self.n))


def weighted_aggregate(x: Tensor, w: Tensor, adj: Adjacency) -> Tensor:
    """Per-head weighted sum of source rows into targets.

    ``x`` is n x (H*D), ``w`` is E x H. Head block ``h`` of output row ``i`` is
    the sum over edges ``j -> i`` of ``w[e, h] * x[j, block h]``.
    """
    h = w.cols
    if x.rows != adj.n or w.rows != len(adj.src) or x.cols % h:
        raise ShapeError(f"weighted_aggregate: x {x.shape}, weights {w.shape}, {adj.n} nodes")
    d = x.cols // h
    mats = [adj.matrix(np.ascontiguousarray(w.data[:, k])) for k in range(h)]
    out = np.hstack([np.asarray(m @ x.data[:, k * d : (k + 1) * d]) for k, m in enumerate(mats)])

    def backward(g):
        if x.requires_grad:
            _acc(x, np.hstack([np.asarray(m.T @ g[:, k * d : (k + 1) * d]) for k, m in enumerate(mats)]))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for k in range(h):
                cols = slice(k * d, (k + 1) * d)
                gw[:, k] = np.einsum("ed,ed->e", g[adj.dst, cols], x.data[adj.src, cols])
            _acc(w, gw)

    return Tensor(out, _parents=(x, w), _backward=backward)


# -- multi-head helpers (column blocks of width head_dim, one per head) -------


def head_dot(x: Tensor, a: Tensor) -> Tensor:
    """Per-head inner products: ``x`` is R x (H*D), ``a`` is H x D, result R x H."""
    h, d = a.shape
    if x.cols != h * d:
        raise ShapeError(f"head_dot: {x.shape} does not split into {h} heads of {d}")
    x3 = x.data.reshape(x.rows, h, d)
    out = np.einsum("rhd,hd->rh", x3, a.data)

    def backward(g):
        _acc(x, (g[:, :, None] * a.data[None, :, :]).reshape(x.rows, h * d))
        _acc(a, np.einsum("rh,rhd->hd", g, x3))

    return Tensor(out, _parents=(x, a), _backward=backward)


def head_scale(x: Tensor, w: Tensor) -> Tensor:
    """Scale each head block of ``x`` (R x (H*D)) by the matching column of ``w`` (R x H)."""
    h = w.cols
    if x.rows != w.rows or x.cols % h:
        raise ShapeError(f"head_scale: {x.shape} vs weights {w.shape}")
    d = x.cols // h
    x3 = x.data.reshape(x.rows, h, d)

    def backward(g):
        g3 = g.reshape(x.rows, h, d)
        _acc(x, (g3 * w.data[:, :, None]).reshape(x.rows, h * d))
        _acc(w, np.einsum("rhd,rhd->rh", g3, x3))

    out = (x3 * w.data[:, :, None]).reshape(x.rows, h * d)
    return Tensor(out, _parents=(x, w), _backward=backward)


def head_mean(x: Tensor, heads: int) -> Tensor:
    if x.cols % heads:
        raise ShapeError(f"head_mean: {x.cols} columns do not split into {heads} heads")
    d = x.cols // heads
    out = x.data.reshape(x.rows, heads, d).mean(axis=1)

    def backward(g):
        _acc(x, np.tile(g / heads, (1, heads)))

    return Tensor(out, _parents=(x,), _backward=backward)


# -- activations ----------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky slope must lie in (0, 1), got {slope}")
    pos = x.data >= 0.0
    return Tensor(
        np.where(pos, x.data, slope * x.data),
        _parents=(x,),
        _backward=lambda g: _acc(x, np.where(pos, g, slope * g)),
    )


def elu(x: Tensor) -> Tensor:
    pos = x.data >= 0.0
    neg = np.expm1(np.minimum(x.data, 0.0))
    return Tensor(
        np.where(pos, x.data, neg),
        _parents=(x,),
        _backward=lambda g: _acc(x, np.where(pos, g, g * (neg + 1.0))),
    )


# -- loss -----------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean negative log-likelihood over the rows selected by ``mask``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if labels.shape != (n,) or mask.shape != (n,):
        raise ShapeError(f"labels {labels.shape} / mask {mask.shape} do not match {n} rows")
    count = int(mask.sum())
    if count == 0:
        raise ContractError("cross_entropy needs at least one masked row")
    rows = np.flatnonzero(mask)
    lab = labels[rows]
    if lab.min() < 0 or lab.max() >= c:
        raise ContractError(f"labels must lie in [0, {c})")
    z = logits.data[rows]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(count), lab].sum() / count

    def backward(g):
        p = np.exp(logp)
        p[np.arange(count), lab] -= 1.0
        full = np.zeros_like(logits.data)
        full[rows] = p * (g[0, 0] / count)
        _acc(logits, full)

    return Tensor(loss, _parents=(logits,), _backward=backward)


# -- optimisation -----------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 0.01, **kw):
        self.params = list(params)
        self.state = AdamState(lr=lr, **kw)

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# -- verification -----------------------------------------------------------------


def grad_check(
    computation: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    floor: float = 1e-5,
) -> float:
    """Worst relative disagreement between reverse-mode and central-difference gradients.

    The relative error of an entry is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``;
    ``floor`` keeps entries whose true gradient is zero from dividing roundoff by zero.
    A central difference of an O(1) loss carries roundoff near ``|f| * 2**-52 / eps``
    (about 2e-10 at ``eps=1e-6``), so the default floor sits well above that noise.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    for p in params:
        p.zero_grad()
    loss = computation()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = computation().item()
            flat[k] = orig - eps
            down = computation().item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError("loss is not finite under perturbation")
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
