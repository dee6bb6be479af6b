"""Joint graph over image pixels and sparse spectral sample points.

Image pixel ``(row, col)`` becomes node ``row * W + col`` located at
``(x=col, y=row, layer=0)``. Spectral points follow the image nodes in the
order given and sit on layer 1. Edges come in three groups: an 8-neighbour
pixel grid, a Delaunay (or kNN) graph over the spectral points, and
cross-layer nearest-neighbour links. Each edge carries its Euclidean length.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order
from scipy.spatial import cKDTree

from .delaunay import triangulate
from .tensor import ContractError

SPECTRUM_DIM = 64
FEATURE_DIM = 1 + SPECTRUM_DIM
SPECTRAL_LAYER = 1.0


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray  # (N, 2) x, y in pixel units
    payloads: np.ndarray  # (N, 64)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        pay = np.asarray(self.payloads, dtype=np.float64).reshape(len(pts), -1) if len(pts) else np.zeros((0, SPECTRUM_DIM))
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ContractError("point set contains duplicate coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "payloads", pay)

    @classmethod
    def empty(cls) -> PointSet:
        return cls(np.zeros((0, 2)), np.zeros((0, SPECTRUM_DIM)))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class EdgeList:
    pairs: np.ndarray  # (E, 2) int64, source <= target
    attrs: np.ndarray  # (E,) float64 distances

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        attrs = np.asarray(self.attrs, dtype=np.float64).reshape(-1)
        if len(pairs) != len(attrs):
            raise ContractError(f"{len(pairs)} edges but {len(attrs)} attributes")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "attrs", attrs)

    @classmethod
    def empty(cls) -> EdgeList:
        return cls(np.zeros((0, 2), dtype=np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.pairs)

    def shifted(self, offset: int) -> EdgeList:
        return EdgeList(self.pairs + offset, self.attrs)

    @staticmethod
    def union(*parts: EdgeList) -> EdgeList:
        """Concatenate edge lists, keeping the first copy of any repeated pair."""
        pairs = np.concatenate([p.pairs for p in parts])
        attrs = np.concatenate([p.attrs for p in parts])
        _, first = np.unique(pairs, axis=0, return_index=True)
        keep = np.sort(first)
        return EdgeList(pairs[keep], attrs[keep])


def _canonical(src, dst, attrs) -> EdgeList:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    pairs = np.stack([lo, hi], axis=1)
    attrs = np.asarray(attrs, dtype=np.float64)
    if len(pairs) == 0:
        return EdgeList.empty()
    uniq, first = np.unique(pairs, axis=0, return_index=True)
    return EdgeList(uniq, attrs[first])


@lru_cache(maxsize=8)
def _grid_edges_cached(h: int, w: int) -> EdgeList:
    ids = np.arange(h * w).reshape(h, w)
    src, dst, dist = [], [], []
    # right, down, down-right, down-left
    for dr, dc, d in ((0, 1, 1.0), (1, 0, 1.0), (1, 1, np.sqrt(2.0)), (1, -1, np.sqrt(2.0))):
        r0, r1 = 0, h - dr
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = ids[r0:r1, c0:c1].reshape(-1)
        b = ids[r0 + dr : r1 + dr, c0 + dc : c1 + dc].reshape(-1)
        src.append(a)
        dst.append(b)
        dist.append(np.full(a.size, d))
    return _canonical(np.concatenate(src), np.concatenate(dst), np.concatenate(dist))


def build_grid_edges(h: int, w: int) -> EdgeList:
    if h < 1 or w < 1:
        raise ContractError(f"image shape must be positive, got {h}x{w}")
    return _grid_edges_cached(int(h), int(w))


def delaunay_edges(points: PointSet) -> EdgeList:
    if len(points) < 2:
        raise ContractError(f"Delaunay edges need at least 2 points, got {len(points)}")
    pairs, _ = triangulate(points.points)
    p = points.points
    return EdgeList(pairs, np.linalg.norm(p[pairs[:, 0]] - p[pairs[:, 1]], axis=1))


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


def knn_edges(points: PointSet, k: int = 8) -> EdgeList:
    n = len(points)
    if n < 2:
        raise ContractError(f"kNN edges need at least 2 points, got {n}")
    if k < 1:
        raise ContractError(f"k must be at least 1, got {k}")
    k = min(k, n - 1)
    p = points.points
    src, dst = [], []
    for lo in range(0, n, 1024):
        d2 = _sq_dist(p[lo : lo + 1024], p)
        rows = np.arange(d2.shape[0])
        d2[rows, lo + rows] = np.inf
        # stable sort: equal distances resolve to the lower point index
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        src.append(np.repeat(lo + rows, k))
        dst.append(nearest.reshape(-1))
    src, dst = np.concatenate(src), np.concatenate(dst)
    return _canonical(src, dst, np.linalg.norm(p[src] - p[dst], axis=1))


def _nearest_brute(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    out = np.empty(len(query), dtype=np.int64)
    step = max(1, 2_000_000 // max(1, len(ref)))
    for lo in range(0, len(query), step):
        out[lo : lo + step] = np.argmin(_sq_dist(query[lo : lo + step], ref), axis=1)
    return out


def _nearest(query: np.ndarray, ref: np.ndarray, k: int = 8) -> np.ndarray:
    """Index of the nearest ``ref`` row for each ``query`` row; ties go to the lowest index."""
    if len(ref) <= k:
        return _nearest_brute(query, ref)
    _, cand = cKDTree(ref).query(query, k=k)
    d2 = ((query[:, None, :] - ref[cand]) ** 2).sum(axis=2)
    best = d2.min(axis=1, keepdims=True)
    tied = d2 == best
    out = np.where(tied, cand, np.iinfo(np.int64).max).min(axis=1)
    # every candidate tied: more equidistant points may lie beyond the k returned
    overflow = tied.all(axis=1)
    if overflow.any():
        out[overflow] = _nearest_brute(query[overflow], ref)
    return out


def pixel_coords(h: int, w: int) -> np.ndarray:
    """(x, y) of every pixel in row-major node order."""
    rows, cols = np.divmod(np.arange(h * w), w)
    return np.stack([cols, rows], axis=1).astype(np.float64)


def cross_modal_edges(image_shape: tuple[int, int], spectral_points: PointSet) -> EdgeList:
    """Link every pixel to its nearest spectral point and vice versa, in the lifted space.

    Spectral node ids are offset by ``H * W``. Both layers share the same
    planar coordinates, so the lifted distance is ``sqrt(planar^2 + 1)`` and
    the planar nearest neighbour is also the lifted one.
    """
    if len(spectral_points) == 0:
        raise ContractError("cross-modal edges need at least one spectral point")
    h, w = image_shape
    pix = pixel_coords(h, w)
    spec = spectral_points.points
    n_img = h * w
    img_to_spec = _nearest(pix, spec)
    spec_to_img = _nearest(spec, pix)
    src = np.concatenate([np.arange(n_img), n_img + np.arange(len(spec))])
    dst = np.concatenate([n_img + img_to_spec, spec_to_img])
    planar = np.concatenate([pix - spec[img_to_spec], spec - pix[spec_to_img]])
    lifted = np.sqrt((planar**2).sum(axis=1) + SPECTRAL_LAYER**2)
    return _canonical(src, dst, lifted)


@dataclass
class MultimodalGraph:
    coords: np.ndarray  # (N, 3): x, y, layer
    features: np.ndarray  # (N, 65)
    edges: EdgeList
    image_shape: tuple[int, int]
    is_image: np.ndarray  # (N,) bool
    validity: np.ndarray  # (H*W,) bool
    labels: np.ndarray | None = None  # (H*W,) int

    @property
    def num_nodes(self) -> int:
        return len(self.coords)

    @property
    def num_image_nodes(self) -> int:
        h, w = self.image_shape
        return h * w


def assemble_graph(
    bse: np.ndarray,
    spectral: PointSet,
    construction: str = "delaunay",
    k: int = 8,
    validity: np.ndarray | None = None,
    labels: np.ndarray | None = None,
) -> MultimodalGraph:
    """Build the fused graph for one image and its spectral samples.

    ``construction`` selects how spectral points are linked to each other:
    ``"delaunay"`` or ``"knn"`` (using ``k`` neighbours).
    """
    bse = np.asarray(bse, dtype=np.float64)
    if bse.ndim != 2:
        raise ContractError(f"BSE image must be 2-D, got shape {bse.shape}")
    if bse.size and (bse.min() < 0.0 or bse.max() > 1.0):
        raise ContractError("BSE values must be normalised to [0, 1]")
    if construction not in ("delaunay", "knn"):
        raise ContractError(f"unknown construction {construction!r}")
    h, w = bse.shape
    n_img, n_spec = h * w, len(spectral)
    pts = spectral.points
    if n_spec and (pts.min() < 0 or pts[:, 0].max() > w - 1 or pts[:, 1].max() > h - 1):
        raise ContractError("spectral points must lie within the image bounds")
    if spectral.payloads.shape[1] != SPECTRUM_DIM and n_spec:
        raise ContractError(f"spectral payloads must be {SPECTRUM_DIM}-d")

    coords = np.zeros((n_img + n_spec, 3))
    coords[:n_img, :2] = pixel_coords(h, w)
    coords[n_img:, :2] = pts
    coords[n_img:, 2] = SPECTRAL_LAYER

    features = np.zeros((n_img + n_spec, FEATURE_DIM))
    features[:n_img, 0] = bse.reshape(-1)
    features[n_img:, 1:] = spectral.payloads

    parts = [build_grid_edges(h, w)]
    if n_spec >= 2:
        intra = delaunay_edges(spectral) if construction == "delaunay" else knn_edges(spectral, k)
        parts.append(intra.shifted(n_img))
    if n_spec >= 1:
        parts.append(cross_modal_edges((h, w), spectral))
    edges = EdgeList.union(*parts) if len(parts) > 1 else parts[0]

    is_image = np.zeros(n_img + n_spec, dtype=bool)
    is_image[:n_img] = True
    validity = np.ones(n_img, dtype=bool) if validity is None else np.asarray(validity, dtype=bool).reshape(-1)
    if validity.size != n_img:
        raise ContractError(f"validity mask has {validity.size} entries for {n_img} pixels")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.size != n_img:
            raise ContractError(f"labels have {labels.size} entries for {n_img} pixels")
    return MultimodalGraph(coords, features, edges, (h, w), is_image, validity, labels)


def add_self_loops(graph: MultimodalGraph) -> MultimodalGraph:
    """Append one zero-length self-loop per node."""
    pairs = graph.edges.pairs
    if len(pairs) and np.any(pairs[:, 0] == pairs[:, 1]):
        raise ContractError("graph already contains self-loops")
    n = graph.num_nodes
    loops = np.stack([np.arange(n), np.arange(n)], axis=1)
    edges = EdgeList(np.concatenate([pairs, loops]), np.concatenate([graph.edges.attrs, np.zeros(n)]))
    return MultimodalGraph(
        graph.coords, graph.features, edges, graph.image_shape, graph.is_image, graph.validity, graph.labels
    )


def connected_from(graph: MultimodalGraph, start: int = 0) -> np.ndarray:
    """Boolean reachability mask from ``start`` by breadth-first search."""
    n = graph.num_nodes
    p = graph.edges.pairs
    adj = sp.coo_matrix((np.ones(len(p)), (p[:, 0], p[:, 1])), shape=(n, n))
    order = breadth_first_order(adj, start, directed=False, return_predecessors=False)
    seen = np.zeros(n, dtype=bool)
    seen[order] = True
    return seen
