import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfuse.delaunay import triangulate
from graphfuse.graph import (
    FEATURE_DIM,
    EdgeList,
    PointSet,
    add_self_loops,
    assemble_graph,
    build_grid_edges,
    connected_from,
    cross_modal_edges,
    delaunay_edges,
    knn_edges,
)
from graphfuse.tensor import ContractError


def pts(*xy):
    arr = np.array(xy, dtype=np.float64).reshape(-1, 2)
    return PointSet(arr, np.zeros((len(arr), 64)))


# -- brute-force oracles ----------------------------------------------------------


def incircle_det(a, b, c, d):
    """Exact in-circle determinant; positive when d is inside the circle of CCW (a, b, c)."""
    rows = []
    for p in (a, b, c):
        dx, dy = Fraction(p[0]) - Fraction(d[0]), Fraction(p[1]) - Fraction(d[1])
        rows.append((dx, dy, dx * dx + dy * dy))
    (a1, a2, a3), (b1, b2, b3), (c1, c2, c3) = rows
    return a1 * (b2 * c3 - b3 * c2) - a2 * (b1 * c3 - b3 * c1) + a3 * (b1 * c2 - b2 * c1)


def hull_size(p):
    """Points on the convex hull boundary, by checking every pair as a supporting line."""
    n = len(p)
    on_hull = set()
    for i, j in itertools.combinations(range(n), 2):
        side = [
            (p[j][0] - p[i][0]) * (p[k][1] - p[i][1]) - (p[j][1] - p[i][1]) * (p[k][0] - p[i][0])
            for k in range(n)
            if k not in (i, j)
        ]
        if all(s >= 0 for s in side) or all(s <= 0 for s in side):
            on_hull.update((i, j))
    return len(on_hull)


def brute_delaunay_check(p, tris, tol=1e-9):
    """Max normalised in-circle determinant of any point against any triangle (should be <= tol)."""
    worst = -math.inf
    for t in tris:
        a, b, c = (p[v] for v in t)
        scale = max(1.0, max(abs(v) for q in (a, b, c) for v in q)) ** 4
        for k in range(len(p)):
            if k in t:
                continue
            worst = max(worst, float(incircle_det(a, b, c, p[k])) / scale)
    return worst <= tol


class TestGrid:
    @pytest.mark.parametrize("h,w,count", [(1, 1, 0), (2, 2, 6), (3, 3, 20)])
    def test_counts(self, h, w, count):
        assert len(build_grid_edges(h, w)) == count

    def test_2x2_lengths(self):
        attrs = sorted(build_grid_edges(2, 2).attrs)
        assert attrs == [1.0] * 4 + [math.sqrt(2)] * 2

    @pytest.mark.parametrize("h,w", [(3, 3), (4, 7), (1, 5)])
    def test_matches_pairwise_scan(self, h, w):
        cells = [(r, c) for r in range(h) for c in range(w)]
        expected = {
            (i, j)
            for i, j in itertools.combinations(range(len(cells)), 2)
            if max(abs(cells[i][0] - cells[j][0]), abs(cells[i][1] - cells[j][1])) == 1
        }
        got = {tuple(p) for p in build_grid_edges(h, w).pairs.tolist()}
        assert got == expected


class TestDelaunay:
    def test_two_points(self):
        assert len(delaunay_edges(pts(0, 0, 1, 0))) == 1

    def test_triangle(self):
        edges, tris = triangulate([[0, 0], [1, 0], [0, 1]])
        assert len(edges) == 3 and len(tris) == 1

    def test_unit_square(self):
        edges, tris = triangulate([[0, 0], [1, 0], [1, 1], [0, 1]])
        assert len(edges) == 5 and len(tris) == 2

    def test_collinear_gives_path(self):
        edges, tris = triangulate([[3, 0], [0, 0], [1, 0], [2, 0]])
        assert len(tris) == 0
        assert sorted(map(tuple, edges.tolist())) == [(0, 3), (1, 2), (2, 3)]

    def test_too_few_points(self):
        with pytest.raises(ContractError):
            delaunay_edges(pts(0, 0))

    def test_duplicates_rejected(self):
        with pytest.raises(ContractError):
            triangulate([[0, 0], [1, 1], [0, 0]])

    @given(st.integers(3, 12), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_random_sets_match_oracle(self, n, seed):
        p = np.random.default_rng(seed).uniform(0, 10, size=(n, 2))
        edges, tris = triangulate(p)
        assert brute_delaunay_check(p.tolist(), tris.tolist())
        assert len(edges) == 3 * n - 3 - hull_size(p.tolist())

    @given(st.integers(3, 25), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_integer_lattice_points(self, n, seed):
        # many exact collinear and cocircular configurations
        rng = np.random.default_rng(seed)
        cells = rng.choice(36, size=min(n, 36), replace=False)
        p = np.stack([cells % 6, cells // 6], axis=1).astype(float)
        edges, tris = triangulate(p)
        assert brute_delaunay_check(p.tolist(), tris.tolist())
        if len(tris):
            assert len(edges) == 3 * len(p) - 3 - hull_size(p.tolist())

    def test_independent_of_input_order(self):
        p = np.random.default_rng(0).integers(0, 8, size=(40, 2)).astype(float)
        p = np.unique(p, axis=0)
        perm = np.random.default_rng(1).permutation(len(p))
        a, _ = triangulate(p)
        b, _ = triangulate(p[perm])
        relabel = {tuple(sorted((perm[i], perm[j]))) for i, j in b.tolist()}
        assert relabel == {tuple(e) for e in a.tolist()}

    def test_triangles_are_ccw(self):
        p = np.random.default_rng(2).uniform(size=(30, 2))
        _, tris = triangulate(p)
        a, b, c = p[tris[:, 0]], p[tris[:, 1]], p[tris[:, 2]]
        cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        assert np.all(cross > 0)


class TestKnn:
    def test_two_points(self):
        assert len(knn_edges(pts(0, 0, 1, 1), k=1)) == 1

    def test_collinear_example(self):
        e = knn_edges(pts(0, 0, 1, 0, 10, 0), k=1)
        assert sorted(map(tuple, e.pairs.tolist())) == [(0, 1), (1, 2)]

    @pytest.mark.parametrize("k", [4, 5, 20])
    def test_saturation(self, k):
        p = np.random.default_rng(k).uniform(size=(5, 2))
        assert len(knn_edges(PointSet(p, np.zeros((5, 64))), k)) == 10

    def test_each_point_has_k_neighbours(self):
        p = np.random.default_rng(0).uniform(size=(50, 2))
        e = knn_edges(PointSet(p, np.zeros((50, 64))), 8)
        degree = np.bincount(e.pairs.reshape(-1), minlength=50)
        assert degree.min() >= 8
        d = np.linalg.norm(p[:, None] - p[None], axis=2)
        np.fill_diagonal(d, np.inf)
        expected = set()
        for i in range(50):
            for j in np.argsort(d[i], kind="stable")[:8]:
                expected.add((min(i, j), max(i, j)))
        assert {tuple(x) for x in e.pairs.tolist()} == expected

    def test_too_few(self):
        with pytest.raises(ContractError):
            knn_edges(pts(1, 1))


class TestCrossModal:
    def test_colocated(self):
        e = cross_modal_edges((1, 1), pts(0, 0))
        assert len(e) == 1 and e.attrs[0] == 1.0

    def test_2x2_distances(self):
        e = cross_modal_edges((2, 2), pts(0, 0))
        assert len(e) == 4
        assert np.allclose(sorted(e.attrs), [1, math.sqrt(2), math.sqrt(2), math.sqrt(3)], atol=1e-15)

    def test_empty(self):
        with pytest.raises(ContractError):
            cross_modal_edges((2, 2), PointSet.empty())

    def test_lengths_at_least_one(self):
        rng = np.random.default_rng(8)
        cells = rng.choice(48, size=9, replace=False)
        e = cross_modal_edges((6, 8), PointSet(np.stack([cells % 8, cells // 8], 1).astype(float), np.zeros((9, 64))))
        assert e.attrs.min() == 1.0

    def test_matches_brute_force_nearest(self):
        rng = np.random.default_rng(9)
        h, w = 9, 11
        cells = rng.choice(h * w, size=13, replace=False)
        p = np.stack([cells % w, cells // w], axis=1).astype(float)
        e = cross_modal_edges((h, w), PointSet(p, np.zeros((13, 64))))
        pix = np.array([(c, r) for r in range(h) for c in range(w)], dtype=float)
        expected = set()
        for i, q in enumerate(pix):
            j = int(np.argmin(((p - q) ** 2).sum(1)))
            expected.add((i, h * w + j))
        for j, q in enumerate(p):
            i = int(np.argmin(((pix - q) ** 2).sum(1)))
            expected.add((i, h * w + j))
        assert {tuple(x) for x in e.pairs.tolist()} == expected


class TestAssemble:
    def test_grid_only(self):
        g = assemble_graph(np.zeros((2, 2)), PointSet.empty())
        assert g.num_nodes == 4 and len(g.edges) == 6

    def test_one_spectral_point(self):
        g = assemble_graph(np.zeros((2, 2)), pts(0, 0))
        assert g.num_nodes == 5 and len(g.edges) == 10
        assert sorted(np.round(g.edges.attrs**2).astype(int).tolist()) == [1] * 5 + [2] * 4 + [3]

    def test_zero_padding(self):
        payload = np.arange(64, dtype=float) / 100
        g = assemble_graph(np.full((2, 2), 0.25), PointSet(np.array([[1.0, 0.0]]), payload[None]))
        assert g.features.shape == (5, FEATURE_DIM)
        assert np.array_equal(g.features[0], np.r_[0.25, np.zeros(64)])
        assert np.array_equal(g.features[4], np.r_[0.0, payload])
        assert np.array_equal(g.coords[4], [1.0, 0.0, 1.0])

    def test_out_of_bounds(self):
        with pytest.raises(ContractError):
            assemble_graph(np.zeros((2, 2)), pts(2, 0))

    def test_bse_range(self):
        with pytest.raises(ContractError):
            assemble_graph(np.full((2, 2), 1.5), PointSet.empty())

    @pytest.mark.parametrize("construction", ["delaunay", "knn"])
    def test_connected_and_canonical(self, construction):
        rng = np.random.default_rng(3)
        cells = rng.choice(100, size=15, replace=False)
        p = np.stack([cells % 10, cells // 10], axis=1).astype(float)
        g = assemble_graph(rng.uniform(size=(10, 10)), PointSet(p, rng.uniform(size=(15, 64))), construction)
        assert connected_from(g).all()
        assert np.all(g.edges.pairs[:, 0] < g.edges.pairs[:, 1])
        assert len(np.unique(g.edges.pairs, axis=0)) == len(g.edges)

    def test_spectral_order_does_not_change_spectral_edges(self):
        # cross-modal ties go to the lowest spectral index, so only intra-spectral edges are order free
        rng = np.random.default_rng(4)
        cells = rng.choice(64, size=10, replace=False)
        p = np.stack([cells % 8, cells // 8], axis=1).astype(float)
        perm = rng.permutation(10)
        a = assemble_graph(np.zeros((8, 8)), PointSet(p, np.zeros((10, 64))))
        b = assemble_graph(np.zeros((8, 8)), PointSet(p[perm], np.zeros((10, 64))))
        relabel = np.r_[np.arange(64), 64 + perm]
        intra = lambda g: [(i, j) for i, j in g.edges.pairs.tolist() if i >= 64]
        mapped = {tuple(sorted((relabel[i], relabel[j]))) for i, j in intra(b)}
        assert mapped == set(intra(a))


class TestSelfLoops:
    def test_counts(self):
        g = assemble_graph(np.zeros((2, 2)), PointSet.empty())
        looped = add_self_loops(g)
        assert len(looped.edges) == 10 and np.sum(looped.edges.attrs == 0) == 4

    def test_single_node(self):
        looped = add_self_loops(assemble_graph(np.zeros((1, 1)), PointSet.empty()))
        assert looped.edges.pairs.tolist() == [[0, 0]]

    def test_existing_loop(self):
        with pytest.raises(ContractError):
            add_self_loops(add_self_loops(assemble_graph(np.zeros((1, 1)), PointSet.empty())))


def test_union_keeps_first_copy():
    a = EdgeList(np.array([[0, 1]]), np.array([1.0]))
    b = EdgeList(np.array([[0, 1], [1, 2]]), np.array([9.0, 2.0]))
    u = EdgeList.union(a, b)
    assert u.pairs.tolist() == [[0, 1], [1, 2]] and u.attrs.tolist() == [1.0, 2.0]
