"""Incremental Bowyer-Watson Delaunay triangulation.

The hull is closed with "ghost" triangles that share a single vertex at
infinity, so no finite super-triangle can cut off hull edges. A ghost
triangle ``(u, v, GHOST)`` stands for the outer half-plane of hull edge
``u -> v``; a point conflicts with it when it lies strictly outside that edge
or on the open segment.

Points are inserted along a Hilbert curve (ties broken lexicographically),
which keeps point-location walks short and makes the output a function of
the point set alone. Cocircular points are never treated as conflicting, so
ties go to whichever point was inserted first.

Predicates use a floating-point filter and fall back to exact rational
arithmetic when the filter cannot certify the sign.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .tensor import ContractError

GHOST = -1

_EPS = np.finfo(float).eps / 2
_CCW_BOUND = (3.0 + 16.0 * _EPS) * _EPS
_ICC_BOUND = (10.0 + 96.0 * _EPS) * _EPS


def orient(ax, ay, bx, by, cx, cy) -> int:
    """Sign of twice the signed area of triangle abc (+1 counter-clockwise)."""
    l = (ax - cx) * (by - cy)
    r = (ay - cy) * (bx - cx)
    det = l - r
    if abs(det) > _CCW_BOUND * (abs(l) + abs(r)) or _small_integers(ax, ay, bx, by, cx, cy):
        return (det > 0) - (det < 0)
    F = Fraction
    det = (F(ax) - F(cx)) * (F(by) - F(cy)) - (F(ay) - F(cy)) * (F(bx) - F(cx))
    return (det > 0) - (det < 0)


def incircle(ax, ay, bx, by, cx, cy, dx, dy) -> int:
    """+1 if d lies strictly inside the circle through counter-clockwise a, b, c."""
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    bc = bdx * cdy - cdx * bdy
    ca = cdx * ady - adx * cdy
    ab = adx * bdy - bdx * ady
    det = alift * bc + blift * ca + clift * ab
    perm = (
        alift * (abs(bdx * cdy) + abs(cdx * bdy))
        + blift * (abs(cdx * ady) + abs(adx * cdy))
        + clift * (abs(adx * bdy) + abs(bdx * ady))
    )
    if abs(det) > _ICC_BOUND * perm or _small_integers(ax, ay, bx, by, cx, cy, dx, dy):
        return (det > 0) - (det < 0)
    return incircle_exact(ax, ay, bx, by, cx, cy, dx, dy)


def _small_integers(*coords) -> bool:
    # integer coordinates below 2**10 keep every intermediate product below 2**53
    return all(c.is_integer() and -1024.0 < c < 1024.0 for c in coords)


def incircle_exact(ax, ay, bx, by, cx, cy, dx, dy) -> int:
    F = Fraction
    adx, ady = F(ax) - F(dx), F(ay) - F(dy)
    bdx, bdy = F(bx) - F(dx), F(by) - F(dy)
    cdx, cdy = F(cx) - F(dx), F(cy) - F(dy)
    det = (
        (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
    )
    return (det > 0) - (det < 0)


class _Mesh:
    def __init__(self, xs: list[float], ys: list[float]):
        self.xs = xs
        self.ys = ys
        self.verts: list[list[int]] = []
        self.nbrs: list[list[int]] = []
        self.alive: list[bool] = []
        self.last = 0

    def add(self, a: int, b: int, c: int) -> int:
        self.verts.append([a, b, c])
        self.nbrs.append([-1, -1, -1])
        self.alive.append(True)
        return len(self.verts) - 1

    def hull_edge(self, t: int) -> tuple[int, int] | None:
        a, b, c = self.verts[t]
        if c == GHOST:
            return a, b
        if a == GHOST:
            return b, c
        if b == GHOST:
            return c, a
        return None

    def conflicts(self, t: int, p: int) -> bool:
        xs, ys = self.xs, self.ys
        edge = self.hull_edge(t)
        if edge is None:
            a, b, c = self.verts[t]
            return incircle(xs[a], ys[a], xs[b], ys[b], xs[c], ys[c], xs[p], ys[p]) > 0
        u, v = edge
        o = orient(xs[u], ys[u], xs[v], ys[v], xs[p], ys[p])
        if o != 0:
            return o > 0
        # collinear with the hull edge: conflict only on the open segment
        dot = (xs[p] - xs[u]) * (xs[v] - xs[u]) + (ys[p] - ys[u]) * (ys[v] - ys[u])
        length2 = (xs[v] - xs[u]) ** 2 + (ys[v] - ys[u]) ** 2
        return 0 < dot < length2

    def locate(self, p: int) -> int:
        """Walk toward ``p`` and return a triangle in conflict with it."""
        xs, ys = self.xs, self.ys
        t = self.last if self.alive[self.last] else self.alive.index(True)
        px, py = xs[p], ys[p]
        for _ in range(4 * len(self.verts) + 16):
            verts = self.verts[t]
            if GHOST in verts:
                if self.conflicts(t, p):
                    return t
                # walks only start on a ghost; a crossing from inside always conflicts
                t = self.nbrs[t][verts.index(GHOST)]
                continue
            moved = False
            for i in range(3):
                u, v = verts[(i + 1) % 3], verts[(i + 2) % 3]
                if orient(xs[u], ys[u], xs[v], ys[v], px, py) < 0:
                    t = self.nbrs[t][i]
                    moved = True
                    break
            if not moved:
                return t
        # the visibility walk always terminates on a Delaunay mesh; this is a safety net
        for t, ok in enumerate(self.alive):
            if ok and self.conflicts(t, p):
                return t
        raise RuntimeError(f"no triangle conflicts with point {p}")

    def insert(self, p: int) -> None:
        start = self.locate(p)
        if not self.conflicts(start, p):
            # p sits on an edge/circle boundary of the located triangle; search neighbours
            start = next(n for n in self.nbrs[start] if self.conflicts(n, p))
        cavity = {start}
        stack = [start]
        while stack:
            t = stack.pop()
            for n in self.nbrs[t]:
                if n not in cavity and self.conflicts(n, p):
                    cavity.add(n)
                    stack.append(n)
        by_first: dict[int, int] = {}
        by_second: dict[int, int] = {}
        created = []
        for t in sorted(cavity):
            verts, nbrs = self.verts[t], self.nbrs[t]
            for i in range(3):
                n = nbrs[i]
                if n in cavity:
                    continue
                x, y = verts[(i + 1) % 3], verts[(i + 2) % 3]
                nt = self.add(x, y, p)
                self.nbrs[nt][2] = n
                self.nbrs[n][self.nbrs[n].index(t)] = nt
                by_first[x] = nt
                by_second[y] = nt
                created.append(nt)
        for nt in created:
            x, y, _ = self.verts[nt]
            self.nbrs[nt][0] = by_first[y]
            self.nbrs[nt][1] = by_second[x]
        for t in cavity:
            self.alive[t] = False
        self.last = created[-1]

    def edges(self) -> set[tuple[int, int]]:
        out = set()
        for t, ok in enumerate(self.alive):
            if not ok:
                continue
            verts = self.verts[t]
            for i in range(3):
                a, b = verts[i], verts[(i + 1) % 3]
                if a != GHOST and b != GHOST:
                    out.add((a, b) if a < b else (b, a))
        return out

    def triangles(self) -> list[tuple[int, int, int]]:
        return [
            tuple(v)
            for v, ok in zip(self.verts, self.alive)
            if ok and GHOST not in v
        ]


def _seed(mesh: _Mesh, a: int, b: int, c: int) -> None:
    xs, ys = mesh.xs, mesh.ys
    if orient(xs[a], ys[a], xs[b], ys[b], xs[c], ys[c]) < 0:
        b, c = c, b
    tris = [mesh.add(a, b, c), mesh.add(b, a, GHOST), mesh.add(c, b, GHOST), mesh.add(a, c, GHOST)]
    owner = {}
    for t in tris:
        v = mesh.verts[t]
        for i in range(3):
            owner[(v[(i + 1) % 3], v[(i + 2) % 3])] = (t, i)
    for (u, v), (t, i) in owner.items():
        mesh.nbrs[t][i] = owner[(v, u)][0]


def _hilbert_index(ix: int, iy: int, order: int) -> int:
    d = 0
    s = 1 << (order - 1)
    while s > 0:
        rx = 1 if ix & s else 0
        ry = 1 if iy & s else 0
        d += s * s * ((3 * rx) ^ ry)
        if ry == 0:
            if rx == 1:
                ix = s - 1 - ix
                iy = s - 1 - iy
            ix, iy = iy, ix
        s >>= 1
    return d


def _insertion_order(pts: np.ndarray, order: int = 16) -> np.ndarray:
    lo = pts.min(axis=0)
    span = float((pts.max(axis=0) - lo).max()) or 1.0
    cells = np.floor((pts - lo) / span * ((1 << order) - 1)).astype(np.int64)
    keys = [_hilbert_index(int(x), int(y), order) for x, y in cells]
    return np.lexsort((pts[:, 1], pts[:, 0], keys))


def triangulate(points) -> tuple[np.ndarray, np.ndarray]:
    """Delaunay triangulation of 2-D points.

    Returns ``(edges, triangles)``: canonical ``(i, j)`` pairs with ``i < j``
    sorted lexicographically, and counter-clockwise vertex triples. Collinear
    input yields the path through the points in sorted order and no triangles.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n < 2:
        raise ContractError(f"triangulation needs at least 2 points, got {n}")
    order = _insertion_order(pts)
    xs = [float(v) for v in pts[order, 0]]
    ys = [float(v) for v in pts[order, 1]]
    if len({(x, y) for x, y in zip(xs, ys)}) != n:
        raise ContractError("duplicate points cannot be triangulated")

    third = next(
        (k for k in range(2, n) if orient(xs[0], ys[0], xs[1], ys[1], xs[k], ys[k]) != 0),
        None,
    )
    if third is None:
        local = [(i, i + 1) for i in range(n - 1)]
        tris: list[tuple[int, int, int]] = []
    else:
        mesh = _Mesh(xs, ys)
        _seed(mesh, 0, 1, third)
        for p in range(2, n):
            if p != third:
                mesh.insert(p)
        local = sorted(mesh.edges())
        tris = mesh.triangles()

    edges = np.array(
        sorted(tuple(sorted((int(order[a]), int(order[b])))) for a, b in local),
        dtype=np.int64,
    ).reshape(-1, 2)
    triangles = np.array([[order[v] for v in t] for t in tris], dtype=np.int64).reshape(-1, 3)
    return edges, triangles
