"""Random inputs shared by the unit and acceptance tests."""

import numpy as np

from graphfuse.graph import PointSet, assemble_graph


def random_graph(rng: np.random.Generator, h: int, w: int, spectral: int, construction: str = "delaunay"):
    """Fused graph over an ``h x w`` image with ``spectral`` EDS points on distinct random pixels."""
    cells = rng.choice(h * w, size=spectral, replace=False)
    pts = np.stack([cells % w, cells // w], axis=1).astype(np.float64)
    payloads = rng.dirichlet(np.ones(64), size=spectral) if spectral else np.zeros((0, 64))
    return assemble_graph(rng.uniform(size=(h, w)), PointSet(pts, payloads), construction)


def random_small_graph(rng: np.random.Generator, construction: str = "delaunay"):
    h, w = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    return random_graph(rng, h, w, int(rng.integers(0, h * w + 1)), construction)
