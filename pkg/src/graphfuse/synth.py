"""Synthetic SEM-style samples: Voronoi phase maps, BSE images and count spectra.

Phases can share BSE statistics while differing in their spectra, so a
segmentation that only looks at the BSE image cannot tell them apart.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import SPECTRUM_DIM, PointSet
from .tensor import ContractError

NUM_CHANNELS = 3000
BIN_EDGES = np.array([(b * NUM_CHANNELS) // SPECTRUM_DIM for b in range(SPECTRUM_DIM + 1)])


@dataclass(frozen=True)
class PhaseSpec:
    phase_id: int
    bse_mean: float
    bse_sigma: float
    peaks: tuple[tuple[float, float, float], ...]  # (center channel, amplitude, width)

    def __post_init__(self):
        if not 0.0 <= self.bse_mean <= 1.0:
            raise ContractError(f"phase {self.phase_id}: BSE mean must lie in [0, 1]")
        if self.bse_sigma < 0:
            raise ContractError(f"phase {self.phase_id}: BSE sigma must be non-negative")
        if not self.peaks:
            raise ContractError(f"phase {self.phase_id}: at least one spectral peak is required")
        for center, amp, width in self.peaks:
            if not 0 <= center < NUM_CHANNELS:
                raise ContractError(f"phase {self.phase_id}: peak center {center} outside channel range")
            if amp <= 0 or width <= 0:
                raise ContractError(f"phase {self.phase_id}: peak amplitude and width must be positive")

    def expected_spectrum(self) -> np.ndarray:
        """Peak mixture over the channel range, normalised to unit mass."""
        ch = np.arange(NUM_CHANNELS, dtype=np.float64)
        s = np.zeros(NUM_CHANNELS)
        for center, amp, width in self.peaks:
            s += amp * np.exp(-0.5 * ((ch - center) / width) ** 2)
        return s / s.sum()


# Element-like lines (10 eV channels): O 52, Na 104, Al 149, Si 174, S 231, K 331, Ca 369, Fe 640.
DEFAULT_PHASES = (
    PhaseSpec(0, 0.30, 0.04, ((52, 0.4, 6), (174, 1.0, 7))),
    PhaseSpec(1, 0.30, 0.04, ((52, 0.4, 6), (104, 0.3, 6), (149, 0.3, 6), (174, 0.8, 7))),
    PhaseSpec(2, 0.55, 0.04, ((52, 0.3, 6), (369, 1.0, 8), (401, 0.15, 8))),
    PhaseSpec(3, 0.55, 0.04, ((52, 0.3, 6), (149, 0.3, 6), (174, 0.7, 7), (331, 0.6, 8))),
    PhaseSpec(4, 0.75, 0.04, ((231, 1.0, 7), (640, 0.6, 9), (706, 0.1, 9))),
    PhaseSpec(5, 0.92, 0.04, ((52, 0.2, 6), (70, 0.2, 6), (640, 1.0, 9), (706, 0.15, 9))),
)


@dataclass
class GeneratorConfig:
    height: int = 64
    width: int = 64
    samples: int = 200
    seeds: int = 40
    exposure: float = 500.0
    invalid_strip: int = 0
    phases: tuple[PhaseSpec, ...] = field(default=DEFAULT_PHASES)

    def __post_init__(self):
        self.phases = tuple(self.phases)
        ids = [p.phase_id for p in self.phases]
        if ids != list(range(len(ids))):
            raise ContractError(f"phase ids must be 0..{len(ids) - 1} in order, got {ids}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phases"] = [asdict(p) for p in self.phases]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> GeneratorConfig:
        d = dict(d)
        if "phases" in d:
            d["phases"] = tuple(
                PhaseSpec(p["phase_id"], p["bse_mean"], p["bse_sigma"], tuple(tuple(pk) for pk in p["peaks"]))
                for p in d["phases"]
            )
        return cls(**d)


@dataclass
class SyntheticSample:
    bse: np.ndarray  # (H, W) in [0, 1]
    spectra: np.ndarray  # (H, W, 64) reduced spectra
    labels: np.ndarray  # (H, W) phase ids
    validity: np.ndarray  # (H, W) bool
    raw_spectra: np.ndarray | None = None  # (H, W, 3000) counts, when kept


def generate_phase_map(h: int, w: int, phases: int, seeds: int, rng: np.random.Generator) -> np.ndarray:
    """Voronoi grains: every pixel takes the phase of its nearest seed point."""
    if seeds < phases:
        raise ContractError(f"need at least as many seeds ({seeds}) as phases ({phases})")
    if phases < 1:
        raise ContractError("need at least one phase")
    pos = rng.uniform(0.0, 1.0, size=(seeds, 2)) * np.array([w, h])
    seed_phase = np.concatenate([np.arange(phases), rng.integers(0, phases, size=seeds - phases)])
    rows, cols = np.mgrid[0:h, 0:w]
    pix = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(np.float64)
    d2 = ((pix[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
    return seed_phase[np.argmin(d2, axis=1)].reshape(h, w)


def _spec_lookup(labels: np.ndarray, specs) -> dict[int, PhaseSpec]:
    by_id = {s.phase_id: s for s in specs}
    missing = set(np.unique(labels).tolist()) - set(by_id)
    if missing:
        raise ContractError(f"no phase spec for labels {sorted(missing)}")
    return by_id


def render_bse(labels: np.ndarray, specs, rng: np.random.Generator) -> np.ndarray:
    by_id = _spec_lookup(labels, specs)
    ids = sorted(by_id)
    mean = np.array([by_id[i].bse_mean for i in ids])
    sigma = np.array([by_id[i].bse_sigma for i in ids])
    idx = np.searchsorted(ids, labels)
    noise = rng.standard_normal(labels.shape)
    return np.clip(mean[idx] + sigma[idx] * noise, 0.0, 1.0)


def render_spectra(labels: np.ndarray, specs, exposure: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson photon counts per channel around each phase's expected spectrum."""
    if exposure <= 0:
        raise ContractError("exposure must be positive")
    by_id = _spec_lookup(labels, specs)
    ids = sorted(by_id)
    expected = np.stack([by_id[i].expected_spectrum() * exposure for i in ids])
    idx = np.searchsorted(ids, labels.reshape(-1))
    out = np.empty((idx.size, NUM_CHANNELS), dtype=np.int64)
    for lo in range(0, idx.size, 256):
        out[lo : lo + 256] = rng.poisson(expected[idx[lo : lo + 256]])
    return out.reshape(*labels.shape, NUM_CHANNELS)


def reduce_spectrum(spectrum: np.ndarray) -> np.ndarray:
    """Sum channels into 64 contiguous bins and L1-normalise; works on any leading shape."""
    s = np.asarray(spectrum, dtype=np.float64)
    if s.shape[-1] != NUM_CHANNELS:
        raise ContractError(f"spectra must have {NUM_CHANNELS} channels, got {s.shape[-1]}")
    if np.any(s < 0):
        raise ContractError("spectral counts must be non-negative")
    binned = np.add.reduceat(s, BIN_EDGES[:-1], axis=-1)
    total = binned.sum(axis=-1, keepdims=True)
    return np.divide(binned, total, out=np.zeros_like(binned), where=total > 0)


def validity_mask(h: int, w: int, strip: int, rng: np.random.Generator) -> np.ndarray:
    """All-valid, or an invalid strip of ``strip`` pixels along one random image side."""
    mask = np.ones((h, w), dtype=bool)
    if strip > 0:
        side = int(rng.integers(0, 4))
        if side == 0:
            mask[:strip, :] = False
        elif side == 1:
            mask[-strip:, :] = False
        elif side == 2:
            mask[:, :strip] = False
        else:
            mask[:, -strip:] = False
    return mask


def check_confounded_pairs(specs, min_l1: float = 0.1) -> list[tuple[int, int]]:
    """Phases sharing BSE statistics; raises unless their reduced spectra differ by ``min_l1``."""
    pairs = []
    for i, a in enumerate(specs):
        for b in specs[i + 1 :]:
            if a.bse_mean == b.bse_mean and a.bse_sigma == b.bse_sigma:
                diff = np.abs(reduce_spectrum(a.expected_spectrum()) - reduce_spectrum(b.expected_spectrum())).sum()
                if diff < min_l1:
                    raise ContractError(
                        f"phases {a.phase_id} and {b.phase_id} share BSE statistics but their spectra differ by only {diff:.3f}"
                    )
                pairs.append((a.phase_id, b.phase_id))
    return pairs


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_sample(config: GeneratorConfig, seed: int, index: int, keep_raw: bool = False) -> SyntheticSample:
    rng = sample_rng(seed, index)
    h, w = config.height, config.width
    labels = generate_phase_map(h, w, len(config.phases), config.seeds, rng)
    bse = render_bse(labels, config.phases, rng)
    raw = render_spectra(labels, config.phases, config.exposure, rng)
    validity = validity_mask(h, w, config.invalid_strip, rng)
    raw[~validity] = 0
    reduced = reduce_spectrum(raw)
    return SyntheticSample(bse, reduced, labels, validity, raw if keep_raw else None)


def generate_dataset(config: GeneratorConfig, seed: int) -> list[SyntheticSample]:
    check_confounded_pairs(config.phases)
    return [generate_sample(config, seed, i) for i in range(config.samples)]


def sample_eds_points(
    validity: np.ndarray, fraction: float, rng: np.random.Generator, spectra: np.ndarray | None = None
) -> PointSet:
    """Draw ``round(fraction * valid)`` distinct valid pixel centres uniformly.

    With ``spectra`` (H x W x 64) the chosen pixels' reduced spectra become the payloads.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ContractError(f"EDS fraction must lie in [0, 1], got {fraction}")
    valid = np.flatnonzero(np.asarray(validity, dtype=bool).reshape(-1))
    count = int(round(fraction * valid.size))
    if count == 0:
        return PointSet.empty()
    chosen = np.sort(rng.choice(valid, size=count, replace=False))
    w = validity.shape[1]
    pts = np.stack([chosen % w, chosen // w], axis=1).astype(np.float64)
    if spectra is None:
        payloads = np.zeros((count, SPECTRUM_DIM))
    else:
        payloads = spectra.reshape(-1, spectra.shape[-1])[chosen]
    return PointSet(pts, payloads)
