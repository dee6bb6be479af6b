"""Training, evaluation and fraction sweeps for the fused segmentation network."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .gat import EdgeIndex, GatNetwork, NetConfig, extract_image_logits, network_forward_edges, predict
from .graph import MultimodalGraph, assemble_graph
from .metrics import Metrics, MetricsAccumulator
from .synth import SyntheticSample, sample_eds_points
from .tensor import ContractError

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 0.01
    epochs: int = 40
    fraction_range: tuple[float, float] = (0.0, 0.7)
    construction: str = "delaunay"
    k: int = 8
    seed: int = 0
    val_fraction: float = 0.05

    def __post_init__(self):
        self.fraction_range = tuple(float(v) for v in self.fraction_range)
        lo, hi = self.fraction_range
        if self.lr < 0:
            raise ContractError("learning rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch size must be at least 1")
        if not 0.0 <= lo <= hi <= 1.0:
            raise ContractError(f"fraction range {self.fraction_range} must lie within [0, 1]")
        if not 0.0 <= self.val_fraction <= 1.0:
            raise ContractError("validation fraction must lie in [0, 1]")
        if self.construction not in ("delaunay", "knn"):
            raise ContractError(f"unknown construction {self.construction!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fraction_range"] = list(self.fraction_range)
        return d


@dataclass
class TrainResult:
    net: GatNetwork
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = float("nan")


def split_dataset(samples: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list, list, list]:
    """Shuffled train / validation / test partition."""
    n = len(samples)
    if n < 10:
        raise ContractError(f"need at least 10 samples to split, got {n}")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5B117])).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    pick = lambda idx: [samples[i] for i in idx]
    return pick(order[:n_train]), pick(order[n_train : n_train + n_val]), pick(order[n_train + n_val :])


def sample_graph(
    sample: SyntheticSample, fraction: float, rng: np.random.Generator, construction: str = "delaunay", k: int = 8
) -> MultimodalGraph:
    """Fused graph for one sample with a fresh random EDS selection."""
    points = sample_eds_points(sample.validity, fraction, rng, sample.spectra)
    return assemble_graph(sample.bse, points, construction, k, sample.validity, sample.labels)


def graph_loss(graph: MultimodalGraph, net: GatNetwork) -> T.Tensor:
    logits = network_forward_edges(graph.features, EdgeIndex.from_graph(graph), net)
    n_img = graph.num_image_nodes
    labels = np.zeros(graph.num_nodes, dtype=np.int64)
    labels[:n_img] = graph.labels
    mask = np.zeros(graph.num_nodes, dtype=bool)
    mask[:n_img] = graph.validity
    return T.cross_entropy(logits, labels, mask)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def train(
    train_set: Sequence[SyntheticSample],
    net: GatNetwork,
    config: TrainConfig,
    val_set: Sequence[SyntheticSample] = (),
) -> TrainResult:
    """Adam on masked cross-entropy, resampling the EDS points at every request.

    One optimiser step per batch of ``batch_size`` graphs (gradients are
    averaged). After each epoch the validation split is scored at
    ``config.val_fraction``; the returned network holds the parameters of the
    best-scoring epoch (the last epoch when there is no validation split).
    """
    if not train_set:
        raise ContractError("training split is empty")
    rng = _rng(config.seed, 1)
    params = net.parameters()
    opt = T.Adam(params, lr=config.lr)
    result = TrainResult(net)
    best_state = None
    best_f1 = -np.inf
    lo, hi = config.fraction_range
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            net.zero_grad()
            for i in batch:
                fraction = rng.uniform(lo, hi) if hi > lo else lo
                graph = sample_graph(train_set[i], fraction, rng, config.construction, config.k)
                loss = graph_loss(graph, net)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss {value} at epoch {epoch}, batch {start // config.batch_size}, sample {i}"
                    )
                losses.append(value)
                T.scale(loss, 1.0 / len(batch)).backward()
            opt.step()
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_set:
            metrics = evaluate(net, val_set, config.val_fraction, config.seed, config.construction, config.k)
            row["val_f1"] = metrics.sample_f1
            if metrics.sample_f1 > best_f1:
                best_f1 = metrics.sample_f1
                best_state = {k: v.copy() for k, v in net.state().items()}
                result.best_epoch = epoch
        log.info("epoch %d: %s", epoch, row)
        result.history.append(row)
    if best_state is not None:
        net.load_state(best_state)
        result.best_val_f1 = float(best_f1)
    else:
        result.best_epoch = config.epochs - 1
    return result


def _threads() -> int:
    value = os.environ.get("GRAPHFUSE_THREADS")
    if value:
        n = int(value)
        if n < 1:
            raise ContractError("GRAPHFUSE_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


def predict_sample(
    net: GatNetwork, sample: SyntheticSample, fraction: float, rng: np.random.Generator, construction: str = "delaunay", k: int = 8
) -> np.ndarray:
    graph = sample_graph(sample, fraction, rng, construction, k)
    logits = network_forward_edges(graph.features, EdgeIndex.from_graph(graph), net)
    return predict(extract_image_logits(logits, graph))


def evaluate(
    net: GatNetwork,
    split: Sequence[SyntheticSample],
    fraction: float,
    seed: int = 0,
    construction: str = "delaunay",
    k: int = 8,
    threads: int | None = None,
) -> Metrics:
    """Score a split at a fixed EDS fraction over valid pixels only.

    Sample ``i`` draws its EDS points from a generator seeded by ``(seed, i)``,
    so results do not depend on evaluation order or thread count.
    """
    if not split:
        raise ContractError("cannot evaluate an empty split")
    if not 0.0 <= fraction <= 1.0:
        raise ContractError(f"EDS fraction must lie in [0, 1], got {fraction}")
    classes = net.config.classes

    def one(i):
        return predict_sample(net, split[i], fraction, _rng(seed, 2, i), construction, k)

    workers = min(threads or _threads(), len(split))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            preds = list(pool.map(one, range(len(split))))
    else:
        preds = [one(i) for i in range(len(split))]
    acc = MetricsAccumulator(classes, fraction)
    for sample, pred in zip(split, preds):
        acc.add(sample.labels, pred, sample.validity)
    return acc.result()


def sweep_fractions(
    net: GatNetwork,
    split: Sequence[SyntheticSample],
    fractions: Sequence[float],
    seed: int = 0,
    construction: str = "delaunay",
    k: int = 8,
) -> list[Metrics]:
    if not fractions:
        raise ContractError("need at least one fraction")
    return [evaluate(net, split, f, seed, construction, k) for f in fractions]


def ablation_bse_only(
    splits: tuple[Sequence, Sequence, Sequence],
    net_config: NetConfig,
    config: TrainConfig,
    net_seed: int = 0,
) -> tuple[Metrics, TrainResult]:
    """Train and test the same network with no EDS points at all (grid-only graphs)."""
    train_set, val_set, test_set = splits
    cfg = TrainConfig(**{**config.to_dict(), "fraction_range": (0.0, 0.0), "val_fraction": 0.0})
    result = train(train_set, GatNetwork(net_config, seed=net_seed), cfg, val_set)
    return evaluate(result.net, test_set, 0.0, config.seed), result
