"""On-disk formats: dataset container, checkpoints, graph dumps and reports.

Binary files are little-endian with fixed layouts. Every writer goes through
:func:`atomic_write`, so an interrupted run never leaves a partial file.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gat import GatNetwork, NetConfig
from .graph import SPECTRUM_DIM, MultimodalGraph
from .metrics import Metrics
from .synth import SyntheticSample

DATASET_MAGIC = b"GFUSE1"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"GFCKPT"
CHECKPOINT_VERSION = 1

_DATASET_HEADER = struct.Struct("<6sHIIIIQ")
_CHECKPOINT_HEADER = struct.Struct("<6sHI")


class ContainerError(ValueError):
    pass


class FormatError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False).encode() + b"\n"


def _parse_json(raw: bytes, what: str):
    try:
        return json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt {what}: {exc}") from None


# -- dataset container -----------------------------------------------------------


@dataclass
class DatasetContainer:
    height: int
    width: int
    classes: int
    seed: int
    config: dict = field(default_factory=dict)
    samples: list[SyntheticSample] = field(default_factory=list)


def _sample_size(h: int, w: int) -> int:
    n = h * w
    return n * 8 + n * SPECTRUM_DIM * 8 + n * 2 + (n + 7) // 8


def encode_dataset(ds: DatasetContainer) -> bytes:
    h, w = ds.height, ds.width
    cfg = json.dumps(ds.config, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(_DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, h, w, ds.classes, len(ds.samples), ds.seed))
    out.write(struct.pack("<I", len(cfg)))
    out.write(cfg)
    for i, s in enumerate(ds.samples):
        if s.bse.shape != (h, w) or s.spectra.shape != (h, w, SPECTRUM_DIM):
            raise ContainerError(f"sample {i} does not match the {h}x{w} container shape")
        if s.labels.min() < 0 or s.labels.max() >= ds.classes:
            raise ContainerError(f"sample {i} has labels outside [0, {ds.classes})")
        out.write(np.ascontiguousarray(s.bse, dtype="<f8").tobytes())
        out.write(np.ascontiguousarray(s.spectra, dtype="<f8").tobytes())
        out.write(np.ascontiguousarray(s.labels, dtype="<u2").tobytes())
        out.write(np.packbits(np.asarray(s.validity, dtype=bool).reshape(-1), bitorder="little").tobytes())
    return out.getvalue()


def decode_dataset(buf: bytes) -> DatasetContainer:
    if len(buf) < _DATASET_HEADER.size + 4:
        if not DATASET_MAGIC.startswith(buf[:6]):
            raise FormatError("not a dataset container (bad magic)")
        raise TruncatedError(f"file truncated inside the header ({len(buf)} bytes)")
    magic, version, h, w, classes, count, seed = _DATASET_HEADER.unpack_from(buf, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"not a dataset container (magic {magic!r})")
    if version != DATASET_VERSION:
        raise VersionError(f"unsupported dataset version {version}, expected {DATASET_VERSION}")
    pos = _DATASET_HEADER.size
    (cfg_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if pos + cfg_len > len(buf):
        raise TruncatedError("file truncated inside the config block")
    config = _parse_json(buf[pos : pos + cfg_len], "dataset config block")
    pos += cfg_len
    n = h * w
    size = _sample_size(h, w)
    samples = []
    for i in range(count):
        if pos + size > len(buf):
            raise TruncatedError(f"file truncated in sample {i} (byte {len(buf)}, sample starts at {pos})")
        bse = np.frombuffer(buf, "<f8", n, pos).reshape(h, w).astype(np.float64)
        pos += n * 8
        spectra = np.frombuffer(buf, "<f8", n * SPECTRUM_DIM, pos).reshape(h, w, SPECTRUM_DIM).astype(np.float64)
        pos += n * SPECTRUM_DIM * 8
        labels = np.frombuffer(buf, "<u2", n, pos).reshape(h, w).astype(np.int64)
        pos += n * 2
        bits = np.frombuffer(buf, np.uint8, (n + 7) // 8, pos)
        validity = np.unpackbits(bits, count=n, bitorder="little").astype(bool).reshape(h, w)
        pos += (n + 7) // 8
        samples.append(SyntheticSample(bse, spectra, labels, validity))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} unexpected trailing bytes after sample {count - 1}")
    return DatasetContainer(h, w, classes, seed, config, samples)


def save_dataset(path, ds: DatasetContainer, raw_sidecar: bool = False) -> None:
    """Write the container; with ``raw_sidecar`` also ``<path>.raw.npy`` holding raw counts."""
    atomic_write(path, encode_dataset(ds))
    if raw_sidecar:
        if any(s.raw_spectra is None for s in ds.samples):
            raise ContainerError("raw sidecar requested but some samples have no raw spectra")
        buf = io.BytesIO()
        np.save(buf, np.stack([s.raw_spectra.astype("<u4") for s in ds.samples]))
        atomic_write(f"{path}.raw.npy", buf.getvalue())


def load_dataset(path) -> DatasetContainer:
    return decode_dataset(Path(path).read_bytes())


# -- checkpoints -------------------------------------------------------------------


@dataclass
class Checkpoint:
    net: GatNetwork
    train_config: dict = field(default_factory=dict)
    best_val_f1: float | None = None
    best_epoch: int | None = None


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    state = ckpt.net.state()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "network": ckpt.net.config.to_dict(),
        "train_config": ckpt.train_config,
        "best_val_f1": ckpt.best_val_f1,
        "best_epoch": ckpt.best_epoch,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    head = json.dumps(header, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(_CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(head)))
    out.write(head)
    for v in state.values():
        out.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return out.getvalue()


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < _CHECKPOINT_HEADER.size:
        raise TruncatedError("checkpoint truncated inside the header")
    magic, version, head_len = _CHECKPOINT_HEADER.unpack_from(buf, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    pos = _CHECKPOINT_HEADER.size
    if pos + head_len > len(buf):
        raise TruncatedError("checkpoint truncated inside the metadata block")
    header = _parse_json(buf[pos : pos + head_len], "checkpoint metadata")
    pos += head_len
    net = GatNetwork(NetConfig(**header["network"]), seed=None)
    state = {}
    for p in header["params"]:
        count = int(np.prod(p["shape"]))
        if pos + count * 8 > len(buf):
            raise TruncatedError(f"checkpoint truncated in parameter {p['name']}")
        state[p["name"]] = np.frombuffer(buf, "<f8", count, pos).reshape(p["shape"])
        pos += count * 8
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} unexpected trailing bytes in checkpoint")
    net.load_state(state)
    return Checkpoint(net, header["train_config"], header["best_val_f1"], header["best_epoch"])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


# -- graph dump -----------------------------------------------------------------------


def format_graph(graph: MultimodalGraph) -> str:
    """Line-oriented dump: one ``node`` line per node, one ``edge`` line per edge."""
    h, w = graph.image_shape
    lines = [
        "# graphfuse graph dump",
        "# node <id> <x> <y> <layer> <image|spectral> <nonzero feature indices>",
        "# edge <source> <target> <distance>",
        f"image_shape {h} {w}",
        f"nodes {graph.num_nodes}",
    ]
    for i in range(graph.num_nodes):
        x, y, layer = graph.coords[i]
        nz = np.flatnonzero(graph.features[i])
        nz_text = _ranges(nz) if nz.size else "-"
        kind = "image" if graph.is_image[i] else "spectral"
        lines.append(f"node {i} {x:.15g} {y:.15g} {int(layer)} {kind} {nz_text}")
    lines.append(f"edges {len(graph.edges)}")
    pairs, attrs = graph.edges.pairs, graph.edges.attrs
    for k in np.lexsort((pairs[:, 1], pairs[:, 0])):
        lines.append(f"edge {pairs[k, 0]} {pairs[k, 1]} {attrs[k]:.15e}")
    return "\n".join(lines) + "\n"


def _ranges(idx: np.ndarray) -> str:
    parts = []
    start = prev = int(idx[0])
    for v in idx[1:].tolist() + [None]:
        if v is not None and v == prev + 1:
            prev = v
            continue
        parts.append(str(start) if start == prev else f"{start}-{prev}")
        if v is not None:
            start = prev = v
    return ",".join(parts)


def export_graph(graph: MultimodalGraph, path) -> None:
    atomic_write(path, format_graph(graph).encode())


# -- reports --------------------------------------------------------------------------


def write_json(path, obj) -> None:
    atomic_write(path, _json_bytes(obj))


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write(path, buf.getvalue().encode())


def write_confusion(path, cm: np.ndarray) -> None:
    classes = cm.shape[0]
    write_csv(path, ["truth\\pred"] + [str(c) for c in range(classes)], [[c] + cm[c].tolist() for c in range(classes)])


METRIC_COLUMNS = ["fraction", "precision", "recall", "f1", "pooled_precision", "pooled_recall", "pooled_f1", "accuracy", "pixels"]


def metrics_row(m: Metrics) -> list:
    d = m.to_dict()
    return [d[c] for c in METRIC_COLUMNS]


def write_metrics_table(path, rows: Sequence[Metrics], extra: Sequence[tuple[str, Sequence]] = ()) -> None:
    """CSV with one row per Metrics; ``extra`` prepends named columns."""
    header = [name for name, _ in extra] + METRIC_COLUMNS
    body = [[col[i] for _, col in extra] + metrics_row(m) for i, m in enumerate(rows)]
    write_csv(path, header, body)
