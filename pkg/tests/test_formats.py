import json
import struct

import numpy as np
import pytest

from graphfuse import formats
from graphfuse.formats import Checkpoint, DatasetContainer, FormatError, TruncatedError, VersionError
from graphfuse.gat import GatNetwork, NetConfig, network_forward
from graphfuse.graph import PointSet, assemble_graph
from graphfuse.metrics import MetricsAccumulator
from graphfuse.synth import GeneratorConfig, generate_dataset
from helpers import random_graph


@pytest.fixture(scope="module")
def dataset():
    cfg = GeneratorConfig(height=5, width=7, samples=3, seeds=6, invalid_strip=1)
    return DatasetContainer(5, 7, 6, 11, cfg.to_dict(), generate_dataset(cfg, 11))


def same_samples(a, b):
    return all(
        getattr(x, f).tobytes() == getattr(y, f).tobytes() and getattr(x, f).shape == getattr(y, f).shape
        for x, y in zip(a, b)
        for f in ("bse", "spectra", "labels", "validity")
    )


class TestDataset:
    def test_round_trip(self, dataset, tmp_path):
        formats.save_dataset(tmp_path / "d.gfuse", dataset)
        back = formats.load_dataset(tmp_path / "d.gfuse")
        assert (back.height, back.width, back.classes, back.seed) == (5, 7, 6, 11)
        assert back.config == json.loads(json.dumps(dataset.config))
        assert len(back.samples) == 3 and same_samples(dataset.samples, back.samples)

    def test_encoding_is_stable(self, dataset):
        assert formats.encode_dataset(dataset) == formats.encode_dataset(formats.decode_dataset(formats.encode_dataset(dataset)))

    def test_truncation_names_sample(self, dataset):
        buf = formats.encode_dataset(dataset)
        with pytest.raises(TruncatedError, match="sample 2"):
            formats.decode_dataset(buf[:-10])
        with pytest.raises(TruncatedError):
            formats.decode_dataset(buf[:20])

    def test_bad_magic(self, dataset):
        buf = bytearray(formats.encode_dataset(dataset))
        buf[:6] = b"NOPE!!"
        with pytest.raises(FormatError):
            formats.decode_dataset(bytes(buf))

    def test_version(self, dataset):
        buf = bytearray(formats.encode_dataset(dataset))
        struct.pack_into("<H", buf, 6, 99)
        with pytest.raises(VersionError):
            formats.decode_dataset(bytes(buf))

    def test_trailing_bytes(self, dataset):
        with pytest.raises(FormatError):
            formats.decode_dataset(formats.encode_dataset(dataset) + b"\0")

    def test_error_kinds_are_distinct(self):
        kinds = {FormatError, VersionError, TruncatedError}
        assert all(not issubclass(a, b) for a in kinds for b in kinds if a is not b)

    def test_raw_sidecar(self, tmp_path):
        cfg = GeneratorConfig(height=3, width=3, samples=2, seeds=6)
        from graphfuse.synth import generate_sample

        samples = [generate_sample(cfg, 0, i, keep_raw=True) for i in range(2)]
        formats.save_dataset(tmp_path / "r.gfuse", DatasetContainer(3, 3, 6, 0, {}, samples), raw_sidecar=True)
        raw = np.load(tmp_path / "r.gfuse.raw.npy")
        assert raw.shape == (2, 3, 3, 3000) and np.array_equal(raw[1], samples[1].raw_spectra)

    def test_failed_write_leaves_no_file(self, tmp_path):
        with pytest.raises(TypeError):
            formats.write_json(tmp_path / "x.json", {"bad": object()})
        assert list(tmp_path.iterdir()) == []


class TestCheckpoint:
    def test_round_trip_logits(self, tmp_path):
        net = GatNetwork(NetConfig(layers=2, hidden=8, heads=2, classes=6), seed=3)
        g = random_graph(np.random.default_rng(0), 4, 4, 3)
        before = network_forward(g, net).data
        formats.save_checkpoint(tmp_path / "c.gfck", Checkpoint(net, {"lr": 0.01}, 0.5, 2))
        back = formats.load_checkpoint(tmp_path / "c.gfck")
        assert back.net.config == net.config and back.train_config == {"lr": 0.01}
        assert (back.best_val_f1, back.best_epoch) == (0.5, 2)
        a, b = net.state(), back.net.state()
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        assert network_forward(g, back.net).data.tobytes() == before.tobytes()

    def test_encoding_is_stable(self):
        ck = Checkpoint(GatNetwork(NetConfig(layers=1, heads=1, classes=2), seed=1), {}, None, None)
        once = formats.encode_checkpoint(ck)
        assert formats.encode_checkpoint(formats.decode_checkpoint(once)) == once

    def test_corruption(self):
        buf = formats.encode_checkpoint(Checkpoint(GatNetwork(NetConfig(layers=1, heads=1, classes=2), seed=1)))
        with pytest.raises(TruncatedError):
            formats.decode_checkpoint(buf[:-3])
        with pytest.raises(FormatError):
            formats.decode_checkpoint(b"XXXXXX" + buf[6:])
        bad = bytearray(buf)
        struct.pack_into("<H", bad, 6, 2)
        with pytest.raises(VersionError):
            formats.decode_checkpoint(bytes(bad))
        with pytest.raises(FormatError):
            formats.decode_checkpoint(buf[:12] + b"{" * (len(buf) - 12))


class TestGraphDump:
    def test_example(self):
        g = assemble_graph(np.full((2, 2), 0.5), PointSet(np.array([[0.0, 0.0]]), np.eye(64)[:1]))
        text = formats.format_graph(g)
        lines = text.splitlines()
        assert "image_shape 2 2" in lines and "nodes 5" in lines and "edges 10" in lines
        assert sum(l.startswith("node ") for l in lines) == 5
        assert sum(l.startswith("edge ") for l in lines) == 10
        assert "node 4 0 0 1 spectral 1" in lines
        assert "node 0 0 0 0 image 0" in lines

    def test_export(self, tmp_path):
        g = random_graph(np.random.default_rng(2), 3, 3, 4)
        formats.export_graph(g, tmp_path / "g.txt")
        assert (tmp_path / "g.txt").read_text() == formats.format_graph(g)


def test_metrics_table(tmp_path):
    acc = MetricsAccumulator(2, 0.05)
    acc.add(np.array([0, 1, 1]), np.array([0, 1, 0]))
    formats.write_metrics_table(tmp_path / "t.csv", [acc.result()], extra=[("construction", ["delaunay"])])
    header, row = (tmp_path / "t.csv").read_text().splitlines()
    assert header.split(",")[:5] == ["construction", "fraction", "precision", "recall", "f1"]
    assert row.startswith("delaunay,0.05,")
