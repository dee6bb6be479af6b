"""Command-line entry point: ``graphfuse <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import RunConfig, load_config
from .gat import GatNetwork
from .synth import check_confounded_pairs, generate_sample
from .train import TrainingDiverged, ablation_bse_only, evaluate, sample_graph, split_dataset, sweep_fractions, train

log = logging.getLogger("graphfuse")

DATASET_FILE = "dataset.gfuse"
CHECKPOINT_FILE = "checkpoint.gfck"


class CliError(Exception):
    pass


def _fraction(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"EDS fraction must lie in [0, 1], got {value}")
    return value


def _fraction_list(text: str) -> list[float]:
    values = [_fraction(t) for t in text.split(",") if t.strip()]
    if not values:
        raise argparse.ArgumentTypeError("need at least one fraction")
    return values


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    return cfg


def _load_splits(path, cfg: RunConfig):
    ds = formats.load_dataset(path)
    return ds, split_dataset(ds.samples, seed=cfg.seed)


def _pick_split(splits, name: str):
    if name == "all":
        return [s for part in splits for s in part]
    return splits[("train", "val", "test").index(name)]


def cmd_generate(args, cfg: RunConfig, out: Path) -> None:
    gen = cfg.generator
    check_confounded_pairs(gen.phases)
    samples = [generate_sample(gen, cfg.seed, i, keep_raw=args.raw) for i in range(gen.samples)]
    ds = formats.DatasetContainer(gen.height, gen.width, len(gen.phases), cfg.seed, cfg.to_dict(), samples)
    formats.save_dataset(out / DATASET_FILE, ds, raw_sidecar=args.raw)
    formats.write_json(out / "generate.json", {"config": cfg.to_dict(), "samples": len(samples)})
    print(f"wrote {len(samples)} samples to {out / DATASET_FILE}")


def _train_and_save(cfg: RunConfig, splits, classes: int, out: Path, tag: str = ""):
    train_cfg = cfg.train
    net = GatNetwork(cfg.net_config(classes), seed=cfg.seed)
    result = train(splits[0], net, train_cfg, splits[1])
    ckpt = formats.Checkpoint(
        result.net,
        {**cfg.to_dict(), "train": train_cfg.to_dict()},
        None if np.isnan(result.best_val_f1) else result.best_val_f1,
        result.best_epoch,
    )
    formats.save_checkpoint(out / f"{tag}{CHECKPOINT_FILE}", ckpt)
    formats.write_csv(
        out / f"{tag}history.csv",
        ["epoch", "train_loss", "val_f1"],
        [[h["epoch"], h["train_loss"], h.get("val_f1", "")] for h in result.history],
    )
    return result


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    ds, splits = _load_splits(args.data, cfg)
    result = _train_and_save(cfg, splits, ds.classes, out)
    print(f"best epoch {result.best_epoch}, val F1 {result.best_val_f1:.4f}; checkpoint in {out / CHECKPOINT_FILE}")


def _eval_settings(ckpt: formats.Checkpoint, cfg: RunConfig) -> tuple[str, int]:
    tc = ckpt.train_config.get("train", {})
    return tc.get("construction", cfg.train.construction), int(tc.get("k", cfg.train.k))


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> None:
    ckpt = formats.load_checkpoint(args.checkpoint)
    _, splits = _load_splits(args.data, cfg)
    construction, k = _eval_settings(ckpt, cfg)
    m = evaluate(ckpt.net, _pick_split(splits, args.split), args.fraction, cfg.seed, construction, k)
    formats.write_json(out / "metrics.json", {"split": args.split, "construction": construction, "seed": cfg.seed, **m.to_dict()})
    formats.write_confusion(out / "confusion.csv", m.confusion)
    print(f"fraction {args.fraction}: precision {m.sample_precision:.4f} recall {m.sample_recall:.4f} F1 {m.sample_f1:.4f}")


def cmd_sweep(args, cfg: RunConfig, out: Path) -> None:
    ckpt = formats.load_checkpoint(args.checkpoint)
    _, splits = _load_splits(args.data, cfg)
    construction, k = _eval_settings(ckpt, cfg)
    fractions = args.fractions or list(cfg.fractions)
    rows = sweep_fractions(ckpt.net, _pick_split(splits, args.split), fractions, cfg.seed, construction, k)
    formats.write_metrics_table(out / "sweep.csv", rows)
    formats.write_json(out / "sweep.json", {"split": args.split, "construction": construction, "seed": cfg.seed, "rows": [m.to_dict() for m in rows]})
    for m in rows:
        print(f"{m.fraction:>6}: P {m.sample_precision:.4f} R {m.sample_recall:.4f} F1 {m.sample_f1:.4f}")


def cmd_compare(args, cfg: RunConfig, out: Path) -> None:
    ds, splits = _load_splits(args.data, cfg)
    fractions = args.fractions or list(cfg.fractions)
    methods, rows = [], []
    for construction in ("delaunay", "knn"):
        run = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, construction=construction))
        result = _train_and_save(run, splits, ds.classes, out, tag=f"{construction}_")
        for m in sweep_fractions(result.net, splits[2], fractions, cfg.seed, construction, cfg.train.k):
            methods.append(construction)
            rows.append(m)
    formats.write_metrics_table(out / "compare.csv", rows, extra=[("construction", methods)])
    formats.write_json(out / "compare.json", [{"construction": c, **m.to_dict()} for c, m in zip(methods, rows)])
    for c, m in zip(methods, rows):
        print(f"{c:>8} {m.fraction:>6}: F1 {m.sample_f1:.4f}")


def cmd_ablation(args, cfg: RunConfig, out: Path) -> None:
    ds, splits = _load_splits(args.data, cfg)
    m, _ = ablation_bse_only(splits, cfg.net_config(ds.classes), cfg.train, net_seed=cfg.seed)
    formats.write_json(out / "ablation.json", m.to_dict())
    formats.write_confusion(out / "ablation_confusion.csv", m.confusion)
    print(f"BSE-only: precision {m.sample_precision:.4f} recall {m.sample_recall:.4f} F1 {m.sample_f1:.4f}")


def cmd_inspect(args, cfg: RunConfig, out: Path) -> None:
    ds = formats.load_dataset(args.data)
    if not 0 <= args.sample < len(ds.samples):
        raise CliError(f"sample index {args.sample} out of range (dataset has {len(ds.samples)})")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, args.sample]))
    graph = sample_graph(ds.samples[args.sample], args.fraction, rng, args.construction or cfg.train.construction, cfg.train.k)
    formats.export_graph(graph, out / "graph.txt")
    print(f"{graph.num_nodes} nodes, {len(graph.edges)} edges written to {out / 'graph.txt'}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="graphfuse", description="Graph-based BSE/EDS fusion for phase segmentation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--raw", action="store_true", help="also keep raw 3000-channel spectra in a sidecar")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train a network on a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (
        ("evaluate", cmd_evaluate, "score a checkpoint at one EDS fraction"),
        ("sweep", cmd_sweep, "score a checkpoint over several EDS fractions"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--checkpoint", type=Path, required=True)
        p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
        if name == "evaluate":
            p.add_argument("--fraction", type=_fraction, default=0.05)
        else:
            p.add_argument("--fractions", type=_fraction_list, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("compare-construction", parents=[common], help="train and compare Delaunay and kNN pipelines")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--fractions", type=_fraction_list, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablation", parents=[common], help="train and test a BSE-only baseline")
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("inspect-graph", parents=[common], help="dump the fused graph of one sample")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--fraction", type=_fraction, default=0.05)
    p.add_argument("--construction", choices=["delaunay", "knn"], default=None)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _run_config(args)
        args.func(args, cfg, args.out)
    except (CliError, ValueError, OSError, TrainingDiverged) as exc:
        print(f"graphfuse {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
