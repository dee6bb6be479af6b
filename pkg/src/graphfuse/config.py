"""Run configuration loaded from a TOML file; every key has a default.

Example::

    seed = 7
    fractions = [0.01, 0.05, 0.1]

    [generator]
    height = 32
    width = 32
    seeds = 12

    [network]
    hidden = 56

    [train]
    epochs = 12
    construction = "delaunay"
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .gat import NetConfig
from .synth import GeneratorConfig
from .tensor import ContractError
from .train import TrainConfig

SWEEP_FRACTIONS = (0.0, 0.01, 0.05, 0.1, 0.3)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    fractions: tuple[float, ...] = SWEEP_FRACTIONS
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    network: dict = field(default_factory=lambda: {"layers": 3, "hidden": 56, "heads": 4})
    train: TrainConfig = field(default_factory=TrainConfig)

    def net_config(self, classes: int) -> NetConfig:
        return NetConfig(classes=classes, **self.network)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fractions": list(self.fractions),
            "generator": self.generator.to_dict(),
            "network": dict(self.network),
            # the training seed is always the top-level seed
            "train": {k: v for k, v in self.train.to_dict().items() if k != "seed"},
        }


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def config_from_dict(d: dict) -> RunConfig:
    _check_keys("top level", d, {"seed", "fractions", "generator", "network", "train"})
    gen = dict(d.get("generator", {}))
    _check_keys("generator", gen, [f.name for f in fields(GeneratorConfig)])
    net = dict(d.get("network", {}))
    _check_keys("network", net, {"layers", "hidden", "heads"})
    tr = dict(d.get("train", {}))
    # one seed drives splitting, initialisation, training and evaluation
    _check_keys("train", tr, [f.name for f in fields(TrainConfig) if f.name != "seed"])
    try:
        cfg = RunConfig(
            seed=int(d.get("seed", 0)),
            fractions=tuple(float(f) for f in d.get("fractions", SWEEP_FRACTIONS)),
            generator=GeneratorConfig.from_dict(gen),
            network={"layers": 3, "hidden": 56, "heads": 4, **net},
            train=TrainConfig(**tr, seed=int(d.get("seed", 0))),
        )
        cfg.net_config(len(cfg.generator.phases))
    except (TypeError, ContractError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if any(not 0.0 <= f <= 1.0 for f in cfg.fractions):
        raise ConfigError(f"fractions must lie in [0, 1], got {cfg.fractions}")
    g = cfg.generator
    if g.height < 1 or g.width < 1 or g.samples < 1 or g.seeds < len(g.phases):
        raise ConfigError(
            f"invalid generator settings: {g.height}x{g.width}, {g.samples} samples, "
            f"{g.seeds} seeds for {len(g.phases)} phases"
        )
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)
