"""Run configuration: one JSON document with strict validation.

Unknown keys are rejected everywhere so typos fail loudly instead of
silently using defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .bench import BenchSettings, VARIANTS
from .errors import ConfigError
from .network import NetworkConfig, OptimSettings, PRESETS


@dataclass
class OctreeSection:
    depth: int = 8
    scale: float | None = None

    def __post_init__(self):
        if not 1 <= self.depth <= 21:
            raise ConfigError("octree.depth must be in [1, 21]")
        if self.scale is not None and self.scale <= 0:
            raise ConfigError("octree.scale must be positive")


@dataclass
class DatasetSection:
    kind: str = "two-spheres"
    n_clouds: int = 5
    points_per_cloud: int = 2000
    num_classes: int = 2
    depth: int = 7
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("two-spheres", "octants"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.n_clouds < 1 or self.points_per_cloud < 1:
            raise ConfigError("dataset sizes must be >= 1")


@dataclass
class NetworkSection:
    preset: str | None = "base"
    channels: int | None = None
    blocks: tuple[int, int, int, int] | None = None
    point_number: int | None = None
    dilation: int | None = None
    num_classes: int | None = None
    features: tuple[str, ...] | None = None
    octree_depth: int | None = None

    def __post_init__(self):
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")

    def build(self) -> NetworkConfig:
        overrides = {
            k: v for k, v in dataclasses.asdict(self).items()
            if k != "preset" and v is not None
        }
        if "blocks" in overrides:
            overrides["blocks"] = tuple(overrides["blocks"])
        if "features" in overrides:
            overrides["features"] = tuple(overrides["features"])
        if self.preset is not None:
            return NetworkConfig.preset(self.preset, **overrides)
        return NetworkConfig(**overrides)


@dataclass
class TrainingSection:
    steps: int = 300
    lr: float = 3e-3
    weight_decay: float = 0.05
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("training.steps and batch_size must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("training.lr and weight_decay must be >= 0")

    def build(self) -> OptimSettings:
        return OptimSettings(steps=self.steps, lr=self.lr,
                             weight_decay=self.weight_decay,
                             batch_size=self.batch_size, seed=self.seed)


@dataclass
class BenchSection:
    sizes: tuple[int, ...] = (10_000, 20_000, 50_000, 100_000, 200_000)
    variants: tuple[str, ...] = ("octree",)
    trials: int = 3
    warmup: int = 2
    channels: int = 96
    heads: int = 6
    point_number: int = 32
    k_neighbors: int = 32
    cubic_window: int = 6
    depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown bench variant {v!r}")
        if any(n < 1 for n in self.sizes):
            raise ConfigError("bench sizes must be >= 1")

    def build(self) -> BenchSettings:
        return BenchSettings(channels=self.channels, heads=self.heads,
                             point_number=self.point_number,
                             k_neighbors=self.k_neighbors,
                             cubic_window=self.cubic_window, depth=self.depth,
                             trials=self.trials, warmup=self.warmup,
                             seed=self.seed)


@dataclass
class OutputSection:
    checkpoint: str | None = None
    loss_curve: str | None = None
    labels: str | None = None
    bench_csv: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    threads: int | None = None
    inputs: tuple[str, ...] = ()
    octree: OctreeSection = field(default_factory=OctreeSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    bench: BenchSection = field(default_factory=BenchSection)
    outputs: OutputSection = field(default_factory=OutputSection)


_SECTIONS = {
    "octree": OctreeSection,
    "dataset": DatasetSection,
    "network": NetworkSection,
    "training": TrainingSection,
    "bench": BenchSection,
    "outputs": OutputSection,
}


def _from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} section must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def parse_run_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    top_names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - top_names
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _from_dict(_SECTIONS[key], value)
        elif key == "inputs":
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_run_config(path: str) -> RunConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_run_config(data)
