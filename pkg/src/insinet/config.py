"""Run configuration documents and the run directory layout.

A config is a YAML (or JSON) mapping with these top-level keys, all optional::

    name: demo              # run directory name under the run root
    seed: 0                 # root seed; every stage seed is derived from it
    out: runs               # run root (env INSINET_RUN_ROOT overrides the default)
    deterministic: true
    scene:   {width, height, n_mines, change_events, min_radius, max_radius,
              texture_sigma, noise, seasonal_shift}
    data:    {tile_size, stride, ratios}
    network: NetworkConfig fields (patch_size is taken from data.tile_size)
    train:   TrainConfig fields (seed is derived)
    bench:   {n_regions, factors, shift, size_thresholds}
    eval:    {metric}

Stage seeds are ``seed + SEED_OFFSETS[stage]``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from . import io
from .exceptions import ConfigError
from .nn.model import NetworkConfig
from .synthetic import SceneParams
from .training import TrainConfig

RUN_ROOT_ENV = "INSINET_RUN_ROOT"
RUN_SUBDIRS = ("config", "checkpoints", "reports", "plots", "logs", "data")
SEED_OFFSETS = {"synth": 0, "split": 1, "train": 2, "init": 3, "bench": 4}
METRICS = ("f1", "oa", "iou", "pre", "rec")


@dataclass
class SceneConfig:
    width: int = 1024
    height: int = 1024
    n_mines: int = 6
    change_events: int = 6
    min_radius: float = 10.0
    max_radius: float = 40.0
    texture_sigma: float = 6.0
    noise: float = 0.02
    seasonal_shift: float = 0.08

    def params(self) -> SceneParams:
        d = asdict(self)
        del d["width"], d["height"]
        return SceneParams(**d)


@dataclass
class DataConfig:
    tile_size: int = 256
    stride: int | None = None
    ratios: tuple[float, float, float] = (6, 2, 2)

    def __post_init__(self):
        self.ratios = tuple(self.ratios)


@dataclass
class BenchConfig:
    n_regions: int = 4
    factors: tuple[int, ...] = (2, 4, 8, 16)
    shift: tuple[int, int] = (0, 4)
    size_thresholds: tuple[float, float] | None = None

    def __post_init__(self):
        self.factors = tuple(self.factors)
        self.shift = tuple(self.shift)
        if self.size_thresholds is not None:
            self.size_thresholds = tuple(self.size_thresholds)


@dataclass
class EvalConfig:
    metric: str = "f1"


def _section(cls, raw, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from None


@dataclass
class RunConfig:
    name: str = "default"
    seed: int = 0
    out: str | None = None
    deterministic: bool = True
    scene: SceneConfig = field(default_factory=SceneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.name, str) or not self.name or "/" in self.name:
            raise ConfigError(f"invalid run name {self.name!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        s = self.data.tile_size
        if s < 8 or s % 8:
            raise ConfigError(f"tile_size must be a positive multiple of 8, got {s}")
        if self.network.patch_size != s:
            raise ConfigError(f"network patch_size {self.network.patch_size} != data tile_size {s}")
        if self.data.stride is not None and not 0 < self.data.stride <= s:
            raise ConfigError(f"stride must be in (0, {s}], got {self.data.stride}")
        if len(self.data.ratios) != 3 or min(self.data.ratios) <= 0:
            raise ConfigError(f"ratios must be three positive numbers, got {self.data.ratios}")
        if self.scene.width < s or self.scene.height < s:
            raise ConfigError("scene must be at least one tile in each direction")
        for f in self.bench.factors:
            if f < 2 or s % f:
                raise ConfigError(f"scale factor {f} must be >= 2 and divide the tile size {s}")
        if len(self.bench.shift) != 2:
            raise ConfigError("bench.shift is (rows, cols)")
        if self.eval.metric not in METRICS:
            raise ConfigError(f"eval.metric must be one of {METRICS}")

    def stage_seed(self, stage: str) -> int:
        return self.seed + SEED_OFFSETS[stage]

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        data = _section(DataConfig, raw.get("data"), "data")
        net = dict(raw.get("network") or {})
        net.setdefault("patch_size", data.tile_size)
        try:
            network = NetworkConfig.from_dict(net)
            train = TrainConfig.from_dict(dict(raw.get("train") or {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        top = {k: raw[k] for k in ("name", "seed", "out", "deterministic") if k in raw}
        cfg = cls(scene=_section(SceneConfig, raw.get("scene"), "scene"), data=data,
                  network=network, train=train,
                  bench=_section(BenchConfig, raw.get("bench"), "bench"),
                  eval=_section(EvalConfig, raw.get("eval"), "eval"), **top)
        return cfg.resolved()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(raw)

    def resolved(self, seed: int | None = None, deterministic: bool | None = None,
                 out: str | None = None) -> "RunConfig":
        """Apply overrides and push derived seeds into the network and train configs."""
        seed = self.seed if seed is None else seed
        det = self.deterministic if deterministic is None else deterministic
        cfg = replace(self, seed=seed, deterministic=det, out=out or self.out)
        cfg.network = replace(cfg.network, seed=cfg.stage_seed("init"))
        cfg.train = replace(cfg.train, seed=cfg.stage_seed("train"), deterministic=det)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = {"name": self.name, "seed": self.seed, "out": self.out,
             "deterministic": self.deterministic,
             "scene": asdict(self.scene), "data": asdict(self.data),
             "network": self.network.to_dict(), "train": self.train.to_dict(),
             "bench": asdict(self.bench), "eval": asdict(self.eval)}
        d["data"]["ratios"] = list(self.data.ratios)
        d["bench"]["factors"] = list(self.bench.factors)
        d["bench"]["shift"] = list(self.bench.shift)
        return d

    def run_root(self) -> Path:
        return Path(self.out or os.environ.get(RUN_ROOT_ENV) or "runs")

    def run_dir(self) -> "RunDir":
        return RunDir(self.run_root() / self.name)


@dataclass(frozen=True)
class RunDir:
    """``<root>/<name>/{config, checkpoints, reports, plots, logs, data}``."""

    path: Path

    def create(self) -> "RunDir":
        for sub in RUN_SUBDIRS:
            (self.path / sub).mkdir(parents=True, exist_ok=True)
        return self

    def __getattr__(self, name: str) -> Path:
        if name in RUN_SUBDIRS:
            return self.path / name
        raise AttributeError(name)

    # fixed artifact locations
    @property
    def scene_dir(self) -> Path:
        return self.path / "data" / "scene"

    @property
    def dataset_dir(self) -> Path:
        return self.path / "data" / "dataset"

    def split_manifest(self, split: str) -> Path:
        return self.path / "data" / "splits" / f"{split}.jsonl"

    def bench_dir(self, kind: str) -> Path:
        return self.path / "data" / "bench" / kind

    @property
    def checkpoint(self) -> Path:
        return self.path / "checkpoints" / "best.pt"

    def report(self, name: str) -> Path:
        return self.path / "reports" / f"{name}.json"

    def write_config(self, config: RunConfig) -> Path:
        return io.write_json(self.path / "config" / "resolved.json", config.to_dict())
