"""Run configuration: one YAML file with ``model``, ``train``, ``data`` and
``paths`` sections plus a top-level ``seed``.

Every key has a desk-scale default; a file only lists what it changes.
Unknown keys are rejected and ``section.key=value`` overrides are applied on
top of the file."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .degradations import DegradationSpec
from .model import ModelConfig
from .training import TrainConfig


def toy_train_config(**overrides) -> TrainConfig:
    """Desk-scale schedule: 3000 steps with the full protocol's 1:2:2 phase split."""
    base = dict(lr_init=3e-3, embed_lr_scale=0.1, warm_epochs=60, cycle_epochs=120, epochs=300,
                steps_per_epoch=10, batch_size=4, crop=32)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class DataConfig:
    tasks: dict[str, dict] = field(default_factory=lambda: {"denoise": {}, "deblur": {}})
    pairs_per_task: int = 16
    size: int = 32
    channels: int = 3

    def __post_init__(self):
        for task, params in self.tasks.items():
            DegradationSpec(task, dict(params or {}))  # validates names and values

    def specs(self, seed: int) -> list[tuple[int, DegradationSpec]]:
        """(image seed, spec) for every pair, tasks in order."""
        out = []
        for i, (task, params) in enumerate(self.tasks.items()):
            for j in range(self.pairs_per_task):
                s = seed * 1_000_003 + 1000 * i + j
                out.append((s, DegradationSpec(task, dict(params or {}), s)))
        return out


@dataclass
class PathsConfig:
    out_dir: str = "runs/default"
    data_dir: str = ""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig.toy(tasks=["denoise", "deblur"]))
    train: TrainConfig = field(default_factory=toy_train_config)
    data: DataConfig = field(default_factory=DataConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def resolved(self) -> "RunConfig":
        """Propagate the top-level seed into the model and training sections."""
        self.model.seed = self.seed
        self.train.seed = self.seed
        return self

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": self.train.to_dict(),
                "data": asdict(self.data), "paths": asdict(self.paths), "seed": self.seed}

    def dump(self, path) -> None:
        from .io import atomic_write

        atomic_write(path, yaml.safe_dump(self.to_dict(), sort_keys=False).encode())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        base = cls().to_dict()
        kwargs = {}
        for name, kind in (("model", ModelConfig), ("train", TrainConfig),
                           ("data", DataConfig), ("paths", PathsConfig)):
            if name not in d:
                continue
            sub = d[name] or {}
            if not isinstance(sub, dict):
                raise ValueError(f"config section {name!r} must be a mapping")
            bad = set(sub) - {f.name for f in fields(kind)}
            if bad:
                raise ValueError(f"unknown {name} keys: {sorted(bad)}")
            merged = dict(base[name])
            for k, v in sub.items():
                # YAML 1.1 reads "1e-3" as a string
                if isinstance(merged[k], float) and isinstance(v, str):
                    v = float(v)
                merged[k] = v
            kwargs[name] = kind(**merged)
        if "seed" in d:
            kwargs["seed"] = int(d["seed"])
        return cls(**kwargs)


def apply_overrides(raw: dict, overrides) -> dict:
    """Set ``a.b.c=value`` entries (value parsed as YAML) in a nested dict."""
    out = dict(raw or {})
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"override {item!r} must look like section.key=value")
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node[p] = dict(node.get(p) or {})
            node = node[p]
        node[parts[-1]] = yaml.safe_load(value)
    return out


def load_run_config(path=None, overrides=()) -> RunConfig:
    raw = {}
    if path:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(apply_overrides(raw, overrides)).resolved()
