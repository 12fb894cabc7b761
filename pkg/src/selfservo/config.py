"""JSON run configuration shared by the command line and the benchmark."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .selfrec import SelfRecConfig
from .servo import ServoConfig
from .sim import NOISE_PRESETS, TOOLS, WorldConfig, default_world_config


@dataclass(frozen=True)
class WorldSpec:
    """Named rig parameters; ``custom`` (a full world dict) overrides them."""

    noise: str = "default"
    tool: str = "none"
    decoy: bool = False
    decoy_action_scale: float = 0.1
    shake: float = 0.0
    n_link_particles: int = 40
    n_background: int = 120
    custom: dict | None = None

    def __post_init__(self):
        if self.noise not in NOISE_PRESETS:
            raise ValueError(f"unknown noise preset {self.noise!r}; choose from {sorted(NOISE_PRESETS)}")
        if self.tool not in TOOLS:
            raise ValueError(f"unknown tool {self.tool!r}; choose from {sorted(TOOLS)}")

    def build(self) -> WorldConfig:
        if self.custom is not None:
            return WorldConfig.from_dict(self.custom)
        return default_world_config(self.noise, self.tool, self.decoy, self.decoy_action_scale,
                                    self.shake, self.n_link_particles, self.n_background)


@dataclass(frozen=True)
class RunConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    selfrec: SelfRecConfig = field(default_factory=SelfRecConfig)
    servo: ServoConfig = field(default_factory=ServoConfig)
    seeds: tuple = (0,)
    n_actions: int = 100
    out: str = "out"
    bench: dict | None = None

    def __post_init__(self):
        if len(self.seeds) < 1:
            raise ValueError("need at least one seed")
        if self.n_actions < 1:
            raise ValueError("n_actions must be >= 1")

    def selfrec_for(self, seed: int) -> SelfRecConfig:
        return replace(self.selfrec, seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "world" in d:
            kw["world"] = _build(WorldSpec, d["world"], "world")
        if "selfrec" in d:
            kw["selfrec"] = _build(SelfRecConfig, d["selfrec"], "selfrec")
        if "servo" in d:
            kw["servo"] = _build(ServoConfig, d["servo"], "servo")
        if "seeds" in d:
            kw["seeds"] = tuple(int(s) for s in d["seeds"])
        for key in ("n_actions", "out", "bench"):
            if key in d:
                kw[key] = d[key]
        return cls(**kw)


def _build(kind, values: dict, section: str):
    if not isinstance(values, dict):
        raise ValueError(f"section {section!r} must be an object")
    allowed = {f.name for f in fields(kind)}
    unknown = set(values) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return kind(**values)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a RunConfig from JSON; missing keys take their defaults."""
    if path is None:
        return RunConfig()
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return RunConfig.from_dict(data)
