"""Pipeline configuration and its ``key = value`` text form.

One key per line, ``#`` starts a comment, unknown keys are rejected.
Booleans accept on/off, true/false, yes/no, 1/0. Angles are given in
degrees. Every field of :class:`PipelineConfig` is a valid key.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .selector import SelectorThresholds


class ConfigError(ValueError):
    category = "config-error"


_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


@dataclass
class PipelineConfig:
    # local map
    root_size: float = 0.5
    local_edge: float = 200.0
    local_slide: float = 20.0
    min_points: int = 10
    planarity_threshold: float = 0.1
    node_cap: int = 100
    # long-term visual map
    longterm_map: bool = True
    ltm_cell: float = 2.0
    ltm_edge: float = 800.0
    ltm_slide: float = 100.0
    ltm_cap: int = 5
    # degeneracy / selector
    degeneracy_threshold: float = 0.07
    degeneracy_window: int = 3
    selector: bool = True
    tau_position: float = 1.0
    tau_rotation_deg: float = 60.0
    # filter
    epsilon: float = 1e-4
    max_iters: int = 5
    gyro_noise: float = 1e-3
    accel_noise: float = 1e-2
    gyro_bias_rw: float = 1e-5
    accel_bias_rw: float = 1e-4
    init: str = "auto"          # auto | groundtruth | static
    # LiDAR
    beam_sigma: float = 0.02
    lidar_gate: float = 0.3
    lidar_sigma_gate: float = 3.0
    downsample: float = 0.0
    # visual
    visual: bool = True
    visual_budget: int = 40
    visual_spacing: float = 20.0
    max_visual_points: int = 60
    photo_sigma: float = 0.04
    huber_delta: float = 0.1
    fixed_gain: Optional[float] = None
    max_view_angle_deg: float = 60.0
    # bookkeeping
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        pos = ("root_size", "local_edge", "ltm_cell", "ltm_edge", "epsilon", "beam_sigma",
               "lidar_gate", "photo_sigma", "huber_delta")
        for name in pos:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("local_slide", "ltm_slide", "tau_position", "tau_rotation_deg", "downsample",
                     "gyro_noise", "accel_noise", "gyro_bias_rw", "accel_bias_rw"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("max_iters", "degeneracy_window", "ltm_cap", "node_cap", "min_points"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 < self.degeneracy_threshold < 1:
            raise ConfigError("degeneracy_threshold must lie in (0, 1)")
        if self.init not in ("auto", "groundtruth", "static"):
            raise ConfigError(f"init must be auto, groundtruth or static, not {self.init!r}")
        return self

    @property
    def thresholds(self) -> SelectorThresholds:
        return SelectorThresholds(self.tau_position, np.deg2rad(self.tau_rotation_deg))

    def replace(self, **kw) -> "PipelineConfig":
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **kw)

    def as_dict(self):
        return dataclasses.asdict(self)

    # ------------------------------------------------------------------ text
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source="<config>") -> "PipelineConfig":
        types = {f.name: f.type for f in fields(cls)}
        vals = {}
        for i, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{i}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in types:
                raise ConfigError(f"{source}:{i}: unknown key {k!r}")
            vals[k] = _parse(v, types[k], f"{source}:{i}")
        return cls(**vals)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{p}: config file not found")
        return cls.from_text(p.read_text(), str(p))

    def to_file(self, path):
        Path(path).write_text(self.to_text())


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text, typ, where):
    t = str(typ)
    low = text.lower()
    try:
        if "bool" in t:
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if "Optional" in t:
            return None if low in ("none", "") else float(text)
        if "int" in t:
            return int(text)
        if "float" in t:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{where}: bad value {text!r} for type {t}") from None
