"""Pipeline configuration: one JSON document with a section per stage."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from .cloud_prep import PrepParams
from .elevation import ElevParams
from .errors import ConfigError, RoadRegError
from .nonrigid_warp import WarpParams
from .raster_skeleton import HsvThresholds, SkeletonParams
from .rigid_align import RigidParams


@dataclass(frozen=True)
class MetricParams:
    delta: float = 15.0  # intersection matching radius, meters
    simplify_tol_px: float = 1.0

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ConfigError("metrics.delta must be positive")
        if self.simplify_tol_px < 0:
            raise ConfigError("metrics.simplify_tol_px must be non-negative")


@dataclass(frozen=True)
class Paths:
    cloud: str | None = None
    map: str | None = None
    terrain: str | None = None
    output: str = "out"


@dataclass(frozen=True)
class Options:
    map_mpp: float = 1.0  # used when the map has no world file
    road_label: int | None = 1
    ground_fallback: bool = False  # label unlabelled clouds by ground extraction
    elevation: bool = True
    nonrigid: bool = True
    debug: bool = False


SECTIONS: dict[str, type] = {
    "paths": Paths,
    "options": Options,
    "prep": PrepParams,
    "hsv": HsvThresholds,
    "skeleton": SkeletonParams,
    "rigid": RigidParams,
    "warp": WarpParams,
    "elevation": ElevParams,
    "metrics": MetricParams,
}


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    options: Options = field(default_factory=Options)
    prep: PrepParams = field(default_factory=PrepParams)
    hsv: HsvThresholds = field(default_factory=HsvThresholds)
    skeleton: SkeletonParams = field(default_factory=SkeletonParams)
    rigid: RigidParams = field(default_factory=RigidParams)
    warp: WarpParams = field(default_factory=WarpParams)
    elevation: ElevParams = field(default_factory=ElevParams)
    metrics: MetricParams = field(default_factory=MetricParams)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output)


def _coerce(cls: type, key: str, value: Any) -> Any:
    """Turn JSON lists into tuples where the dataclass field holds a tuple default."""
    for f in fields(cls):
        if f.name == key:
            default = f.default if f.default is not dataclasses.MISSING else None
            if isinstance(default, tuple) and isinstance(value, list):
                return tuple(value)
    return value


def _build_section(name: str, values: dict) -> Any:
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce(cls, k, v) for k, v in values.items()}
    try:
        return cls(**kwargs)
    except (RoadRegError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def config_from_dict(d: dict) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(d) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    return PipelineConfig(**{name: _build_section(name, d.get(name, {})) for name in SECTIONS})


def parse_override(text: str) -> tuple[str, str, Any]:
    """``section.key=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} lacks '='")
    lhs, raw = text.split("=", 1)
    if lhs.count(".") != 1:
        raise ConfigError(f"override key {lhs!r} must look like section.key")
    section, key = lhs.split(".")
    if section not in SECTIONS:
        raise ConfigError(f"unknown section {section!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, key, value


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    """Defaults, then the JSON file, then ``section.key=value`` overrides."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
    raw = {k: dict(v) if isinstance(v, dict) else v for k, v in raw.items()}
    for text in overrides or []:
        section, key, value = parse_override(text)
        raw.setdefault(section, {})[key] = value
    return config_from_dict(raw)


def validate_paths(cfg: PipelineConfig, need_cloud: bool = True, need_map: bool = True) -> None:
    """Input paths required up front. The terrain grid is checked when its stage runs."""
    for flag, label, value in ((need_cloud, "cloud", cfg.paths.cloud), (need_map, "map", cfg.paths.map)):
        if not flag:
            continue
        if not value:
            raise ConfigError(f"paths.{label} is not set")
        if not Path(value).exists():
            raise ConfigError(f"paths.{label} does not exist: {value}")


def replace_section(cfg: PipelineConfig, section: str, **changes) -> PipelineConfig:
    sec = getattr(cfg, section)
    assert is_dataclass(sec)
    return dataclasses.replace(cfg, **{section: dataclasses.replace(sec, **changes)})
