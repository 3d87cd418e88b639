"""Scenario configuration: dataclasses plus a strict YAML loader.

Every key in the file must name a field; unknown keys and bad values raise
:class:`ConfigError` carrying the line and column of the offending node.
Example::

    name: nominal
    max_time: 120
    pad: {cx: 0.0, cy: 0.0, length: 1.0, breadth: 1.0, yaw: 0.0}
    start_pose: {x: 1.0, y: 1.0, z: 10.0, yaw: 0.0}
    noise: {corner_sigma: 2.0, dropout_prob: 0.05, seed: 0}
    landing:
      xy_gains: {kp: 0.6}
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from mavland.controller import LandingConfig
from mavland.estimator import FilterConfig
from mavland.simulator import CameraModel, DetectorNoise, PadSpec, VehicleParams


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line, self.column = line, column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


@dataclass(frozen=True)
class StartPose:
    x: float = 0.0
    y: float = 0.0
    z: float = 10.0
    yaw: float = 0.0

    def __post_init__(self):
        if not self.z > 0:
            raise ValueError("start altitude must be > 0")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    max_time: float = 120.0
    seeds: tuple[int, ...] = ()
    pad: PadSpec = PadSpec()
    start_pose: StartPose = StartPose()
    camera: CameraModel = CameraModel()
    noise: DetectorNoise = DetectorNoise()
    vehicle: VehicleParams = VehicleParams()
    filter: FilterConfig = field(default_factory=FilterConfig)
    landing: LandingConfig = LandingConfig()

    def __post_init__(self):
        if not self.max_time > 0:
            raise ValueError("max_time must be > 0")
        if any(s < 0 or s >= 2**64 for s in self.seeds):
            raise ValueError("seeds must be unsigned 64-bit integers")

    def seed_list(self, count: Optional[int] = None) -> list[int]:
        """Seeds for a batch: ``count`` consecutive seeds from noise.seed, else
        the configured list, else just noise.seed."""
        if count is not None:
            return [self.noise.seed + i for i in range(count)]
        return list(self.seeds) if self.seeds else [self.noise.seed]


_CONSTRUCTOR = yaml.constructor.SafeConstructor()


def _unwrap_optional(tp):
    if typing.get_origin(tp) is Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _scalar(node: yaml.Node, tp, path: str):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{path}: expected a scalar", *_mark(node))
    value = _CONSTRUCTOR.construct_object(node)
    if tp is bool:
        ok = isinstance(value, bool)
    elif tp is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif tp is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif tp is str:
        value, ok = node.value, True
    else:
        raise ConfigError(f"{path}: unsupported field type {tp!r}", *_mark(node))
    if not ok:
        raise ConfigError(f"{path}: expected {tp.__name__}, got {node.value!r}", *_mark(node))
    return value


def _mark(node: yaml.Node) -> tuple[int, int]:
    return node.start_mark.line + 1, node.start_mark.column + 1


def _build(node: yaml.Node, tp, path: str):
    tp, optional = _unwrap_optional(tp)
    if optional and isinstance(node, yaml.ScalarNode) and node.tag.endswith(":null"):
        return None
    if dataclasses.is_dataclass(tp):
        return _build_dataclass(node, tp, path)
    if typing.get_origin(tp) is tuple:
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{path}: expected a list", *_mark(node))
        (item,) = [a for a in typing.get_args(tp) if a is not Ellipsis][:1]
        return tuple(_scalar(n, item, f"{path}[{i}]") for i, n in enumerate(node.value))
    return _scalar(node, tp, path)


def _build_dataclass(node: yaml.Node, cls, path: str):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{path or 'document'}: expected a mapping", *_mark(node))
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs: dict[str, Any] = {}
    for key_node, value_node in node.value:
        key = key_node.value
        full = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown key '{full}'", *_mark(key_node))
        if key in kwargs:
            raise ConfigError(f"duplicate key '{full}'", *_mark(key_node))
        kwargs[key] = _build(value_node, hints[key], full)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'document'}: {exc}", *_mark(node)) from exc


def parse_scenario(text: str) -> ScenarioConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        raise ConfigError(f"YAML syntax error: {exc.problem}", line, col) from exc
    if root is None:
        return ScenarioConfig()
    return _build_dataclass(root, ScenarioConfig, "")


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_scenario(text)


NUMERIC = (int, float)


def field_type(key: str):
    """Type of a dotted config key such as ``noise.corner_sigma``."""
    cls: Any = ScenarioConfig
    tp: Any = None
    for part in key.split("."):
        if not dataclasses.is_dataclass(cls):
            raise KeyError(key)
        hints = typing.get_type_hints(cls)
        if part not in hints:
            raise KeyError(key)
        tp, _ = _unwrap_optional(hints[part])
        cls = tp
    return tp


def with_value(cfg: ScenarioConfig, key: str, value: Any) -> ScenarioConfig:
    """Copy of ``cfg`` with one dotted numeric key replaced."""
    tp = field_type(key)
    if tp not in NUMERIC:
        raise KeyError(f"{key} is not a numeric parameter")
    value = float(value)
    if tp is int:
        if value != int(value):
            raise ValueError(f"{key} needs an integer, got {value}")
        value = int(value)

    def set_path(obj, parts):
        if len(parts) == 1:
            return dataclasses.replace(obj, **{parts[0]: value})
        child = getattr(obj, parts[0])
        return dataclasses.replace(obj, **{parts[0]: set_path(child, parts[1:])})

    return set_path(cfg, key.split("."))

