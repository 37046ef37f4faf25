"""Plain-text ``key = value`` configuration with one section per stage.

Example::

    [frame]
    levels = 1.85, 3.35, 4.85, 6.50

    [layout]
    preset = model

    [dataset]
    count = 20000
    bound = 0.025

Unknown keys and malformed values raise :class:`ConfigError` naming
``section.key``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .dataset import DatasetConfig
from .errors import ConfigError
from .flow import FlowSolverConfig
from .model import ControlSectionLayout, FrameConfig
from .nn import TrainConfig
from .render import Camera


@dataclass(frozen=True)
class AnalysisConfig:
    fps: float = 50.0
    y0: float = 1.0
    window: str = "none"
    pad_multiple: int = 64

    def __post_init__(self):
        if not self.fps > 0:
            raise ConfigError("fps must be positive", "fps")
        if not 0 <= self.y0 <= 1:
            raise ConfigError("y0 must lie in [0, 1]", "y0")
        if self.window not in ("none", "hann"):
            raise ConfigError(f"unknown window {self.window!r}", "window")


@dataclass(frozen=True)
class LayoutConfig:
    preset: str = "model"
    heights: tuple[float, ...] = ()
    total_height: float = 0.0

    def layout(self) -> ControlSectionLayout:
        if self.heights:
            h = self.total_height or max(self.heights)
            return ControlSectionLayout(self.heights, h)
        return ControlSectionLayout.preset(self.preset)


SECTIONS: dict[str, type] = {
    "frame": FrameConfig,
    "layout": LayoutConfig,
    "camera": Camera,
    "flow": FlowSolverConfig,
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "analysis": AnalysisConfig,
}

# DatasetConfig fields that hold nested configs come from their own sections.
_NESTED = {"frame", "camera", "flow"}


@dataclass
class RunConfig:
    values: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides: list[str] | None = None) -> "RunConfig":
        values: dict[str, dict[str, str]] = {}
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            try:
                with open(path) as fh:
                    parser.read_file(fh)
            except OSError as exc:
                from .errors import StorageError
                raise StorageError(f"cannot read config {path}: {exc}") from exc
            except configparser.Error as exc:
                raise ConfigError(f"malformed config file: {exc}") from exc
            for section in parser.sections():
                values[section] = dict(parser.items(section))
        for item in overrides or []:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"override {item!r} is not section.key=value", item)
            key, value = item.split("=", 1)
            section, name = key.strip().split(".", 1)
            values.setdefault(section, {})[name.strip()] = value.strip()
        for section, items in values.items():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]", section)
            known = {f.name for f in dataclasses.fields(SECTIONS[section])} - _NESTED
            for name in items:
                if name not in known:
                    raise ConfigError(f"unknown key {section}.{name}", f"{section}.{name}")
        return cls(values)

    def set_default(self, section: str, key: str, value) -> None:
        self.values.setdefault(section, {}).setdefault(key, str(value))

    def build(self, section: str):
        cls = SECTIONS[section]
        kwargs: dict[str, Any] = {}
        for f in dataclasses.fields(cls):
            if f.name in _NESTED and section == "dataset":
                kwargs[f.name] = self.build(f.name)
                continue
            raw = self.values.get(section, {}).get(f.name)
            if raw is None:
                continue
            kwargs[f.name] = _convert(raw, f, section)
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            key = f"{section}.{exc.key}" if exc.key else section
            raise ConfigError(f"{key}: {exc}", key) from exc

    def digest(self) -> str:
        blob = json.dumps(self.values, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section in sorted(self.values):
            parser[section] = dict(sorted(self.values[section].items()))
        import io
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _convert(raw: str, f: dataclasses.Field, section: str):
    key = f"{section}.{f.name}"
    default = f.default if f.default is not dataclasses.MISSING else None
    if default is None and f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
        default = f.default_factory()  # type: ignore[misc]
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(t) for t in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}", key) from None


def write_config(path, values: dict[str, dict[str, Any]]) -> None:
    cfg = RunConfig({s: {k: str(v) for k, v in items.items()} for s, items in values.items()})
    Path(path).write_text(cfg.to_text())
