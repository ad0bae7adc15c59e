"""Flat ``key = value`` run configuration files."""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .training import TrainConfig

PATH_KEYS = ("input", "gt", "out")


class ConfigError(ValueError):
    pass


def _convert(raw: str, typ, key: str, lineno: int):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None


def parse_run_config(text: str) -> tuple[TrainConfig, dict[str, str]]:
    """Parse a run configuration; unspecified training keys take the mode's preset."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values: dict[str, object] = {}
    paths: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in values or key in paths:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key in PATH_KEYS:
            paths[key] = raw
        elif key in fields:
            values[key] = _convert(raw, fields[key], key, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if "mode" not in values:
        raise ConfigError("missing required key 'mode'")
    preset = "supervised" if values["mode"] == "supervised" else "selfsup"
    try:
        cfg = TrainConfig.preset(preset, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg, paths


def load_run_config(path) -> tuple[TrainConfig, dict[str, str]]:
    return parse_run_config(Path(path).read_text())


def dump_run_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))
