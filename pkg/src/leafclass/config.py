"""Pipeline configuration with layered sources.

Precedence: command-line flags, then LEAFLET_* environment variables, then a
JSON config file, then built-in defaults. Unknown keys anywhere are errors;
silent typos in config files are worse than loud ones.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

ENV_PREFIX = "LEAFLET_"


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    manifest: str = "manifest.jsonl"
    cache: str = "ocr-cache.jsonl"
    text_model: str = "text-model.json"
    image_model: str = "image-model.json"
    text_weight: float = 2.0
    top_k: int = 3
    workers: int = 4
    engine: str = "tesseract"
    languages: str = "deu+eng"
    seed: int = 0
    queue_dir: str = "queue"
    host: str = "127.0.0.1"
    port: int = 8000
    static_dir: str | None = None

    def validate(self) -> None:
        if self.text_weight <= 0:
            raise ConfigError(f"text_weight must be > 0, got {self.text_weight}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, value: Any) -> Any:
    field = _FIELDS[name]
    if value is None:
        return None
    if field.type in ("int", int):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    if field.type in ("float", float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be a number, got {value!r}")
    return str(value)


def load_config(
    config_file: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> PipelineConfig:
    """Merge the three layers into a validated PipelineConfig.

    `overrides` (flag values) win over environment variables, which win over
    the config file. Override values of None mean "flag not given".
    """
    values: dict[str, Any] = {}

    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}")
        if not isinstance(obj, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key, val in obj.items():
            if key not in _FIELDS:
                raise ConfigError(f"config file {path}: unknown key {key!r}")
            values[key] = _coerce(key, val)

    env = os.environ if env is None else env
    for key, val in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name not in _FIELDS:
            raise ConfigError(f"unknown environment variable {key}")
        values[name] = _coerce(name, val)

    if overrides:
        for key, val in overrides.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config override {key!r}")
            if val is not None:
                values[key] = _coerce(key, val)

    config = PipelineConfig(**values)
    config.validate()
    return config
