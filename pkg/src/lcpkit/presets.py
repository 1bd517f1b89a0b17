"""Named device/network/accelerator presets shipped as JSON config files.

The LCP_CONFIG_DIR environment variable points at an alternative preset
directory; bundled files under lcpkit/presets/ are the fallback.
"""

from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path
from typing import Any

from .accel import AccelConfig
from .errors import ValidationError
from .simulator import Jitter, NetworkSpec
from .splitter import DeviceSpec

ENV_VAR = "LCP_CONFIG_DIR"


def _load_table(filename: str) -> dict[str, Any]:
    override = os.environ.get(ENV_VAR)
    if override:
        path = Path(override) / filename
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
    return json.loads(
        resources.files("lcpkit").joinpath("presets", filename).read_text(encoding="utf-8")
    )


def _lookup(filename: str, name: str) -> dict[str, Any]:
    table = _load_table(filename)
    if name not in table:
        raise ValidationError(
            f"unknown preset {name!r}; available: {', '.join(sorted(table))}"
        )
    entry = dict(table[name])
    entry.pop("notes", None)
    return entry


def list_presets(filename: str) -> list[str]:
    return sorted(_load_table(filename))


def load_device(name: str, **overrides: Any) -> DeviceSpec:
    entry = _lookup("devices.json", name)
    entry.update(overrides)
    entry.setdefault("name", name)
    return DeviceSpec(**entry)


def load_network(name: str, **overrides: Any) -> NetworkSpec:
    entry = _lookup("networks.json", name)
    entry.update(overrides)
    jitter = entry.pop("jitter", None)
    entry.setdefault("name", name)
    if jitter is not None:
        entry["jitter"] = Jitter(**jitter)
    return NetworkSpec(**entry)


def load_accel(name: str, **overrides: Any) -> AccelConfig:
    entry = _lookup("accel.json", name)
    entry.update(overrides)
    entry.setdefault("name", name)
    return AccelConfig(**entry)


def bundled_model_path(name: str) -> Path:
    path = resources.files("lcpkit").joinpath("models", f"{name}.json")
    if not path.is_file():
        available = sorted(
            p.name[: -len(".json")]
            for p in resources.files("lcpkit").joinpath("models").iterdir()
            if p.name.endswith(".json")
        )
        raise ValidationError(f"unknown bundled model {name!r}; available: {', '.join(available)}")
    return Path(str(path))
