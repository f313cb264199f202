"""JSON run configuration for the command-line tools.

Sections: shape, model, moc, train, embed, grad_check, output, plus an
optional top-level seed. Unknown keys anywhere are an error.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from moc.masking import Criterion
from moc.memory import LayerShape
from moc.mixture import MocConfig
from moc.trainer import TrainConfig


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass(frozen=True)
class ModelSection:
    n_layers: int = 1
    vocab: int = 32000
    lm_head_bytes_per_element: int = 4


@dataclass(frozen=True)
class EmbedSection:
    d: int = 4
    d_ffn: int = 5
    a: int = 2
    b: int = 3
    samples: int = 100
    criterion: str = "abs_silu"


@dataclass(frozen=True)
class GradCheckSection:
    instances: int = 20
    max_s: int = 4
    max_d: int = 6
    max_d_ffn: int = 12
    h: float = 1e-6
    tol: float = 1e-6


@dataclass(frozen=True)
class OutputSection:
    format: str = "json"
    path: str | None = None


DEFAULTS = {
    "shape": {"b": 1, "s": 8, "d": 16, "d_ffn": 43},
}


@dataclass
class RunConfig:
    shape: LayerShape
    model: ModelSection
    moc: MocConfig
    train: TrainConfig
    embed: EmbedSection
    grad_check: GradCheckSection
    output: OutputSection
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)


_SECTIONS = {
    "shape": LayerShape, "model": ModelSection, "moc": MocConfig, "train": TrainConfig,
    "embed": EmbedSection, "grad_check": GradCheckSection, "output": OutputSection,
}


def _build(cls, section: str, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(section, "expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
    kwargs = dict(data)
    if cls is MocConfig:
        if "group" in kwargs and kwargs["group"] is not None:
            kwargs["group"] = tuple(kwargs["group"])
            kwargs.setdefault("k", None)
            if kwargs["k"] is not None:
                raise ConfigError(f"{section}.group", "give either k or group, not both")
        if "criterion" in kwargs:
            try:
                kwargs["criterion"] = Criterion(kwargs["criterion"])
            except ValueError:
                raise ConfigError(f"{section}.criterion",
                                  f"must be one of {[c.value for c in Criterion]}") from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(section, str(exc)) from None


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("moc.presets").iterdir()
                  if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("moc.presets") / f"{name}.json"
    if not path.is_file():
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {preset_names()}")
    return json.loads(path.read_text())


def build(raw: dict) -> RunConfig:
    for key in raw:
        if key not in _SECTIONS and key != "seed":
            raise ConfigError(key, "unknown section")
    raw = merge(DEFAULTS, raw)
    moc_raw = dict(raw.get("moc", {}))
    if moc_raw.get("k") is None and moc_raw.get("group") is None:
        d_ffn = raw["shape"].get("d_ffn", 1)
        moc_raw["k"] = max(1, math.ceil(0.3 * d_ffn)) if isinstance(d_ffn, int) else 1
    parts = {name: _build(cls, name, moc_raw if name == "moc" else raw.get(name, {}))
             for name, cls in _SECTIONS.items()}
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    try:
        parts["moc"].validate(parts["shape"].d_ffn)
    except ValueError as exc:
        raise ConfigError("moc", str(exc)) from None
    if parts["output"].format not in ("json", "csv"):
        raise ConfigError("output.format", "must be 'json' or 'csv'")
    return RunConfig(**parts, seed=seed, raw=raw)


def load(path: str | Path | None = None, preset: str | None = None,
         overrides: dict | None = None) -> RunConfig:
    raw: dict = load_preset(preset) if preset else {}
    if path is not None:
        try:
            raw = merge(raw, json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        except OSError as exc:
            raise ConfigError("config", str(exc)) from None
    if overrides:
        raw = merge(raw, overrides)
    return build(raw)
