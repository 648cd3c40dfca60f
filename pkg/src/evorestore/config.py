"""Line-oriented `key = value` configuration with fail-closed validation.

Every key is registered below with its parser; unknown keys — from the file or
from `--set` overrides — raise ConfigError. The same keys back both the config
file and overrides, and they mirror the typed config dataclasses one-to-one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace

from .degrade import DegradationSpec, SplitConfig
from .eos import EosConfig
from .errors import ConfigError
from .trainer import TrainConfig


@dataclass(frozen=True)
class DatasetConfig:
    manifest: str = ""
    val_fraction: float = 0.2
    test_fraction: float = 0.0
    split_seed: int = 0

    def split(self) -> SplitConfig:
        return SplitConfig(self.val_fraction, self.test_fraction, self.split_seed)


@dataclass
class AppConfig:
    trainer: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    degradations: tuple = ()


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _parse_optional_int(v: str):
    if v.strip().lower() in ("", "none"):
        return None
    return int(v)


def _parse_freeze(v: str) -> tuple:
    items = tuple(s.strip() for s in v.split(",") if s.strip())
    return items


_SPEC_RE = re.compile(r"^\s*(\w+)\s*\(([^)]*)\)\s*$")

_SPEC_PARAMS = {
    "noise": {"sigma": float, "seed": int},
    "blur": {"kernel_sigma": float, "seed": int},
    "haze": {"t0": float, "airlight": float, "seed": int},
    "lowlight": {"gamma": float, "scale": float, "seed": int},
    "rain": {"count": int, "angle_deg": float, "intensity": float, "seed": int},
}


def parse_degradation_specs(text: str) -> tuple:
    """E.g. ``noise(sigma=0.098);blur(kernel_sigma=1.5,seed=3)``."""
    specs = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        m = _SPEC_RE.match(chunk)
        if not m:
            raise ConfigError(f"malformed degradation spec {chunk!r}")
        kind, arg_text = m.group(1), m.group(2)
        if kind not in _SPEC_PARAMS:
            raise ConfigError(f"unknown degradation kind {kind!r}")
        kwargs = {}
        for pair in arg_text.split(","):
            pair = pair.strip()
            if not pair:
                continue
            if "=" not in pair:
                raise ConfigError(f"degradation parameter {pair!r} must be name=value")
            name, _, raw = pair.partition("=")
            name = name.strip()
            if name not in _SPEC_PARAMS[kind]:
                raise ConfigError(f"unknown parameter {name!r} for kind {kind!r}")
            kwargs[name] = _SPEC_PARAMS[kind][name](raw.strip())
        spec = DegradationSpec(kind=kind, **kwargs)
        spec.validate()
        specs.append(spec)
    if not specs:
        raise ConfigError("degradation.specs is empty")
    return tuple(specs)


# key -> (section, field, parser); sections address the nested dataclasses
_KEYS = {}


def _register(section: str, name: str, parser, key: str | None = None):
    _KEYS[key or f"{section}.{name}"] = (section, name, parser)


for _f, _p in [
    ("iterations", int),
    ("learning_rate", float),
    ("lr_halve_at", _parse_optional_int),
    ("batch_size", int),
    ("init_alpha", float),
    ("init_beta", float),
    ("eval_every", int),
    ("seed", int),
    ("checkpoint_every", int),
    ("charbonnier_eps", float),
    ("mask_mode", str),
    ("spatial_mode", str),
    ("kernel_size", int),
    ("n_bins", int),
    ("freeze", _parse_freeze),
]:
    _register("trainer", _f, _p)

for _f, _p in [
    ("population", int),
    ("generations", int),
    ("elites", int),
    ("mutation_sigma", float),
    ("trigger_interval", int),
    ("seed", int),
]:
    _register("eos", _f, _p)

for _f, _p in [
    ("manifest", str),
    ("val_fraction", float),
    ("test_fraction", float),
    ("split_seed", int),
]:
    _register("dataset", _f, _p)

_register("degradation", "specs", parse_degradation_specs)


def parse_assignments(lines, source: str) -> dict:
    """Parse `key = value` lines (comments with #) into a raw dict, fail-closed."""
    raw = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        raw[key] = value.strip()
    return raw


def load_config(path: str | None, overrides=()) -> AppConfig:
    """Read optional config file, then apply `key=value` override strings."""
    raw: dict = {}
    if path is not None:
        with open(path) as fh:
            raw.update(parse_assignments(fh.readlines(), path))
    for i, ov in enumerate(overrides):
        if "=" not in ov:
            raise ConfigError(f"override #{i + 1} must be key=value, got {ov!r}")
        raw.update(parse_assignments([ov], f"--set[{i}]"))

    sections = {"trainer": {}, "eos": {}, "dataset": {}, "degradation": {}}
    for key, text in raw.items():
        section, name, parser = _KEYS[key]
        try:
            sections[section][name] = parser(text)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc

    eos_cfg = EosConfig(**sections["eos"])
    trainer_cfg = replace(TrainConfig(**sections["trainer"]), eos=eos_cfg)
    trainer_cfg.validate()
    dataset_cfg = DatasetConfig(**sections["dataset"])
    dataset_cfg.split().validate()
    degradations = sections["degradation"].get("specs", ())
    return AppConfig(trainer=trainer_cfg, dataset=dataset_cfg, degradations=degradations)


_HINTS = {
    _parse_bool: "bool",
    _parse_optional_int: "int or 'none'",
    _parse_freeze: "comma list of lowpass/spectral/spatial",
    parse_degradation_specs: "kind(name=value,...);...",
}


def documented_keys() -> list:
    """Sorted (key, type hint) pairs for --help and the README table."""
    out = []
    for key, (section, name, parser) in sorted(_KEYS.items()):
        hint = _HINTS.get(parser, getattr(parser, "__name__", "str"))
        out.append((key, hint))
    return out
