"""Default hyperparameters and the INI-style training configuration file."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from importlib import resources

from .exceptions import ConfigError

__all__ = ["DEFAULTS", "TrainConfig", "arch_config", "load_train_config", "dump_train_config"]


def _load_defaults() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string(resources.files("cwsep").joinpath("defaults.ini").read_text())
    return parser


DEFAULTS = _load_defaults()


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def arch_config(name: str) -> dict:
    """Return the frozen architecture description for ``unet5``, ``unet6`` or ``mdn``."""
    section = f"arch.{name}"
    if not DEFAULTS.has_section(section):
        known = sorted(s[5:] for s in DEFAULTS.sections() if s.startswith("arch."))
        raise ConfigError(f"unknown architecture {name!r}; choose from {known}")
    sec = DEFAULTS[section]
    if sec["kind"] == "unet":
        return {
            "kind": "unet",
            "scale": sec.getint("scale"),
            "base_channels": sec.getint("base_channels"),
            "width_cap": sec.getint("width_cap"),
            "width_mult": sec.getfloat("width_mult"),
        }
    return {
        "kind": "mdensenet",
        "scale": sec.getint("scale"),
        "stem_channels": sec.getint("stem_channels"),
        "growth": _ints(sec["growth"]),
        "layers": _ints(sec["layers"]),
    }


_T = DEFAULTS["train"]
_A = DEFAULTS["augment"]


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``decay_interval`` and ``validate_interval`` count seconds of training
    audio consumed, so tests can shrink the schedule proportionally.
    """

    lr0: float = _T.getfloat("lr0")
    dropout: float = _T.getfloat("dropout")
    decay_factor: float = _T.getfloat("decay_factor")
    decay_interval: float = _T.getfloat("decay_interval")
    validate_interval: float = _T.getfloat("validate_interval")
    patience: int = _T.getint("patience")
    chunk_seconds: float = _T.getfloat("chunk_seconds")
    batch_size: int = _T.getint("batch_size")
    K: int = _T.getint("k")
    seed: int = _T.getint("seed")
    max_steps: int = _T.getint("max_steps")
    conservation: str = _T.get("conservation")
    arch: str = _T.get("arch")
    prefetch: int = _T.getint("prefetch")
    validation_batches: int = _T.getint("validation_batches")
    gain_min: float = _A.getfloat("gain_min")
    gain_max: float = _A.getfloat("gain_max")
    # optional architecture overrides, e.g. {"scale": 2, "base_channels": 8}
    arch_overrides: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        positive = ("lr0", "decay_factor", "decay_interval", "validate_interval",
                    "chunk_seconds", "batch_size", "K", "max_steps", "prefetch",
                    "validation_batches")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.K not in (1, 2, 4, 8):
            raise ConfigError(f"K must be one of 1, 2, 4, 8, got {self.K}")
        if self.conservation not in ("mixture", "per_source"):
            raise ConfigError(f"conservation must be 'mixture' or 'per_source'")
        if not 0 < self.gain_min <= self.gain_max:
            raise ConfigError("need 0 < gain_min <= gain_max")

    def model_config(self) -> dict:
        cfg = arch_config(self.arch)
        cfg.update(self.arch_overrides)
        return cfg


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_SECTION_KEYS = {
    "train": [n for n in _FIELD_TYPES if n not in ("gain_min", "gain_max", "arch_overrides")],
    "augment": ["gain_min", "gain_max"],
}
_ARCH_KEYS = {"scale", "base_channels", "width_cap", "width_mult", "stem_channels",
              "growth", "layers"}


def _convert(name, raw):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from exc
    return raw


def _convert_arch(key, raw):
    if key in ("growth", "layers"):
        return _ints(raw)
    if key == "width_mult":
        return float(raw)
    return int(raw)


def load_train_config(path) -> TrainConfig:
    """Parse a ``key = value`` file with ``[train]``, ``[augment]`` and ``[model]`` sections.

    Unknown sections or keys raise :class:`ConfigError`. Missing keys keep
    their defaults. ``[model]`` holds architecture overrides.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = {}
    overrides = {}
    lowered = {name.lower(): name for name in _FIELD_TYPES}
    for section in parser.sections():
        if section == "model":
            for key, raw in parser[section].items():
                if key not in _ARCH_KEYS:
                    raise ConfigError(f"{path}: unknown key {key!r} in [model]")
                overrides[key] = _convert_arch(key, raw)
            continue
        if section not in _SECTION_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser[section].items():
            name = lowered.get(key.lower())
            if name is None or name not in _SECTION_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            values[name] = _convert(name, raw)
    return TrainConfig(**values, arch_overrides=overrides)


def dump_train_config(cfg: TrainConfig) -> str:
    lines = []
    for section, names in _SECTION_KEYS.items():
        lines.append(f"[{section}]")
        lines += [f"{name} = {getattr(cfg, name)}" for name in names]
        lines.append("")
    if cfg.arch_overrides:
        lines.append("[model]")
        for key, value in cfg.arch_overrides.items():
            if isinstance(value, tuple):
                value = ", ".join(map(str, value))
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
