"""Flat ``section.key=value`` configuration files.

Sections: ``model``, ``encoder``, ``rfb``, ``train``, ``data``, ``synth``.
Lists are comma separated; ``#`` starts a comment line.
"""
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthSpec
from .dem_rfb import RFBConfig
from .encoder import EncoderConfig
from .errors import ConfigError, FanetIOError
from .model import ModelConfig


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    decay_every: int = 50
    decay_factor: float = 0.1
    batch_size: int = 4
    seed: int = 0
    augment: bool = True
    eval_every: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"must be > 0, got {self.lr}", "train.lr")
        if self.epochs < 0:
            raise ConfigError("must be >= 0", "train.epochs")
        if self.decay_every < 1:
            raise ConfigError("must be >= 1", "train.decay_every")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("must be in (0, 1]", "train.decay_factor")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "train.batch_size")
        if self.eval_every < 1:
            raise ConfigError("must be >= 1", "train.eval_every")


@dataclass
class DataConfig:
    manifest: str = ""
    workers: int = 1


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)


_SECTIONS = {
    "model": ModelConfig,
    "encoder": EncoderConfig,
    "rfb": RFBConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "synth": SynthSpec,
}
_NESTED = {"encoder", "rfb"}


def _coerce(raw, annotation, key):
    raw = raw.strip()
    origin = typing.get_origin(annotation)
    try:
        if annotation is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
        if annotation is tuple or origin is tuple:
            if key == "rfb.branches":
                return tuple(tuple(int(v) for v in pair.split(":")) for pair in raw.split(","))
            return tuple(int(v) for v in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {getattr(annotation, '__name__', annotation)}",
                          key) from exc


def parse_config(text, source="<config>"):
    values = {name: {} for name in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value", key or "?")
        section, dot, name = key.partition(".")
        if not dot or section not in _SECTIONS:
            raise ConfigError(f"{source}:{lineno}: unknown section", key)
        fields = {f.name: f for f in dataclasses.fields(_SECTIONS[section])}
        if name not in fields or name in _NESTED:
            raise ConfigError(f"{source}:{lineno}: unknown field", key)
        hints = typing.get_type_hints(_SECTIONS[section])
        values[section][name] = _coerce(raw, hints[name], key)

    encoder = EncoderConfig(**values["encoder"])
    rfb = RFBConfig(**values["rfb"])
    model = ModelConfig(encoder=encoder, rfb=rfb, **values["model"])
    return RunConfig(model=model, train=TrainConfig(**values["train"]),
                     data=DataConfig(**values["data"]), synth=SynthSpec(**values["synth"]))


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FanetIOError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(run):
    """Serialise a RunConfig back to key=value text."""
    lines = []
    for section, obj in (("model", run.model), ("encoder", run.model.encoder),
                         ("rfb", run.model.rfb), ("train", run.train),
                         ("data", run.data), ("synth", run.synth)):
        for f in dataclasses.fields(obj):
            if f.name in _NESTED:
                continue
            value = getattr(obj, f.name)
            if section == "rfb" and f.name == "branches":
                text = ",".join(f"{k}:{d}" for k, d in value)
            elif isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = str(value)
            lines.append(f"{section}.{f.name}={text}")
    return "\n".join(lines) + "\n"
