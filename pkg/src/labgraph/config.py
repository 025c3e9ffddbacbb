"""Run configuration: plain ``key = value`` files with ``[section]`` headers."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .adversarial import AatConfig
from .aggregator import AggregatorConfig
from .encoder import EncoderConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    corpus: str = "corpus.jsonl"
    graph: str = "graph.tsv"
    out: str = "run"


@dataclass
class GeneratorConfig:
    code_dim: int = 16
    lr: float = 1e-2
    step_weight: float = 0.5
    terminal_weight: float = 0.5
    budget: int = 8
    baseline_momentum: float = 0.9
    siblings: bool = True
    mle_weight: float = 1.0
    logit_l2: float = 1e-2


@dataclass
class DiscriminatorConfig:
    hidden: int = 16
    lr: float = 1e-3
    prefix_prob: float = 0.5
    random_walk_frac: float = 0.5
    epochs: int = 1


@dataclass
class TrainConfig:
    rounds: int = 30
    batch_size: int = 50
    seed: int = 0
    optimizer: str = "adam"
    arcl: bool = True
    mim: bool = True
    mhr_cnn: bool = True
    aat: bool = True


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    aat: AatConfig = field(default_factory=AatConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def hash(self) -> str:
        """Digest of everything except file locations."""
        body = {k: v for k, v in dataclasses.asdict(self).items() if k != "data"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def copy(self) -> "RunConfig":
        return from_dict(dataclasses.asdict(self))

    def set(self, dotted: str, value):
        section, key = dotted.split(".", 1)
        sub = getattr(self, section)
        if not hasattr(sub, key):
            raise ConfigError(f"unknown config key {dotted}")
        setattr(sub, key, _coerce(getattr(sub, key), value, dotted))

    def to_text(self) -> str:
        lines = []
        for name, sub in dataclasses.asdict(self).items():
            lines.append(f"[{name}]")
            for k, v in sub.items():
                if isinstance(v, (list, tuple)):
                    v = ", ".join(str(x) for x in v)
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def _coerce(default, raw, key):
    if not isinstance(raw, str):
        return type(default)(raw) if default is not None and not isinstance(default, tuple) else raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return None if text.lower() == "none" else float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in re.split(r"[,\s]+", text) if x)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def from_dict(d) -> RunConfig:
    cfg = RunConfig()
    for section, values in d.items():
        sub = getattr(cfg, section)
        for k, v in values.items():
            setattr(sub, k, tuple(v) if isinstance(getattr(sub, k), tuple) else v)
    return cfg


def _line_of(lines, section, key):
    current = None
    for i, line in enumerate(lines, 1):
        s = line.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"^{re.escape(key)}\s*[=:]", s):
            return i
    return 0


def load_config(path) -> RunConfig:
    """Parse a config file; errors carry the offending line number."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    lines = text.splitlines()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: key outside of any [section]") from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else 0
        raise ConfigError(f"{path}:{lineno}: malformed line") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}:{getattr(exc, 'lineno', 0)}: {exc.message}") from None
    cfg = RunConfig()
    for section in parser.sections():
        if not hasattr(cfg, section):
            raise ConfigError(f"{path}:{_line_of_section(lines, section)}: unknown section [{section}]")
        sub = getattr(cfg, section)
        for key, raw in parser.items(section):
            lineno = _line_of(lines, section, key)
            if not hasattr(sub, key):
                raise ConfigError(f"{path}:{lineno}: unknown key {section}.{key}")
            try:
                setattr(sub, key, _coerce(getattr(sub, key), raw, f"{section}.{key}"))
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    base = path.parent
    for attr in ("corpus", "graph", "out"):
        p = Path(getattr(cfg.data, attr))
        if not p.is_absolute():
            setattr(cfg.data, attr, str(base / p))
    return cfg


def _line_of_section(lines, section):
    for i, line in enumerate(lines, 1):
        if line.strip() == f"[{section}]":
            return i
    return 0
