"""Experiment configuration: INI sections mapped onto dataclasses.

Every section and key must be known; typos are errors that name the
offending ``section.key``. See docs/formats.md for the schema.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    name: str = "run"
    seed: int = 0


@dataclass
class DataSection:
    n_classes: int = 8
    radius: float = 4.0
    std: float = 0.4
    n_train: int = 20000
    n_reference: int = 5000


@dataclass
class NoiseSection:
    beta: float = 0.5
    kappa: float = 0.5
    n_bins: int = 8
    # raw: condition on 1 - u directly; binned: on the normalized bin index
    coherence_source: str = "raw"


@dataclass
class ModelSection:
    emb_dim: int = 64
    width: int = 256
    depth: int = 4
    merged: bool = True
    max_freq: float = 1e4


@dataclass
class TrainSection:
    steps: int = 6000
    batch_size: int = 128
    regime: str = "cad"
    schedule: str = "cosine"
    loss_norm: str = "squared"
    optimizer: str = "lamb"
    lr: float = 3e-3
    warmup: int = 500
    weight_decay: float = 0.01
    ema_decay: float = 0.999
    cond_dropout: float = 0.0
    log_every: int = 50


@dataclass
class SampleSection:
    n: int = 800
    steps: int = 250
    eta: float = 0.0
    guidance: str = "none"
    omega: float = 0.0
    coherence: float = 1.0
    # "uniform" cycles through all classes; otherwise a comma list of ids
    labels: str = "uniform"
    weights: str = "ema"


@dataclass
class EvalSection:
    k: int = 5


@dataclass
class SweepSection:
    axis: str = "coherence"
    grid: str = "0,0.142857142857,0.285714285714,0.428571428571,0.571428571429,0.714285714286,0.857142857143,1"


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    sample: SampleSection = field(default_factory=SampleSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def validate(self) -> None:
        checks = [
            (self.data.n_classes >= 2, "data.n_classes", "must be >= 2"),
            (self.data.radius > 0, "data.radius", "must be > 0"),
            (self.data.std > 0, "data.std", "must be > 0"),
            (self.data.n_train >= 0, "data.n_train", "must be >= 0"),
            (self.data.n_reference >= 0, "data.n_reference", "must be >= 0"),
            (0 < self.noise.beta < 1, "noise.beta", "must lie in (0, 1)"),
            (0 < self.noise.kappa < 1, "noise.kappa", "must lie in (0, 1)"),
            (self.noise.n_bins >= 2, "noise.n_bins", "must be >= 2"),
            (self.noise.coherence_source in ("raw", "binned"), "noise.coherence_source", "must be raw or binned"),
            (self.train.regime in ("baseline", "cad", "filtered", "weighted"), "train.regime", "unknown regime"),
            (self.train.schedule in ("cosine", "linear"), "train.schedule", "must be cosine or linear"),
            (self.train.loss_norm in ("squared", "unsquared"), "train.loss_norm", "must be squared or unsquared"),
            (self.train.optimizer in ("adam", "lamb"), "train.optimizer", "must be adam or lamb"),
            (self.train.steps >= 0, "train.steps", "must be >= 0"),
            (self.sample.steps >= 1, "sample.steps", "must be >= 1"),
            (0 <= self.sample.eta <= 1, "sample.eta", "must lie in [0, 1]"),
            (self.sample.guidance in ("none", "cfg", "ca-cfg"), "sample.guidance", "unknown guidance mode"),
            (self.sample.weights in ("ema", "final"), "sample.weights", "must be ema or final"),
            (self.sweep.axis in ("guidance", "coherence"), "sweep.axis", "must be guidance or coherence"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg}")

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return dataclasses.asdict(self)


def _coerce(raw: str, typ, key: str):
    try:
        if typ is bool or typ == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from err
    cfg = ExperimentConfig()
    sections = {f.name: f for f in fields(ExperimentConfig)}
    for sec in parser.sections():
        if sec not in sections:
            raise ConfigError(f"{sec}: unknown section")
        target = getattr(cfg, sec)
        known = {f.name: f.type for f in fields(target)}
        for key, raw in parser.items(sec):
            if key not in known:
                raise ConfigError(f"{sec}.{key}: unknown key")
            setattr(target, key, _coerce(raw, known[key], f"{sec}.{key}"))
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec, values in cfg.to_dict().items():
        parser[sec] = {k: str(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
