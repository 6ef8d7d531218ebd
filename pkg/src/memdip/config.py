"""Experiment configuration: one JSON document, hashed canonically."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import canonical_json
from .data.synth import SynthConfig
from .dsp import DEFAULT_CHANNELS, ConfigError, WelchConfig, retained_bins
from .model import MemConfig
from .training import TrainConfig

# 10-10 system labels (upper case) accepted as channel names
_ROWS = {
    "FP": "z12", "AF": "z3478", "F": "z12345678", "FT": "78", "FC": "z123456",
    "T": "78", "C": "z123456", "TP": "78", "CP": "z123456", "P": "z12345678",
    "PO": "z3478", "O": "z12", "I": "z12",
}
STANDARD_CHANNELS = frozenset(
    {f"{row}{'Z' if s == 'z' else s}" for row, sites in _ROWS.items() for s in sites}
    | {"T3", "T4", "T5", "T6", "A1", "A2", "M1", "M2", "CB1", "CB2", "FT9", "FT10", "TP9", "TP10",
       "P9", "P10", "F9", "F10"}
)


def config_hash(doc: dict) -> str:
    """SHA-256 over canonical JSON, so key order never matters."""
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


@dataclass
class ExperimentConfig:
    corpus: str = "corpus"
    out_dir: str = "runs/default"
    seed: int = 0
    channels: tuple[str, ...] = DEFAULT_CHANNELS
    sampling_rate_hz: float = 500.0
    welch: WelchConfig = field(default_factory=WelchConfig)
    synth: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict, repr=False)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    @property
    def hash(self) -> str:
        doc = dict(self.source)
        doc["seed"] = self.seed
        return config_hash(doc)

    @property
    def corpus_path(self) -> Path:
        return (self.base_dir / self.corpus).resolve()

    @property
    def out_path(self) -> Path:
        return (self.base_dir / self.out_dir).resolve()

    def synth_config(self) -> SynthConfig:
        d = dict(self.synth)
        d.setdefault("channel_names", list(self.channels))
        d.setdefault("sampling_rate_hz", self.sampling_rate_hz)
        return SynthConfig.from_dict(d).validate()

    def model_config(self, strategy: str | None = None) -> MemConfig:
        d = dict(self.model)
        d.setdefault("n_channels", len(self.channels))
        d.setdefault("n_bins", len(retained_bins(self.welch, self.sampling_rate_hz)))
        if strategy is not None:
            d["strategy"] = strategy
        try:
            return MemConfig.from_dict(d)
        except TypeError as exc:
            raise ConfigError(f"model: {exc}") from exc

    def train_config(self) -> TrainConfig:
        d = dict(self.train)
        d["seed"] = self.seed
        try:
            return TrainConfig.from_dict(d)
        except TypeError as exc:
            raise ConfigError(f"train: {exc}") from exc


_KNOWN = {"corpus", "out_dir", "seed", "channels", "sampling_rate_hz", "welch", "synth", "model", "train", "eval"}


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    channels = tuple(str(c) for c in doc.get("channels", DEFAULT_CHANNELS))
    for c in channels:
        if c.upper() not in STANDARD_CHANNELS:
            raise ConfigError(f"channels: invalid channel name {c!r}")
    if len(set(channels)) != len(channels):
        raise ConfigError("channels: duplicate channel name")
    try:
        welch = WelchConfig.from_dict(doc.get("welch", {}))
    except TypeError as exc:
        raise ConfigError(f"welch: {exc}") from exc
    fs = float(doc.get("sampling_rate_hz", 500.0))
    welch.validate(fs)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    cfg = ExperimentConfig(
        corpus=str(doc.get("corpus", "corpus")),
        out_dir=str(doc.get("out_dir", "runs/default")),
        seed=seed,
        channels=channels,
        sampling_rate_hz=fs,
        welch=welch,
        synth=dict(doc.get("synth", {})),
        model=dict(doc.get("model", {})),
        train=dict(doc.get("train", {})),
        eval=dict(doc.get("eval", {})),
        source=copy.deepcopy(doc),
        base_dir=base_dir or Path.cwd(),
    )
    # surface field errors early
    cfg.model_config()
    cfg.train_config()
    if cfg.synth:
        cfg.synth_config()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc, path.parent)
