"""Pipeline configuration: a JSON document that round-trips losslessly."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .detect import FAMILIES
from .features import WindowConfig
from .ingest import DEFAULT_INDICATORS, Vocabulary
from .rvae.train import TrainConfig

INPUT_FORMATS = ("zeek", "csv")
TRANSFER_VARIANTS = ("with_label", "without_label")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InputConfig:
    conn: str | None = None
    weird: str | None = None
    format: str = "zeek"


@dataclass(frozen=True)
class SplitConfig:
    """Fractions of the capture's sequence blocks, in time order; the rest is the test split."""

    train: float = 0.5
    calib: float = 0.2


@dataclass(frozen=True)
class DetectionConfig:
    families: tuple[str, ...] = FAMILIES
    bins: int = 50


@dataclass(frozen=True)
class PipelineConfig:
    inputs: InputConfig = field(default_factory=InputConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    vocab: Vocabulary = field(default_factory=Vocabulary)
    indicators: tuple[str, ...] = tuple(sorted(DEFAULT_INDICATORS))
    model: dict = field(default_factory=lambda: {"kind": "rvae", "hidden": 512, "latent": 100,
                                                 "layers": 2})
    train: TrainConfig = field(default_factory=TrainConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    transfer_variant: str = "with_label"
    out_dir: str = "run"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.inputs.format not in INPUT_FORMATS:
            raise ConfigError(f"inputs.format must be one of {INPUT_FORMATS}")
        if self.model.get("kind") not in ("rvae", "mlp_vae"):
            raise ConfigError("model.kind must be 'rvae' or 'mlp_vae'")
        s = self.split
        if not (0 < s.train < 1 and 0 <= s.calib < 1 and s.train + s.calib < 1):
            raise ConfigError("split fractions must be positive and leave room for a test split")
        bad = [f for f in self.detection.families if f not in FAMILIES]
        if bad or not self.detection.families:
            raise ConfigError(f"unknown or empty detection families: {bad}")
        if self.detection.bins < 10:
            raise ConfigError("detection.bins must be >= 10")
        if self.transfer_variant not in TRANSFER_VARIANTS:
            raise ConfigError(f"transfer_variant must be one of {TRANSFER_VARIANTS}")
        if not self.indicators:
            raise ConfigError("indicators must not be empty")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    # text form ------------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab"] = self.vocab.to_dict()
        d["indicators"] = list(self.indicators)
        d["detection"]["families"] = list(self.detection.families)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = dict(d)
            if "inputs" in kw:
                kw["inputs"] = InputConfig(**kw["inputs"])
            if "window" in kw:
                kw["window"] = WindowConfig(**kw["window"])
            if "vocab" in kw:
                kw["vocab"] = Vocabulary.from_dict(kw["vocab"])
            if "indicators" in kw:
                kw["indicators"] = tuple(kw["indicators"])
            if "model" in kw:
                kw["model"] = dict(kw["model"])
            if "train" in kw:
                kw["train"] = TrainConfig(**kw["train"])
            if "detection" in kw:
                det = dict(kw["detection"])
                det["families"] = tuple(det.get("families", FAMILIES))
                kw["detection"] = DetectionConfig(**det)
            if "split" in kw:
                kw["split"] = SplitConfig(**kw["split"])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.dumps())

    # derived -----------------------------------------------------------------

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None,
                       **inputs) -> "PipelineConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if out_dir is not None:
            cfg = replace(cfg, out_dir=out_dir)
        given = {k: v for k, v in inputs.items() if v is not None}
        if given:
            cfg = replace(cfg, inputs=replace(cfg.inputs, **given))
        return cfg

    def train_config(self) -> TrainConfig:
        """Trainer settings with the pipeline seed applied."""
        return replace(self.train, seed=self.seed)

    def config_hash(self) -> str:
        """Digest of every setting that affects artifact contents.

        Input paths, the output directory and the worker count are left out so
        that moving a run or changing parallelism does not invalidate it.
        """
        d = self.to_dict()
        for k in ("out_dir", "workers", "inputs"):
            d.pop(k)
        d["input_format"] = self.inputs.format
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
