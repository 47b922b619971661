"""Run configuration: one JSON document covering model, loss, training, data.

Layout (all sections optional; omitted keys take their defaults):

    {
      "fusion":   { ... FusionConfig fields ... },
      "refine":   { ... RefineConfig fields ... },
      "loss":     { ... LossWeights fields ... },
      "train":    { ... TrainConfig fields except "loss" ... },
      "data":     { "train_root": "...", "val_root": "..." },
      "extractor": { "kind": "surrogate" | "vgg19" | "none",
                     "seed": 0, "layers": [ ... ] },
      "haze_window": 15
    }

Unknown keys anywhere are rejected — a typo must fail loudly, not silently
train with a default. ``resolve()`` materializes every default so the exact
configuration of a run can be archived next to its checkpoints.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .fusion import FusionConfig
from .haze import DEFAULT_HAZE_WINDOW
from .losses import DEFAULT_VGG_LAYERS, FeatureExtractor, LossWeights
from .refine import RefineConfig
from .trainer import TrainConfig

EXTRACTOR_KINDS = ("surrogate", "vgg19", "none")


@dataclass(frozen=True)
class DataConfig:
    """Dataset roots; both follow the <root>/<clip>/{hazy,gt}/ layout."""

    train_root: str = ""
    val_root: str = ""


@dataclass(frozen=True)
class ExtractorConfig:
    """Which feature extractor backs the perceptual loss."""

    kind: str = "surrogate"
    seed: int = 0
    layers: tuple[str, ...] = DEFAULT_VGG_LAYERS

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.kind not in EXTRACTOR_KINDS:
            raise ValueError(f"extractor kind must be one of {EXTRACTOR_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a training or inference run needs, in one object."""

    fusion: FusionConfig = field(default_factory=FusionConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    haze_window: int = DEFAULT_HAZE_WINDOW

    def __post_init__(self):
        if self.haze_window < 1 or self.haze_window % 2 == 0:
            raise ValueError(f"haze_window must be odd and positive, got {self.haze_window}")
        # TrainConfig carries the loss weights it will optimize with; keep the
        # single source of truth in the top-level "loss" section.
        if self.train.loss != self.loss:
            object.__setattr__(self, "train", dataclasses.replace(self.train, loss=self.loss))


_SECTIONS = {
    "fusion": FusionConfig,
    "refine": RefineConfig,
    "loss": LossWeights,
    "train": TrainConfig,
    "data": DataConfig,
    "extractor": ExtractorConfig,
}


def _build_section(cls, doc: dict, section: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"section {section!r} must be an object, got {type(doc).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    if cls is TrainConfig and "loss" in doc:
        raise ConfigError("put loss weights in the top-level 'loss' section, not under 'train'",
                          keys=("train.loss",))
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(
            f"unknown keys in section {section!r}: {', '.join(unknown)}",
            keys=tuple(f"{section}.{k}" for k in unknown),
        )
    coerced = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in section {section!r}: {exc}") from exc


def run_config_from_dict(doc: dict) -> RunConfig:
    """Parse and validate a configuration document."""
    if not isinstance(doc, dict):
        raise ConfigError(f"configuration must be a JSON object, got {type(doc).__name__}")
    unknown = sorted(set(doc) - set(_SECTIONS) - {"haze_window"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}", keys=tuple(unknown))
    parts = {name: _build_section(cls, doc.get(name, {}), name) for name, cls in _SECTIONS.items()}
    haze_window = doc.get("haze_window", DEFAULT_HAZE_WINDOW)
    if not isinstance(haze_window, int) or isinstance(haze_window, bool):
        raise ConfigError(f"haze_window must be an integer, got {haze_window!r}")
    try:
        return RunConfig(haze_window=haze_window, **parts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return run_config_from_dict(doc)


def resolve(config: RunConfig) -> dict:
    """The fully materialized configuration, every default filled in."""

    def plain(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {k: plain(v) for k, v in dataclasses.asdict(value).items()}
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value

    doc = {name: plain(getattr(config, name)) for name in _SECTIONS}
    doc["train"].pop("loss", None)
    doc["haze_window"] = config.haze_window
    return doc


def save_resolved(config: RunConfig, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(resolve(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_extractor(config: RunConfig) -> FeatureExtractor | None:
    """Instantiate the configured perceptual feature extractor."""
    kind = config.extractor.kind
    if kind == "none":
        if config.loss.beta != 0.0:
            raise ConfigError("extractor 'none' requires loss.beta == 0")
        return None
    if kind == "vgg19":
        return FeatureExtractor.vgg19(config.extractor.layers)
    return FeatureExtractor.random_surrogate(seed=config.extractor.seed)
