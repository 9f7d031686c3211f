import json
import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from medical_dg.data.synthetic import GeneratorConfig, default_generator_config
from medical_dg.errors import ConfigurationError

load_dotenv()

logger = logging.getLogger(__name__)


class Config:
    # Process environment
    SEED = os.getenv("CDDSA_SEED")
    DEVICE = os.getenv("CDDSA_DEVICE", "cpu")
    LOG_LEVEL = os.getenv("CDDSA_LOG_LEVEL", "INFO")

    # Default locations
    RUNS_DIR = os.getenv("CDDSA_RUNS_DIR", "runs")
    DATA_DIR = os.getenv("CDDSA_DATA_DIR", "data/synthetic")

    @classmethod
    def seed_override(cls) -> Optional[int]:
        """Seed forced through CDDSA_SEED, read at call time so tests can patch the env."""
        raw = os.getenv("CDDSA_SEED", cls.SEED)
        if raw is None or raw == "":
            return None
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigurationError(f"CDDSA_SEED must be an integer, got {raw!r}") from e


class ActivationKind(str, Enum):
    TANH = "tanh"
    SOFTMAX = "softmax"
    GUMBEL_HARD = "gumbel_hard"
    GUMBEL_SOFT = "gumbel_soft"


class TrainMode(str, Enum):
    CDDSA = "cddsa"
    CDDSA_GAUSSIAN = "cddsa_gaussian"
    BASELINE_SDNET = "baseline_sdnet"
    PLUS_DSCT = "plus_dsct"
    PLUS_SAAC = "plus_saac"
    INTER_DOMAIN = "inter_domain"
    INTRA_DOMAIN = "intra_domain"

    @property
    def disentangles(self) -> bool:
        """Whether the style encoder/decoder path (kl + rec) is trained."""
        return self not in (TrainMode.INTER_DOMAIN, TrainMode.INTRA_DOMAIN)

    @property
    def uses_dsct(self) -> bool:
        return self in (TrainMode.PLUS_DSCT, TrainMode.CDDSA, TrainMode.CDDSA_GAUSSIAN)

    @property
    def uses_saac(self) -> bool:
        return self in (TrainMode.PLUS_SAAC, TrainMode.CDDSA, TrainMode.CDDSA_GAUSSIAN)

    @property
    def style_sampler(self) -> str:
        return "gaussian" if self is TrainMode.CDDSA_GAUSSIAN else "linear"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class ModelConfig(_Section):
    """Widths and activation choices for the four networks."""

    anatomy_channels: int = Field(8, ge=1, description="T, channels of the anatomical representation")
    style_dim: int = Field(16, ge=1, description="Z, length of the style code")
    unet_channels: List[int] = Field(default_factory=lambda: [16, 32, 64, 128, 256])
    style_channels: List[int] = Field(default_factory=lambda: [16, 32, 64, 128])
    decoder_channels: List[int] = Field(default_factory=lambda: [64, 32, 16])
    segmentor_channels: int = Field(16, ge=1)
    num_classes: int = Field(3, ge=2, description="K")
    image_channels: int = Field(3, ge=1)
    leaky_slope: float = Field(0.2, ge=0.0)
    activation_kind: ActivationKind = ActivationKind.TANH
    gumbel_temperature: float = Field(0.5, gt=0.0)
    adain_eps: float = Field(1e-8, ge=0.0)
    srm_hidden: Optional[int] = Field(None, ge=1, description="None -> max(Z, C'/2) per block")

    @field_validator("unet_channels")
    @classmethod
    def five_scales(cls, v: List[int]) -> List[int]:
        if len(v) != 5 or any(c <= 0 for c in v):
            raise ValueError("unet_channels needs five positive widths")
        return v

    @field_validator("style_channels", "decoder_channels")
    @classmethod
    def positive_widths(cls, v: List[int]) -> List[int]:
        if not v or any(c <= 0 for c in v):
            raise ValueError("channel widths must be positive")
        return v

    @field_validator("decoder_channels")
    @classmethod
    def three_styled_blocks(cls, v: List[int]) -> List[int]:
        if len(v) != 3:
            raise ValueError("decoder_channels lists the three AdaIN-conditioned blocks")
        return v

    @model_validator(mode="after")
    def warn_narrow_anatomy(self) -> "ModelConfig":
        if self.anatomy_channels < self.num_classes:
            logger.warning(
                f"anatomy_channels T={self.anatomy_channels} < num_classes K={self.num_classes}; "
                "T >= K is recommended"
            )
        return self

    def srm_hidden_width(self, block_channels: int) -> int:
        if self.srm_hidden is not None:
            return self.srm_hidden
        return max(self.style_dim, block_channels // 2)


class LossWeights(_Section):
    lambda1: float = Field(1.0, ge=0.0, description="KL")
    lambda2: float = Field(0.001, ge=0.0, description="reconstruction")
    lambda3: float = Field(0.01, ge=0.0, description="domain style contrastive")
    lambda4: float = Field(1.0, ge=0.0, description="style-augmentation anatomical consistency")


class TrainConfig(_Section):
    mode: TrainMode = TrainMode.CDDSA
    epochs: int = Field(200, ge=1)
    per_domain_batch: int = Field(8, ge=1)
    steps_per_epoch: Optional[int] = Field(None, ge=1)
    lr_init: float = Field(1e-3, gt=0.0)
    lr_decay_factor: float = Field(0.95, gt=0.0, le=1.0)
    lr_patience_epochs: int = Field(8, ge=1)
    weights: LossWeights = Field(default_factory=LossWeights)
    tau: float = Field(0.1, gt=0.0)
    derangement: bool = False
    augment_per_sample: bool = False
    segment_augmented: bool = False
    saac_stop_gradient: bool = False
    validation_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    eval_batch_size: int = Field(16, ge=1)
    seed: int = 0
    deterministic: bool = False

    @model_validator(mode="after")
    def contrastive_needs_pairs(self) -> "TrainConfig":
        if self.mode.uses_dsct and self.per_domain_batch < 2:
            raise ValueError("per_domain_batch must be >= 2 when the contrastive term is active")
        return self

    def with_preset(self, name: str) -> "TrainConfig":
        """Fill epochs and per-domain batch from a data preset, keeping explicitly set values."""
        if name not in TRAIN_PRESETS:
            raise ConfigurationError(f"unknown training preset {name!r}; choose from {sorted(TRAIN_PRESETS)}")
        unset = {
            k: v for k, v in TRAIN_PRESETS[name].items()
            if k not in self.model_fields_set and getattr(self, k) != v
        }
        return self.model_copy(update=unset) if unset else self


# Schedule lengths per kind of data: color (fundus-like) and gray (MRI-like) images
TRAIN_PRESETS: Dict[str, Dict[str, int]] = {
    "color": {"epochs": 200, "per_domain_batch": 8},
    "gray": {"epochs": 400, "per_domain_batch": 6},
}


class AugmentationConfig(_Section):
    """Basic geometric augmentations applied to training batches."""

    flip: bool = True
    rotate90: bool = True
    crop_size: Optional[int] = Field(None, ge=16)

    @field_validator("crop_size")
    @classmethod
    def divisible_crop(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v % 16:
            raise ValueError("crop_size must be a multiple of 16")
        return v


class EvaluationConfig(_Section):
    spacing: Tuple[float, float] = (1.0, 1.0)
    nested_classes: bool = True
    class_names: Optional[List[str]] = None

    @field_validator("spacing")
    @classmethod
    def positive_spacing(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if any(s <= 0 for s in v):
            raise ValueError("spacing must be positive")
        return v


class ExperimentConfig(_Section):
    generator: GeneratorConfig = Field(default_factory=default_generator_config)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    augmentation: AugmentationConfig = Field(default_factory=AugmentationConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    def snapshot(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def check_generator(self) -> None:
        """The generated data must fit the model it is meant for."""
        if self.model.num_classes != self.generator.num_classes:
            raise ConfigurationError(
                f"model.num_classes={self.model.num_classes} does not match "
                f"generator.num_classes={self.generator.num_classes}"
            )
        if self.model.image_channels != self.generator.channels:
            raise ConfigurationError(
                f"model.image_channels={self.model.image_channels} does not match "
                f"generator.channels={self.generator.channels}"
            )

    def fit_to_data(self, num_classes: int, image_channels: int) -> "ExperimentConfig":
        """
        Copy whose model matches a loaded dataset's classes and channels.

        Gray data also picks up the gray training preset for any schedule
        field the config did not set.
        """
        model = self.model
        if (model.num_classes, model.image_channels) != (num_classes, image_channels):
            logger.info(
                f"Model set to the dataset's {num_classes} classes / {image_channels} channels "
                f"(configured {model.num_classes} / {model.image_channels})"
            )
            model = ModelConfig.model_validate({**model.model_dump(), "num_classes": num_classes, "image_channels": image_channels})
        train = self.train.with_preset("gray" if image_channels == 1 else "color")
        if train is not self.train:
            logger.info(f"Training preset for {image_channels}-channel data: {train.epochs} epochs, b={train.per_domain_batch}")
        return self.model_copy(update={"model": model, "train": train})


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_experiment_config(
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """
    Resolve the experiment configuration.

    Precedence: defaults < config file < CDDSA_SEED < overrides (CLI flags).
    Overrides use the same nested section layout as the file.
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigurationError(f"Config file {path} must hold a JSON object")
        # A run manifest carries its resolved config
        if raw.get("kind") == "run_manifest":
            raw = raw.get("config") or {}

    env_seed = Config.seed_override()
    if env_seed is not None:
        raw = _merge(raw, {"train": {"seed": env_seed}, "generator": {"seed": env_seed}})

    if overrides:
        raw = _merge(raw, overrides)

    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e

    return config


def save_experiment_config(config: ExperimentConfig, path: Path) -> None:
    Path(path).write_text(json.dumps(config.snapshot(), indent=2), encoding="utf-8")
