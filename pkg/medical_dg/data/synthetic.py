"""
Procedural multi-domain segmentation data.

Every sample is a nested-ellipse "anatomy" (outer structure with an inner
structure inside it, like a cup inside a disc) rendered from an anatomy seed,
then repainted by a per-domain style pipeline:

    gamma -> tint -> blur -> noise -> background blend

The mask is a function of the anatomy seed only; the style spec changes the
pixels, never the labels.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy.ndimage import gaussian_filter

from medical_dg.errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

_SEED_MASK = (1 << 64) - 1

# Base intensities of the un-styled render
_BACKGROUND_LEVEL = 0.2
_OUTER_LEVEL = 0.55
_INNER_LEVEL = 0.8
_CORE_LEVEL = 0.95
_BASE_COLOR = (1.0, 0.75, 0.5)


class DomainStyleSpec(BaseModel):
    """Appearance of one domain (scanner/protocol stand-in)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    domain_id: int = Field(ge=0)
    intensity_gamma: float = Field(1.0, gt=0.0)
    channel_tint: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_sigma: float = Field(0.0, ge=0.0)
    blur_radius: float = Field(0.0, ge=0.0)
    background_level: float = Field(0.0, ge=0.0, le=1.0)

    @field_validator("channel_tint")
    @classmethod
    def tint_range(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(t < 0.5 or t > 1.5 for t in v):
            raise ValueError(f"channel_tint entries must lie in [0.5, 1.5], got {v}")
        return v

    def style_key(self) -> Tuple:
        return (
            self.intensity_gamma,
            self.channel_tint,
            self.noise_sigma,
            self.blur_radius,
            self.background_level,
        )


class GeneratorConfig(BaseModel):
    """Settings for build_dataset; serialized into dataset.json."""

    model_config = ConfigDict(extra="forbid")

    domains: List[DomainStyleSpec] = Field(default_factory=lambda: default_domain_specs(), min_length=1)
    train_per_domain: int = Field(20, ge=1)
    test_per_domain: int = Field(5, ge=1)
    image_size: int = Field(256, ge=16)
    channels: int = 3
    num_classes: int = 3
    seed: int = 0

    @field_validator("channels")
    @classmethod
    def gray_or_rgb(cls, v: int) -> int:
        if v not in (1, 3):
            raise ValueError("channels must be 1 (gray) or 3 (color)")
        return v

    @field_validator("num_classes")
    @classmethod
    def supported_classes(cls, v: int) -> int:
        if v not in (2, 3):
            raise ValueError("the nested-ellipse generator renders 2 or 3 classes")
        return v

    @model_validator(mode="after")
    def distinct_domains(self) -> "GeneratorConfig":
        ids = [d.domain_id for d in self.domains]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate domain_id in {ids}")
        if sorted(ids) != list(range(len(ids))):
            raise ValueError(f"domain ids must be 0..D-1, got {sorted(ids)}")
        styles = [d.style_key() for d in self.domains]
        if len(set(styles)) != len(styles):
            raise ValueError("two domains share identical style fields")
        return self


@dataclass(frozen=True, eq=False)
class Sample:
    image: np.ndarray  # H x W x C, float32 in [0, 1]
    mask: np.ndarray  # H x W, uint8 labels in {0..K-1}
    domain_id: int
    case_id: str
    split: str = "train"
    anatomy_seed: Optional[int] = None

    def __post_init__(self):
        if self.image.ndim != 3:
            raise DataError(f"{self.case_id}: image must be H x W x C, got shape {self.image.shape}")
        if self.image.shape[:2] != self.mask.shape:
            raise DataError(
                f"{self.case_id}: image {self.image.shape[:2]} and mask {self.mask.shape} differ in size"
            )


@dataclass(frozen=True)
class MultiDomainDataset:
    samples: Tuple[Sample, ...]
    num_domains: int
    num_classes: int
    domain_specs: Tuple[DomainStyleSpec, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.samples)

    def domain_ids(self) -> List[int]:
        return list(range(self.num_domains))

    def split(self, split: str, domains: Optional[Iterable[int]] = None) -> List[Sample]:
        wanted = set(self.domain_ids() if domains is None else domains)
        return [s for s in self.samples if s.split == split and s.domain_id in wanted]

    def train_samples(self, domains: Optional[Iterable[int]] = None) -> List[Sample]:
        return self.split("train", domains)

    def test_samples(self, domains: Optional[Iterable[int]] = None) -> List[Sample]:
        return self.split("test", domains)

    def by_domain(self, split: str, domains: Optional[Iterable[int]] = None) -> Dict[int, List[Sample]]:
        pools: Dict[int, List[Sample]] = {d: [] for d in (self.domain_ids() if domains is None else domains)}
        for s in self.split(split, pools.keys()):
            pools[s.domain_id].append(s)
        return pools

    @property
    def image_channels(self) -> int:
        return int(self.samples[0].image.shape[-1]) if self.samples else 0

    @property
    def image_size(self) -> Tuple[int, int]:
        return tuple(self.samples[0].mask.shape) if self.samples else (0, 0)

    def validate(self, require_lodo: bool = False) -> None:
        """Check the dataset invariants; raise DataError on the first violation."""
        if self.num_domains < 1:
            raise DataError("dataset needs at least one domain")
        if self.num_classes < 2:
            raise DataError("dataset needs at least two classes")
        for s in self.samples:
            if not 0 <= s.domain_id < self.num_domains:
                raise DataError(f"{s.case_id}: domain_id {s.domain_id} outside 0..{self.num_domains - 1}")
            if s.split not in ("train", "test"):
                raise DataError(f"{s.case_id}: unknown split {s.split!r}")
            if s.mask.size and int(s.mask.max()) >= self.num_classes:
                raise DataError(f"{s.case_id}: label {int(s.mask.max())} >= num_classes {self.num_classes}")
        if require_lodo:
            for d in self.domain_ids():
                for split in ("train", "test"):
                    if not self.split(split, [d]):
                        raise DataError(f"domain {d} has no {split} samples")


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & _SEED_MASK for k in keys]))


def _ellipse(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def render_anatomy(
    anatomy_seed: int,
    image_size: Tuple[int, int] = (256, 256),
    num_classes: int = 3,
) -> Tuple[np.ndarray, np.ndarray]:
    """Render the un-styled intensity map (H x W in [0, 1]) and its label mask."""
    rng = _rng(anatomy_seed, 0)
    h, w = image_size
    side = min(h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    cy = h / 2 + rng.uniform(-0.12, 0.12) * h
    cx = w / 2 + rng.uniform(-0.12, 0.12) * w
    a = rng.uniform(0.22, 0.32) * side
    b = a * rng.uniform(0.75, 1.0)
    theta = rng.uniform(0.0, np.pi)
    outer = _ellipse(yy, xx, cy, cx, a, b, theta)

    # The inner ellipse sits inside the outer one's inscribed circle
    scale = rng.uniform(0.35, 0.6)
    ai, bi = a * scale, b * scale
    radius = rng.uniform(0.0, 0.8) * (b - ai)
    angle = rng.uniform(0.0, 2 * np.pi)
    icy, icx = cy + radius * np.sin(angle), cx + radius * np.cos(angle)
    inner = _ellipse(yy, xx, icy, icx, ai, bi, theta + rng.uniform(-0.3, 0.3)) & outer

    has_core = rng.uniform() < 0.5
    core = _ellipse(yy, xx, icy, icx, 0.4 * ai, 0.4 * bi, theta) & inner if has_core else np.zeros_like(inner)

    mask = np.zeros((h, w), dtype=np.uint8)
    mask[outer] = 1
    if num_classes >= 3:
        mask[inner] = 2

    intensity = np.full((h, w), _BACKGROUND_LEVEL)
    intensity[outer] = _OUTER_LEVEL
    intensity[inner] = _INNER_LEVEL
    intensity[core] = _CORE_LEVEL

    texture = gaussian_filter(rng.normal(size=(h, w)), sigma=max(side / 16, 1.0))
    texture /= texture.std() + 1e-12
    rr = ((yy - h / 2) ** 2 + (xx - w / 2) ** 2) / ((side / 2) ** 2)
    intensity = intensity * (1.0 - 0.25 * np.clip(rr, 0.0, 1.0)) + 0.04 * texture
    return np.clip(intensity, 0.0, 1.0), mask


def _colorize(intensity: np.ndarray, channels: int) -> np.ndarray:
    if channels == 1:
        return intensity[..., None]
    return intensity[..., None] * np.asarray(_BASE_COLOR)[None, None, :]


def render_unstyled(
    anatomy_seed: int,
    image_size: Tuple[int, int] = (256, 256),
    channels: int = 3,
    num_classes: int = 3,
) -> Tuple[np.ndarray, np.ndarray]:
    """H x W x C un-styled image and its mask; the identity style leaves the image unchanged."""
    intensity, mask = render_anatomy(anatomy_seed, image_size, num_classes)
    return _colorize(intensity, channels), mask


def apply_style(image: np.ndarray, spec: DomainStyleSpec, noise_rng: np.random.Generator) -> np.ndarray:
    """Apply gamma -> tint -> blur -> noise -> background blend to an H x W x C image."""
    out = np.power(image, spec.intensity_gamma)

    channels = out.shape[-1]
    tint = np.asarray(spec.channel_tint) if channels == 3 else np.full(channels, np.mean(spec.channel_tint))
    out = np.clip(out * tint[None, None, :], 0.0, 1.0)

    if spec.blur_radius > 0:
        out = gaussian_filter(out, sigma=(spec.blur_radius, spec.blur_radius, 0.0))

    if spec.noise_sigma > 0:
        out = np.clip(out + noise_rng.normal(0.0, spec.noise_sigma, size=out.shape), 0.0, 1.0)

    return spec.background_level + (1.0 - spec.background_level) * out


def generate_sample(
    spec: DomainStyleSpec,
    anatomy_seed: int,
    image_size: Tuple[int, int] = (256, 256),
    channels: int = 3,
    num_classes: int = 3,
    split: str = "train",
    case_id: Optional[str] = None,
) -> Sample:
    """Render one (image, mask) pair; a pure function of (spec, anatomy_seed, sizes)."""
    if not isinstance(spec, DomainStyleSpec):
        try:
            spec = DomainStyleSpec.model_validate(spec)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid domain style: {e}") from e

    image, mask = render_unstyled(anatomy_seed, image_size, channels, num_classes)
    image = apply_style(image, spec, _rng(anatomy_seed, 1, spec.domain_id))
    image = image.astype(np.float32)
    image.setflags(write=False)
    mask.setflags(write=False)
    return Sample(
        image=image,
        mask=mask,
        domain_id=spec.domain_id,
        case_id=case_id or f"d{spec.domain_id}_seed{anatomy_seed}",
        split=split,
        anatomy_seed=anatomy_seed,
    )


def default_domain_specs() -> List[DomainStyleSpec]:
    """Four fundus-like appearance domains."""
    return [
        DomainStyleSpec(domain_id=0, intensity_gamma=1.0, channel_tint=(1.2, 0.85, 0.6),
                        noise_sigma=0.02, blur_radius=0.0, background_level=0.0),
        DomainStyleSpec(domain_id=1, intensity_gamma=0.7, channel_tint=(0.9, 1.0, 1.1),
                        noise_sigma=0.05, blur_radius=1.0, background_level=0.1),
        DomainStyleSpec(domain_id=2, intensity_gamma=1.4, channel_tint=(1.3, 0.7, 0.55),
                        noise_sigma=0.01, blur_radius=0.5, background_level=0.05),
        DomainStyleSpec(domain_id=3, intensity_gamma=0.85, channel_tint=(0.7, 0.8, 1.3),
                        noise_sigma=0.08, blur_radius=1.5, background_level=0.2),
    ]


def default_generator_config(
    image_size: int = 256,
    train_per_domain: int = 20,
    test_per_domain: int = 5,
    seed: int = 0,
) -> GeneratorConfig:
    return GeneratorConfig(
        domains=default_domain_specs(),
        train_per_domain=train_per_domain,
        test_per_domain=test_per_domain,
        image_size=image_size,
        seed=seed,
    )


def anatomy_seeds(config: GeneratorConfig) -> Dict[Tuple[int, str], List[int]]:
    """Distinct anatomy seeds per (domain, split); train and test never share a seed."""
    per_domain = config.train_per_domain + config.test_per_domain
    total = len(config.domains) * per_domain
    pool = _rng(config.seed, 2).permutation(total * 16)[:total]
    seeds: Dict[Tuple[int, str], List[int]] = {}
    for d, spec in enumerate(sorted(config.domains, key=lambda s: s.domain_id)):
        chunk = pool[d * per_domain:(d + 1) * per_domain].tolist()
        seeds[(spec.domain_id, "train")] = chunk[:config.train_per_domain]
        seeds[(spec.domain_id, "test")] = chunk[config.train_per_domain:]
    return seeds


def build_dataset(config, require_contrastive: bool = False) -> MultiDomainDataset:
    """Render every domain's train/test split from a GeneratorConfig (or its dict form)."""
    if not isinstance(config, GeneratorConfig):
        try:
            config = GeneratorConfig.model_validate(config)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid generator config: {e}") from e

    if require_contrastive and len(config.domains) < 2:
        raise ConfigurationError("contrastive training needs at least two domains")

    size = (config.image_size, config.image_size)
    seeds = anatomy_seeds(config)
    samples: List[Sample] = []
    for spec in sorted(config.domains, key=lambda s: s.domain_id):
        for split in ("train", "test"):
            for i, seed in enumerate(seeds[(spec.domain_id, split)]):
                samples.append(generate_sample(
                    spec, seed, size, config.channels, config.num_classes,
                    split=split, case_id=f"d{spec.domain_id}_{split}_{i:04d}",
                ))

    dataset = MultiDomainDataset(
        samples=tuple(samples),
        num_domains=len(config.domains),
        num_classes=config.num_classes,
        domain_specs=tuple(sorted(config.domains, key=lambda s: s.domain_id)),
    )
    dataset.validate(require_lodo=True)
    logger.info(
        f"Generated {len(dataset)} samples over {dataset.num_domains} domains "
        f"({config.train_per_domain} train / {config.test_per_domain} test each, {config.image_size}px)"
    )
    return dataset
