"""Style encoder E_sty: a small VAE encoder predicting a diagonal Gaussian over style codes."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import torch
from torch import nn

from medical_dg.errors import ShapeError

MIN_VARIANCE = 1e-6
MAX_VARIANCE = 1e6


class StyleProvenance(str, Enum):
    SAMPLED = "sampled"
    MEAN = "mean"
    AUGMENTED_LINEAR = "augmented_linear"
    AUGMENTED_GAUSSIAN = "augmented_gaussian"


@dataclass
class StyleDistribution:
    mean: torch.Tensor  # N x Z
    variance: torch.Tensor  # N x Z, strictly positive

    def validate(self) -> None:
        if self.mean.shape != self.variance.shape:
            raise ShapeError(f"mean {tuple(self.mean.shape)} and variance {tuple(self.variance.shape)} differ")
        if not (torch.isfinite(self.mean).all() and torch.isfinite(self.variance).all()):
            raise ValueError("style distribution holds non-finite values")
        if (self.variance <= 0).any():
            raise ValueError("style variance must be strictly positive")


@dataclass
class StyleCode:
    z: torch.Tensor  # N x Z
    provenance: StyleProvenance = StyleProvenance.SAMPLED
    domain_ids: Optional[torch.Tensor] = None

    @property
    def dim(self) -> int:
        return self.z.shape[-1]

    def __len__(self) -> int:
        return self.z.shape[0]


class StyleEncoder(nn.Module):
    """Stride-2 conv blocks, global pooling, then two FC heads for mean and log-variance."""

    def __init__(self, in_channels: int, style_dim: int, channels: Sequence[int], slope: float = 0.2):
        super().__init__()
        layers = []
        prev = in_channels
        for c in channels:
            layers += [
                nn.Conv2d(prev, c, 3, stride=2, padding=1),
                nn.BatchNorm2d(c),
                nn.LeakyReLU(slope),
            ]
            prev = c
        self.body = nn.Sequential(*layers, nn.AdaptiveAvgPool2d(1), nn.Flatten())
        self.fc_mean = nn.Linear(prev, style_dim)
        self.fc_logvar = nn.Linear(prev, style_dim)

    def forward(self, images: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        features = self.body(images)
        logvar = self.fc_logvar(features).clamp(math.log(MIN_VARIANCE), math.log(MAX_VARIANCE))
        return self.fc_mean(features), torch.exp(logvar)


def sample_style(
    dist: StyleDistribution,
    mode: str = "reparameterized",
    generator: Optional[torch.Generator] = None,
    noise: Optional[torch.Tensor] = None,
) -> StyleCode:
    """
    Draw a style code from the predicted Gaussian.

    reparameterized: z = u + sqrt(v) * eps with eps ~ N(0, I) (or the injected noise)
    mean: z = u, used for deterministic inference
    """
    if mode == "mean":
        return StyleCode(z=dist.mean, provenance=StyleProvenance.MEAN)
    if mode != "reparameterized":
        raise ValueError(f"unknown style sampling mode {mode!r}")
    if noise is None:
        noise = torch.randn(dist.mean.shape, generator=generator, dtype=dist.mean.dtype).to(dist.mean.device)
    elif noise.shape != dist.mean.shape:
        raise ShapeError(f"noise {tuple(noise.shape)} does not match style shape {tuple(dist.mean.shape)}")
    return StyleCode(z=dist.mean + dist.variance.sqrt() * noise, provenance=StyleProvenance.SAMPLED)
