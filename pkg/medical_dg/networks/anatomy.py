"""Anatomy encoder E_ana: a five-scale U-Net whose T output channels pass through a bounded activation."""

from dataclasses import dataclass
from typing import List, Sequence, Union

import torch
import torch.nn.functional as F
from torch import nn

from medical_dg.config import ActivationKind
from medical_dg.errors import ConfigurationError, ShapeError

_DOWNSAMPLE = 16


@dataclass
class AnatomicalRepresentation:
    """N x T x H x W anatomy tensor tagged with the activation that produced it."""

    tensor: torch.Tensor
    activation_kind: ActivationKind

    @property
    def channels(self) -> int:
        return self.tensor.shape[1]

    def check_invariants(self, atol: float = 1e-5) -> None:
        t = self.tensor.detach()
        kind = ActivationKind(self.activation_kind)
        if not torch.isfinite(t).all():
            raise ValueError("anatomical representation holds non-finite values")
        if kind is ActivationKind.TANH:
            if t.min() < -1.0 or t.max() > 1.0:
                raise ValueError("tanh representation outside [-1, 1]")
            return
        if t.min() < -atol:
            raise ValueError(f"{kind.value} representation has negative entries")
        if not torch.allclose(t.sum(dim=1), torch.ones_like(t[:, 0]), atol=atol):
            raise ValueError(f"{kind.value} representation does not sum to 1 over channels")
        if kind is ActivationKind.GUMBEL_HARD and not torch.all((t - t.round()).abs() <= atol):
            raise ValueError("gumbel_hard representation is not one-hot")


def anatomy_activation(
    logits: torch.Tensor,
    kind: Union[ActivationKind, str],
    temperature: float = 0.5,
    stochastic: bool = True,
) -> torch.Tensor:
    """
    Map N x T x H x W logits to an anatomical representation over the channel axis.

    Gumbel kinds sample noise when stochastic; otherwise they fall back to the
    noiseless relaxation (hard: one-hot argmax, soft: tempered softmax). The hard
    variant always back-propagates through the soft relaxation (straight-through).
    """
    try:
        kind = ActivationKind(kind)
    except ValueError as e:
        raise ConfigurationError(f"Unknown anatomy activation {kind!r}") from e

    if kind is ActivationKind.TANH:
        return torch.tanh(logits)
    if kind is ActivationKind.SOFTMAX:
        return torch.softmax(logits, dim=1)

    if temperature <= 0:
        raise ConfigurationError(f"gumbel temperature must be > 0, got {temperature}")
    hard = kind is ActivationKind.GUMBEL_HARD
    if stochastic:
        return F.gumbel_softmax(logits, tau=temperature, hard=hard, dim=1)

    soft = torch.softmax(logits / temperature, dim=1)
    if not hard:
        return soft
    one_hot = F.one_hot(soft.argmax(dim=1), num_classes=logits.shape[1]).permute(0, 3, 1, 2).to(soft.dtype)
    return one_hot - soft.detach() + soft


class ConvBlock(nn.Sequential):
    """Two 3x3 conv + BN + LeakyReLU layers."""

    def __init__(self, in_channels: int, out_channels: int, slope: float):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.LeakyReLU(slope),
            nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.LeakyReLU(slope),
        )


class UNet(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, channels: Sequence[int], slope: float = 0.2):
        super().__init__()
        channels = list(channels)
        self.encoders = nn.ModuleList()
        prev = in_channels
        for c in channels:
            self.encoders.append(ConvBlock(prev, c, slope))
            prev = c
        self.pool = nn.MaxPool2d(2)

        self.upsamples = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for deep, shallow in zip(reversed(channels[1:]), reversed(channels[:-1])):
            self.upsamples.append(nn.ConvTranspose2d(deep, shallow, 2, stride=2))
            self.decoders.append(ConvBlock(2 * shallow, shallow, slope))
        self.head = nn.Conv2d(channels[0], out_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips: List[torch.Tensor] = []
        for i, encoder in enumerate(self.encoders):
            x = encoder(x if i == 0 else self.pool(x))
            skips.append(x)
        x = skips.pop()
        for upsample, decoder in zip(self.upsamples, self.decoders):
            x = decoder(torch.cat([upsample(x), skips.pop()], dim=1))
        return self.head(x)


class AnatomyEncoder(nn.Module):
    def __init__(
        self,
        in_channels: int,
        anatomy_channels: int,
        unet_channels: Sequence[int],
        activation_kind: ActivationKind = ActivationKind.TANH,
        temperature: float = 0.5,
        slope: float = 0.2,
    ):
        super().__init__()
        self.activation_kind = ActivationKind(activation_kind)
        self.temperature = temperature
        self.unet = UNet(in_channels, anatomy_channels, unet_channels, slope)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4:
            raise ShapeError(f"expected N x C x H x W images, got shape {tuple(images.shape)}")
        h, w = images.shape[-2:]
        if h % _DOWNSAMPLE or w % _DOWNSAMPLE:
            raise ShapeError(f"image size {h}x{w} is not divisible by {_DOWNSAMPLE}")
        logits = self.unet(images)
        return anatomy_activation(logits, self.activation_kind, self.temperature, stochastic=self.training)
