"""Reconstruction decoder D_rec: four conv blocks, the first three re-styled by AdaIN with SRM parameters."""

from typing import List, Sequence, Tuple

import torch
from torch import nn

from medical_dg.errors import ShapeError


def adain(feature: torch.Tensor, scale: torch.Tensor, bias: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """
    Adaptive instance normalization of an N x C x H x W feature map.

    Each channel is whitened with its own spatial mean and population std, then
    scaled by `scale` and shifted by `bias` (both N x C).
    """
    if feature.dim() != 4:
        raise ShapeError(f"expected N x C x H x W features, got {tuple(feature.shape)}")
    if scale.shape != feature.shape[:2] or bias.shape != feature.shape[:2]:
        raise ShapeError(
            f"scale {tuple(scale.shape)} / bias {tuple(bias.shape)} do not match features {tuple(feature.shape[:2])}"
        )
    mean = feature.mean(dim=(2, 3), keepdim=True)
    std = feature.var(dim=(2, 3), unbiased=False, keepdim=True).sqrt()
    normalized = (feature - mean) / (std + eps)
    return scale[:, :, None, None] * normalized + bias[:, :, None, None]


class StyleReconstructionModule(nn.Module):
    """Two FC layers with a ReLU mapping a style code to per-channel AdaIN scale and bias."""

    def __init__(self, style_dim: int, channels: int, hidden: int):
        super().__init__()
        self.channels = channels
        self.net = nn.Sequential(
            nn.Linear(style_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 2 * channels),
        )

    def forward(self, z: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        scale, bias = self.net(z).chunk(2, dim=1)
        return scale, bias


class ReconstructionDecoder(nn.Module):
    def __init__(
        self,
        anatomy_channels: int,
        out_channels: int,
        style_dim: int,
        block_channels: Sequence[int],
        srm_hidden: Sequence[int],
        slope: float = 0.2,
        eps: float = 1e-8,
    ):
        super().__init__()
        self.eps = eps
        self.blocks = nn.ModuleList()
        self.srms = nn.ModuleList()
        prev = anatomy_channels
        for c, hidden in zip(block_channels, srm_hidden):
            self.blocks.append(nn.Sequential(nn.Conv2d(prev, c, 3, padding=1), nn.LeakyReLU(slope)))
            self.srms.append(StyleReconstructionModule(style_dim, c, hidden))
            prev = c
        self.output = nn.Sequential(nn.Conv2d(prev, out_channels, 3, padding=1), nn.Sigmoid())

    @property
    def block_channels(self) -> List[int]:
        return [srm.channels for srm in self.srms]

    def srm_params(self, z: torch.Tensor, block_index: int) -> Tuple[torch.Tensor, torch.Tensor]:
        if not 0 <= block_index < len(self.srms):
            raise IndexError(f"block_index must be in 0..{len(self.srms) - 1}, got {block_index}")
        return self.srms[block_index](z)

    def forward(self, anatomy: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if z.shape[0] != anatomy.shape[0]:
            raise ShapeError(f"{z.shape[0]} style codes for {anatomy.shape[0]} anatomies")
        x = anatomy
        for block, srm in zip(self.blocks, self.srms):
            scale, bias = srm(z)
            x = adain(block(x), scale, bias, self.eps)
        return self.output(x)
