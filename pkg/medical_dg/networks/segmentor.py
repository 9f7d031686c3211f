import torch
from torch import nn


class Segmentor(nn.Module):
    """S: 3x3 conv + BN + LeakyReLU, then 1x1 conv + softmax over K classes. Sees only f_a."""

    def __init__(self, anatomy_channels: int, num_classes: int, hidden: int = 16, slope: float = 0.2):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(anatomy_channels, hidden, 3, padding=1, bias=False),
            nn.BatchNorm2d(hidden),
            nn.LeakyReLU(slope),
            nn.Conv2d(hidden, num_classes, 1),
        )

    def forward(self, anatomy: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.net(anatomy), dim=1)
