"""
The four networks wired together: E_ana, E_sty, D_rec and S.

Tensors are N x C x H x W throughout. The typed wrappers (AnatomicalRepresentation,
StyleDistribution, StyleCode) carry autograd-tracked tensors, so the same calls
serve training and inference.
"""

import logging
from typing import Optional, Tuple, Union

import torch
from torch import nn

from medical_dg.config import ModelConfig
from medical_dg.networks.anatomy import AnatomicalRepresentation, AnatomyEncoder
from medical_dg.networks.decoder import ReconstructionDecoder
from medical_dg.networks.segmentor import Segmentor
from medical_dg.networks.style import StyleCode, StyleDistribution, StyleEncoder, sample_style

logger = logging.getLogger(__name__)

AnatomyLike = Union[AnatomicalRepresentation, torch.Tensor]
StyleLike = Union[StyleCode, torch.Tensor]


class CDDSANet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.anatomy_encoder = AnatomyEncoder(
            in_channels=config.image_channels,
            anatomy_channels=config.anatomy_channels,
            unet_channels=config.unet_channels,
            activation_kind=config.activation_kind,
            temperature=config.gumbel_temperature,
            slope=config.leaky_slope,
        )
        self.style_encoder = StyleEncoder(
            in_channels=config.image_channels,
            style_dim=config.style_dim,
            channels=config.style_channels,
            slope=config.leaky_slope,
        )
        self.decoder = ReconstructionDecoder(
            anatomy_channels=config.anatomy_channels,
            out_channels=config.image_channels,
            style_dim=config.style_dim,
            block_channels=config.decoder_channels,
            srm_hidden=[config.srm_hidden_width(c) for c in config.decoder_channels],
            slope=config.leaky_slope,
            eps=config.adain_eps,
        )
        self.segmentor = Segmentor(
            anatomy_channels=config.anatomy_channels,
            num_classes=config.num_classes,
            hidden=config.segmentor_channels,
            slope=config.leaky_slope,
        )

    def encode_anatomy(self, images: torch.Tensor) -> AnatomicalRepresentation:
        return AnatomicalRepresentation(self.anatomy_encoder(images), self.config.activation_kind)

    def encode_style(self, images: torch.Tensor) -> StyleDistribution:
        mean, variance = self.style_encoder(images)
        return StyleDistribution(mean=mean, variance=variance)

    def sample_style(
        self,
        dist: StyleDistribution,
        mode: str = "reparameterized",
        generator: Optional[torch.Generator] = None,
        noise: Optional[torch.Tensor] = None,
    ) -> StyleCode:
        return sample_style(dist, mode, generator, noise)

    def srm_params(self, style: StyleLike, block_index: int) -> Tuple[torch.Tensor, torch.Tensor]:
        z = style.z if isinstance(style, StyleCode) else style
        return self.decoder.srm_params(z, block_index)

    def decode(self, style: StyleLike, anatomy: AnatomyLike) -> torch.Tensor:
        """Repaint an anatomy with a style; a single style code is broadcast over the batch."""
        z = style.z if isinstance(style, StyleCode) else style
        f_a = anatomy.tensor if isinstance(anatomy, AnatomicalRepresentation) else anatomy
        if z.dim() == 1:
            z = z[None]
        if z.shape[0] == 1 and f_a.shape[0] > 1:
            z = z.expand(f_a.shape[0], -1)
        return self.decoder(f_a, z)

    def segment(self, anatomy: AnatomyLike) -> torch.Tensor:
        f_a = anatomy.tensor if isinstance(anatomy, AnatomicalRepresentation) else anatomy
        return self.segmentor(f_a)

    @torch.no_grad()
    def predict(self, images: torch.Tensor) -> torch.Tensor:
        """Label maps (N x H x W) from the anatomy path alone."""
        return self.segment(self.encode_anatomy(images)).argmax(dim=1)

    @torch.no_grad()
    def reconstruct(self, images: torch.Tensor) -> torch.Tensor:
        """Reconstruction with the mean style code."""
        style = self.sample_style(self.encode_style(images), mode="mean")
        return self.decode(style, self.encode_anatomy(images))
