"""
Style augmentation.

The style codes of one mini-batch form a bank; new codes come from a random
linear combination of the bank (weights ~ U[-1, 1], unnormalized) or, for the
Gaussian ablation, straight from the unit Gaussian prior. A new code repaints a
donor anatomy through the decoder.
"""

from dataclasses import dataclass
from typing import Optional

import torch

from medical_dg.errors import ShapeError
from medical_dg.networks.anatomy import AnatomicalRepresentation
from medical_dg.networks.cddsa import CDDSANet
from medical_dg.networks.style import StyleCode, StyleProvenance


@dataclass
class StyleCodeBank:
    codes: torch.Tensor  # N x Z, bank order preserved
    domain_ids: torch.Tensor  # N

    def __len__(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]


def collect_bank(codes, domain_ids: Optional[torch.Tensor] = None) -> StyleCodeBank:
    """Gather a batch's style codes (tensor or StyleCode) into a bank."""
    if isinstance(codes, StyleCode):
        if domain_ids is None:
            domain_ids = codes.domain_ids
        codes = codes.z
    if codes.dim() != 2:
        raise ShapeError(f"style codes must be N x Z, got {tuple(codes.shape)}")
    if codes.shape[0] == 0:
        raise ValueError("cannot build a style bank from zero codes")
    if domain_ids is None:
        domain_ids = torch.full((codes.shape[0],), -1, dtype=torch.long, device=codes.device)
    if domain_ids.shape[0] != codes.shape[0]:
        raise ShapeError(f"{domain_ids.shape[0]} domain labels for {codes.shape[0]} style codes")
    return StyleCodeBank(codes=codes, domain_ids=domain_ids)


def sample_alphas(size: int, count: int = 1, generator: Optional[torch.Generator] = None,
                  device=None, dtype=torch.float32) -> torch.Tensor:
    """count x size mixing weights drawn i.i.d. from U[-1, 1]."""
    return torch.rand((count, size), generator=generator, dtype=dtype).to(device) * 2.0 - 1.0


def augment_linear(
    bank: StyleCodeBank,
    generator: Optional[torch.Generator] = None,
    count: int = 1,
    alphas: Optional[torch.Tensor] = None,
) -> StyleCode:
    """New style code(s) sum_i alpha_i * F_i; alphas may be injected (count x |bank|)."""
    if alphas is None:
        alphas = sample_alphas(len(bank), count, generator, bank.codes.device, bank.codes.dtype)
    alphas = alphas.to(device=bank.codes.device, dtype=bank.codes.dtype)
    if alphas.dim() == 1:
        alphas = alphas[None]
    if alphas.shape[1] != len(bank):
        raise ShapeError(f"{alphas.shape[1]} weights for a bank of {len(bank)} codes")
    return StyleCode(z=alphas @ bank.codes, provenance=StyleProvenance.AUGMENTED_LINEAR)


def augment_gaussian(
    style_dim: int,
    generator: Optional[torch.Generator] = None,
    count: int = 1,
    device=None,
    dtype=torch.float32,
) -> StyleCode:
    """New style code(s) drawn from the unit Gaussian prior."""
    if style_dim < 1:
        raise ValueError(f"style_dim must be >= 1, got {style_dim}")
    z = torch.randn((count, style_dim), generator=generator, dtype=dtype).to(device)
    return StyleCode(z=z, provenance=StyleProvenance.AUGMENTED_GAUSSIAN)


def synthesize_augmented(model: CDDSANet, anatomy: AnatomicalRepresentation, new_style: StyleCode) -> torch.Tensor:
    """Repaint the donor anatomy with a new style; the anatomy tensor is only read."""
    return model.decode(new_style, anatomy)
