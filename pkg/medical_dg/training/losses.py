"""
Training objectives.

Probabilities are N x K x H x W, labels N x H x W (long). Per-sample terms are
averaged over the batch unless `reduction="none"` is asked for.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import torch
import torch.nn.functional as F

from medical_dg.config import LossWeights
from medical_dg.errors import LossError, ShapeError, TrainingError
from medical_dg.networks.anatomy import AnatomicalRepresentation
from medical_dg.networks.style import StyleDistribution

logger = logging.getLogger(__name__)

DICE_SMOOTH = 1e-5
COSINE_EPS = 1e-12
_LOG_EPS = 1e-12


def _check_labels(p: torch.Tensor, y: torch.Tensor) -> None:
    if p.dim() != 4 or y.dim() != 3:
        raise ShapeError(f"expected N x K x H x W probabilities and N x H x W labels, got {tuple(p.shape)}, {tuple(y.shape)}")
    if p.shape[0] != y.shape[0] or p.shape[2:] != y.shape[1:]:
        raise ShapeError(f"probabilities {tuple(p.shape)} and labels {tuple(y.shape)} disagree")
    if y.numel() and (y.min() < 0 or y.max() >= p.shape[1]):
        raise LossError(f"labels must lie in 0..{p.shape[1] - 1}, got range [{int(y.min())}, {int(y.max())}]")


def _reduce(per_sample: torch.Tensor, reduction: str) -> torch.Tensor:
    return per_sample if reduction == "none" else per_sample.mean()


def dice_loss(p: torch.Tensor, y: torch.Tensor, smooth: float = DICE_SMOOTH, reduction: str = "mean") -> torch.Tensor:
    """Soft Dice loss averaged over the foreground classes (class 0 is background)."""
    _check_labels(p, y)
    one_hot = F.one_hot(y.long(), p.shape[1]).permute(0, 3, 1, 2).to(p.dtype)
    p_fg, y_fg = p[:, 1:], one_hot[:, 1:]
    intersection = (p_fg * y_fg).sum(dim=(2, 3))
    denominator = p_fg.sum(dim=(2, 3)) + y_fg.sum(dim=(2, 3))
    per_class = 1.0 - (2.0 * intersection + smooth) / (denominator + smooth)
    return _reduce(per_class.mean(dim=1), reduction)


def ce_loss(p: torch.Tensor, y: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Pixel-mean cross entropy -log p[y]."""
    _check_labels(p, y)
    nll = F.nll_loss(torch.log(p.clamp_min(_LOG_EPS)), y.long(), reduction="none")
    return _reduce(nll.mean(dim=(1, 2)), reduction)


def seg_loss(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Hybrid loss: 0.5 * mean over samples of (Dice + CE)."""
    if p.shape[0] == 0:
        raise LossError("segmentation loss over an empty batch")
    return 0.5 * (dice_loss(p, y, reduction="none") + ce_loss(p, y, reduction="none")).mean()


def kl_loss(dist: StyleDistribution) -> torch.Tensor:
    """Closed-form KL(N(u, v) || N(0, I)) summed over Z, averaged over the batch."""
    u, v = dist.mean, dist.variance
    if (v <= 0).any():
        raise LossError("KL divergence needs strictly positive variance")
    return (0.5 * (u.pow(2) + v - torch.log(v) - 1.0)).sum(dim=-1).mean()


def rec_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute reconstruction error."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"reconstruction {tuple(x_hat.shape)} does not match input {tuple(x.shape)}")
    return (x - x_hat).abs().mean()


def saac_loss(f_a, f_a_aug) -> torch.Tensor:
    """Mean absolute difference between the donor anatomy and the re-encoded augmented anatomy."""
    a = f_a.tensor if isinstance(f_a, AnatomicalRepresentation) else f_a
    b = f_a_aug.tensor if isinstance(f_a_aug, AnatomicalRepresentation) else f_a_aug
    if a.shape != b.shape:
        raise ShapeError(f"anatomy shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


@dataclass
class ContrastiveBatch:
    """
    Anchors with their same-domain positives and other-domain negatives.

    anchors/positives: N x Z, negatives: N x M x Z with M = b * (D - 1).
    The index tensors point back into the batch the codes came from.
    """

    anchors: torch.Tensor
    positives: torch.Tensor
    negatives: torch.Tensor
    anchor_domains: torch.Tensor
    tau: float = 0.1
    anchor_index: Optional[torch.Tensor] = None
    positive_index: Optional[torch.Tensor] = None
    negative_index: Optional[torch.Tensor] = None

    @property
    def negatives_per_anchor(self) -> int:
        return self.negatives.shape[1]


def build_contrastive_pairs(
    codes: torch.Tensor,
    domain_ids: torch.Tensor,
    b: int,
    generator: Optional[torch.Generator] = None,
    tau: float = 0.1,
    derangement: bool = False,
) -> ContrastiveBatch:
    """
    Pair every style code with a same-domain partner and the other domains' codes.

    Per domain the codes form a list Q; the positives come from a uniform random
    permutation of Q (fixed points allowed unless `derangement`). Each anchor's
    negatives are all b * (D - 1) codes of the other domains.
    """
    domains = torch.unique(domain_ids, sorted=True)
    if len(domains) < 2:
        raise LossError("contrastive pairing needs at least two domains")

    members = {}
    for d in domains.tolist():
        idx = torch.nonzero(domain_ids == d, as_tuple=False).flatten()
        if len(idx) != b:
            raise LossError(f"domain {d} contributes {len(idx)} codes, expected exactly b={b}")
        members[d] = idx

    anchor_index, positive_index, negative_index = [], [], []
    for d, idx in members.items():
        perm = torch.randperm(b, generator=generator)
        if derangement and b > 1:
            while (perm == torch.arange(b)).any():
                perm = torch.randperm(b, generator=generator)
        others = torch.cat([members[o] for o in members if o != d])
        anchor_index.append(idx)
        positive_index.append(idx[perm.to(idx.device)])
        negative_index.append(others.expand(b, -1))

    anchor_index = torch.cat(anchor_index)
    positive_index = torch.cat(positive_index)
    negative_index = torch.cat(negative_index)
    return ContrastiveBatch(
        anchors=codes[anchor_index],
        positives=codes[positive_index],
        negatives=codes[negative_index],
        anchor_domains=domain_ids[anchor_index],
        tau=tau,
        anchor_index=anchor_index,
        positive_index=positive_index,
        negative_index=negative_index,
    )


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last axis with a small guard on the norms."""
    return (a * b).sum(dim=-1) / ((a.norm(dim=-1) + COSINE_EPS) * (b.norm(dim=-1) + COSINE_EPS))


def dsct_loss(cb: ContrastiveBatch) -> torch.Tensor:
    """Domain style contrastive (InfoNCE) loss averaged over anchors."""
    for name, t in (("anchor", cb.anchors), ("positive", cb.positives), ("negative", cb.negatives)):
        if (t.norm(dim=-1) == 0).any():
            raise LossError(f"zero-norm {name} style code: cosine similarity is undefined")
    positive = cosine_similarity(cb.anchors, cb.positives)[:, None]
    negative = cosine_similarity(cb.anchors[:, None, :], cb.negatives)
    logits = torch.cat([positive, negative], dim=1) / cb.tau
    target = torch.zeros(logits.shape[0], dtype=torch.long, device=logits.device)
    return F.cross_entropy(logits, target)


@dataclass
class LossTerms:
    seg: torch.Tensor
    kl: torch.Tensor = field(default_factory=lambda: torch.tensor(0.0))
    rec: torch.Tensor = field(default_factory=lambda: torch.tensor(0.0))
    dsct: torch.Tensor = field(default_factory=lambda: torch.tensor(0.0))
    saac: torch.Tensor = field(default_factory=lambda: torch.tensor(0.0))

    def as_dict(self) -> Dict[str, float]:
        return {name: float(getattr(self, name).detach()) for name in ("seg", "kl", "rec", "dsct", "saac")}


def total_loss(terms: LossTerms, weights: LossWeights) -> torch.Tensor:
    """L = seg + l1*kl + l2*rec + l3*dsct + l4*saac; a non-finite term aborts naming the term."""
    for name in ("seg", "kl", "rec", "dsct", "saac"):
        value = getattr(terms, name)
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise TrainingError(f"non-finite loss term '{name}': {float(torch.as_tensor(value).detach())}")
    return (
        terms.seg
        + weights.lambda1 * terms.kl
        + weights.lambda2 * terms.rec
        + weights.lambda3 * terms.dsct
        + weights.lambda4 * terms.saac
    )


def expected_negatives(b: int, num_domains: int) -> int:
    return b * (num_domains - 1)
