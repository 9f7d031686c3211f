"""Intra- vs inter-domain similarity of style codes (how well styles cluster by domain)."""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import torch

from medical_dg.data.synthetic import Sample
from medical_dg.networks.cddsa import CDDSANet
from medical_dg.training.batching import samples_to_batch

logger = logging.getLogger(__name__)


@dataclass
class StyleSeparation:
    intra: float
    inter: float
    intra_pairs: int
    inter_pairs: int

    @property
    def gap(self) -> float:
        return self.intra - self.inter


def cosine_matrix(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    unit = codes / (np.linalg.norm(codes, axis=1, keepdims=True) + 1e-12)
    return unit @ unit.T


def style_separation(codes, domain_ids) -> StyleSeparation:
    """Mean cosine similarity over same-domain pairs and over cross-domain pairs (i != j)."""
    if isinstance(codes, torch.Tensor):
        codes = codes.detach().cpu().numpy()
    if isinstance(domain_ids, torch.Tensor):
        domain_ids = domain_ids.detach().cpu().numpy()
    domain_ids = np.asarray(domain_ids)
    if len(domain_ids) != len(codes):
        raise ValueError(f"{len(domain_ids)} domain labels for {len(codes)} style codes")

    sim = cosine_matrix(codes)
    same = domain_ids[:, None] == domain_ids[None, :]
    off_diagonal = ~np.eye(len(codes), dtype=bool)
    intra_mask, inter_mask = same & off_diagonal, ~same
    if not intra_mask.any() or not inter_mask.any():
        raise ValueError("style separation needs two domains and a domain with at least two codes")
    return StyleSeparation(
        intra=float(sim[intra_mask].mean()),
        inter=float(sim[inter_mask].mean()),
        intra_pairs=int(intra_mask.sum()) // 2,
        inter_pairs=int(inter_mask.sum()) // 2,
    )


@torch.no_grad()
def collect_style_codes(
    model: CDDSANet,
    samples: Sequence[Sample],
    batch_size: int = 16,
    device: str = "cpu",
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean style codes (eval mode) and domain labels for a list of samples."""
    was_training = model.training
    model.eval()
    codes, domains = [], []
    try:
        for start in range(0, len(samples), batch_size):
            batch = samples_to_batch(samples[start:start + batch_size])
            codes.append(model.encode_style(batch.images.to(device)).mean.cpu().numpy())
            domains.append(batch.domain_ids.numpy())
    finally:
        model.train(was_training)
    return np.concatenate(codes), np.concatenate(domains)
