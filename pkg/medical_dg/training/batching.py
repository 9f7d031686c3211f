"""Per-domain mini-batch assembly and the held-in validation split."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from medical_dg.config import AugmentationConfig
from medical_dg.data.synthetic import Sample
from medical_dg.data.transforms import augment_pair
from medical_dg.errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    images: torch.Tensor  # N x C x H x W
    masks: torch.Tensor  # N x H x W, long
    domain_ids: torch.Tensor  # N, long
    case_ids: List[str]

    def __len__(self) -> int:
        return self.images.shape[0]

    def to(self, device) -> "Batch":
        return Batch(self.images.to(device), self.masks.to(device), self.domain_ids.to(device), self.case_ids)


def samples_to_batch(
    samples: Sequence[Sample],
    augmentation: Optional[AugmentationConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> Batch:
    """Stack samples into tensors, optionally through the geometric augmentations."""
    if not samples:
        raise DataError("cannot build a batch from zero samples")
    images, masks = [], []
    for s in samples:
        image, mask = s.image, s.mask
        if augmentation is not None:
            image, mask = augment_pair(image, mask, augmentation, rng if rng is not None else np.random.default_rng())
        images.append(np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32))
        masks.append(np.asarray(mask, dtype=np.int64))
    return Batch(
        images=torch.from_numpy(np.stack(images)),
        masks=torch.from_numpy(np.stack(masks)),
        domain_ids=torch.tensor([s.domain_id for s in samples], dtype=torch.long),
        case_ids=[s.case_id for s in samples],
    )


def make_minibatch(
    pools: Mapping[int, Sequence[Sample]],
    b: int,
    train_domains: Sequence[int],
    rng: np.random.Generator,
    augmentation: Optional[AugmentationConfig] = None,
    pooled: bool = False,
) -> Batch:
    """
    Fetch exactly b samples from each training domain.

    A domain with fewer than b samples is drawn with replacement. With `pooled`
    the b * |train_domains| samples are drawn from the union of the domains
    instead (the single-dataset baseline), so per-domain counts vary.
    """
    if b < 1:
        raise ValueError(f"b must be >= 1, got {b}")
    for d in train_domains:
        if not pools.get(d):
            raise DataError(f"training domain {d} has no samples")

    chosen: List[Sample] = []
    if pooled:
        union = [s for d in train_domains for s in pools[d]]
        n = b * len(train_domains)
        idx = rng.choice(len(union), size=n, replace=n > len(union))
        chosen = [union[i] for i in idx]
    else:
        for d in train_domains:
            pool = pools[d]
            idx = rng.choice(len(pool), size=b, replace=b > len(pool))
            chosen.extend(pool[i] for i in idx)
    return samples_to_batch(chosen, augmentation, rng)


def steps_per_epoch(pools: Mapping[int, Sequence[Sample]], b: int, train_domains: Sequence[int]) -> int:
    """ceil(largest training domain / b)."""
    largest = max(len(pools[d]) for d in train_domains)
    return max(1, math.ceil(largest / b))


def split_validation(
    pools: Mapping[int, Sequence[Sample]],
    fraction: float,
    rng: np.random.Generator,
) -> Tuple[Dict[int, List[Sample]], List[Sample]]:
    """
    Hold in `fraction` of every training domain for validation.

    A domain with two or more samples keeps at least one for validation and at
    least one for training; a single-sample domain stays entirely in training.
    """
    train: Dict[int, List[Sample]] = {}
    validation: List[Sample] = []
    for d, pool in pools.items():
        pool = list(pool)
        n_val = 0
        if fraction > 0 and len(pool) >= 2:
            n_val = min(max(1, int(round(fraction * len(pool)))), len(pool) - 1)
        order = rng.permutation(len(pool))
        validation.extend(pool[i] for i in order[:n_val])
        train[d] = [pool[i] for i in order[n_val:]]
    logger.debug(f"Validation split: {len(validation)} held in, {sum(len(p) for p in train.values())} for training")
    return train, validation
