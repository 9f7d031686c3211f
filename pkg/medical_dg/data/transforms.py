"""Basic geometric augmentations for training pairs (flip, 90-degree rotation, crop)."""

from typing import Tuple

import numpy as np

from medical_dg.config import AugmentationConfig


def augment_pair(
    image: np.ndarray,
    mask: np.ndarray,
    config: AugmentationConfig,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Apply the same random flip/rotation/crop to an H x W x C image and its H x W mask."""
    if config.flip:
        if rng.uniform() < 0.5:
            image, mask = image[:, ::-1], mask[:, ::-1]
        if rng.uniform() < 0.5:
            image, mask = image[::-1], mask[::-1]

    if config.rotate90:
        k = int(rng.integers(0, 4))
        if k and image.shape[0] == image.shape[1]:
            image, mask = np.rot90(image, k, axes=(0, 1)), np.rot90(mask, k, axes=(0, 1))

    if config.crop_size is not None:
        h, w = mask.shape
        size = config.crop_size
        if size < h or size < w:
            top = int(rng.integers(0, max(h - size, 0) + 1))
            left = int(rng.integers(0, max(w - size, 0) + 1))
            image = image[top:top + size, left:left + size]
            mask = mask[top:top + size, left:left + size]

    return np.ascontiguousarray(image), np.ascontiguousarray(mask)
