"""Image grids for qualitative panels (original, reconstruction, augmented variants)."""

from typing import Optional, Sequence, Union

import numpy as np
import torch
from PIL import Image

ImageLike = Union[np.ndarray, torch.Tensor]


def to_uint8_rgb(image: ImageLike) -> np.ndarray:
    """H x W x C array or C x H x W tensor in [0, 1] -> H x W x 3 uint8."""
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
        if image.ndim == 3:
            image = image.transpose(1, 2, 0)
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[..., None]
    if image.shape[-1] == 1:
        image = np.repeat(image, 3, axis=-1)
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def make_image_grid(
    panels: Sequence[ImageLike],
    columns: Optional[int] = None,
    padding: int = 2,
    background: int = 255,
) -> Image.Image:
    """Tile equally-sized panels row by row; one row unless `columns` is given."""
    if not panels:
        raise ValueError("make_image_grid needs at least one panel")
    tiles = [to_uint8_rgb(p) for p in panels]
    h, w = tiles[0].shape[:2]
    if any(t.shape[:2] != (h, w) for t in tiles):
        raise ValueError("grid panels must share one size")

    columns = columns or len(tiles)
    rows = -(-len(tiles) // columns)
    grid = Image.new(
        "RGB",
        (columns * w + (columns + 1) * padding, rows * h + (rows + 1) * padding),
        (background,) * 3,
    )
    for i, tile in enumerate(tiles):
        r, c = divmod(i, columns)
        grid.paste(Image.fromarray(tile), (padding + c * (w + padding), padding + r * (h + padding)))
    return grid
