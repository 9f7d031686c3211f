"""
Dataset ingestion and export for the on-disk layout:

    <root>/dataset.json
    <root>/domain_<id>/{train,test}/<case_id>_img.png
    <root>/domain_<id>/{train,test}/<case_id>_mask.png   (8-bit label indices)
"""

import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from PIL import Image

from medical_dg.data.synthetic import GeneratorConfig, MultiDomainDataset, Sample
from medical_dg.errors import DataError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "dataset.json"
MANIFEST_VERSION = 1
_DOMAIN_DIR = re.compile(r"^domain_(\d+)$")
_IMAGE_SUFFIX = "_img.png"
_MASK_SUFFIX = "_mask.png"


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def save_dataset(dataset: MultiDomainDataset, root: Path, config: Optional[GeneratorConfig] = None) -> Path:
    """Write every sample as PNG pairs plus a dataset.json describing splits and seeds."""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"Cannot create dataset directory {root}: {e}") from e

    records: List[Dict[str, Any]] = []
    for sample in dataset.samples:
        split_dir = root / f"domain_{sample.domain_id}" / sample.split
        split_dir.mkdir(parents=True, exist_ok=True)

        pixels = _to_uint8(sample.image)
        Image.fromarray(pixels[..., 0] if pixels.shape[-1] == 1 else pixels).save(
            split_dir / f"{sample.case_id}{_IMAGE_SUFFIX}"
        )
        Image.fromarray(sample.mask.astype(np.uint8)).save(split_dir / f"{sample.case_id}{_MASK_SUFFIX}")
        records.append({
            "case_id": sample.case_id,
            "domain_id": sample.domain_id,
            "split": sample.split,
            "anatomy_seed": sample.anatomy_seed,
        })

    manifest = {
        "format_version": MANIFEST_VERSION,
        "num_domains": dataset.num_domains,
        "num_classes": dataset.num_classes,
        "generator": config.model_dump(mode="json") if config is not None else None,
        "samples": records,
    }
    manifest_path = root / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info(f"Wrote {len(records)} samples to {root}")
    return manifest_path


def percentile_normalize(image: np.ndarray, low: float = 0.1, high: float = 99.9) -> np.ndarray:
    """Clip to the [low, high] percentiles of the whole image and rescale to [0, 1]."""
    lo, hi = np.percentile(image, [low, high])
    if hi <= lo:
        return np.zeros_like(image, dtype=np.float32)
    return ((np.clip(image, lo, hi) - lo) / (hi - lo)).astype(np.float32)


def read_image(path: Path, percentile_norm: bool = False) -> np.ndarray:
    """Read a gray or color image as H x W x C float32 in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Image not found: {path}")
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            pixels = np.asarray(img, dtype=np.float32)
    except OSError as e:
        raise DataError(f"Cannot read image {path}: {e}") from e
    if pixels.ndim == 2:
        pixels = pixels[..., None]
    return percentile_normalize(pixels) if percentile_norm else pixels / 255.0


def _read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("L", "P", "I", "I;16"):
            raise DataError(f"Mask {path} must be a single-channel label image, got mode {img.mode}")
        return np.asarray(img).astype(np.int64)


def load_dataset(
    path: Path,
    percentile_norm: bool = False,
    num_classes: Optional[int] = None,
) -> MultiDomainDataset:
    """
    Parse a dataset directory into a MultiDomainDataset.

    Intensities are rescaled to [0, 1]; with percentile_norm they are first
    clipped to the 0.1/99.9 percentiles of each image.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"Dataset directory not found: {root}")

    manifest: Dict[str, Any] = {}
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"Corrupt {manifest_path}: {e}") from e
    seeds = {r["case_id"]: r.get("anatomy_seed") for r in manifest.get("samples", [])}
    if num_classes is None:
        num_classes = int(manifest.get("num_classes", 3))

    domain_dirs = sorted(
        (int(m.group(1)), p) for p in root.iterdir() if p.is_dir() and (m := _DOMAIN_DIR.match(p.name))
    )
    if not domain_dirs:
        raise DataError(f"No domain_<id> directories under {root}")

    samples: List[Sample] = []
    for domain_id, domain_dir in domain_dirs:
        for split in ("train", "test"):
            split_dir = domain_dir / split
            if not split_dir.is_dir():
                continue
            for image_path in sorted(split_dir.glob(f"*{_IMAGE_SUFFIX}")):
                case_id = image_path.name[: -len(_IMAGE_SUFFIX)]
                mask_path = split_dir / f"{case_id}{_MASK_SUFFIX}"
                if not mask_path.exists():
                    raise DataError(f"Missing mask for image {image_path}")

                image = read_image(image_path, percentile_norm)
                mask = _read_mask(mask_path)
                if image.shape[:2] != mask.shape:
                    raise DataError(
                        f"Image/mask size mismatch for {image_path}: {image.shape[:2]} vs {mask.shape}"
                    )
                bad = np.setdiff1d(np.unique(mask), np.arange(num_classes))
                if bad.size:
                    raise DataError(f"Unknown label value(s) {bad.tolist()} in {mask_path}")

                samples.append(Sample(
                    image=image.astype(np.float32),
                    mask=mask.astype(np.uint8),
                    domain_id=domain_id,
                    case_id=case_id,
                    split=split,
                    anatomy_seed=seeds.get(case_id),
                ))

    ids = [d for d, _ in domain_dirs]
    num_domains = int(manifest.get("num_domains", max(ids) + 1))
    dataset = MultiDomainDataset(samples=tuple(samples), num_domains=num_domains, num_classes=num_classes)
    dataset.validate()
    logger.info(f"Loaded {len(samples)} samples from {root} ({num_domains} domains, {num_classes} classes)")
    return dataset
