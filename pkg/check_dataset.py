"""
Quick script to check what an on-disk dataset actually contains
"""

import sys
from collections import Counter
from pathlib import Path

import numpy as np

from medical_dg.config import Config
from medical_dg.data.ingestion import load_dataset
from medical_dg.errors import DataError


def check_dataset(path: Path):
    try:
        dataset = load_dataset(path)
    except DataError as e:
        print(f"❌ {e}")
        sys.exit(3)

    print("=" * 80)
    print(f"DATASET CONTENTS: {path}")
    print("=" * 80)
    print(f"\n📊 Domains: {dataset.num_domains}   Classes: {dataset.num_classes}   "
          f"Image size: {dataset.image_size}   Channels: {dataset.image_channels}")

    counts = Counter((s.domain_id, s.split) for s in dataset.samples)
    for d in dataset.domain_ids():
        print(f"   - domain {d}: {counts[(d, 'train')]} train / {counts[(d, 'test')]} test")

    print("\n" + "=" * 80)
    print("LABEL FREQUENCIES (fraction of pixels)")
    print("=" * 80)
    for d in dataset.domain_ids():
        masks = [s.mask for s in dataset.split("train", [d])]
        if not masks:
            continue
        freq = np.bincount(np.concatenate([m.ravel() for m in masks]), minlength=dataset.num_classes)
        freq = freq / freq.sum()
        print(f"   - domain {d}: " + "  ".join(f"{c}={f:.3f}" for c, f in enumerate(freq)))

    print("\n" + "=" * 80)
    print("INTENSITY STATISTICS PER DOMAIN (mean ± std per channel)")
    print("=" * 80)
    for d in dataset.domain_ids():
        images = [s.image for s in dataset.split("train", [d])]
        if not images:
            continue
        stacked = np.stack(images)
        means, stds = stacked.mean(axis=(0, 1, 2)), stacked.std(axis=(0, 1, 2))
        print(f"   - domain {d}: " + "  ".join(f"{m:.3f}±{s:.3f}" for m, s in zip(means, stds)))

    print("\n" + "=" * 80)
    print("✅ DATASET CHECK COMPLETE")
    print("=" * 80)


if __name__ == "__main__":
    check_dataset(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(Config.DATA_DIR))
