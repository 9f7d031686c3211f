import json

import numpy as np
import pytest
from PIL import Image

from medical_dg.data.ingestion import MANIFEST_NAME, load_dataset, percentile_normalize, save_dataset
from medical_dg.errors import DataError


def _write_case(split_dir, case_id, size=(16, 16), label=1, mask_size=None):
    split_dir.mkdir(parents=True, exist_ok=True)
    image = np.full(size + (3,), 120, dtype=np.uint8)
    mask = np.zeros(mask_size or size, dtype=np.uint8)
    mask[4:8, 4:8] = label
    Image.fromarray(image).save(split_dir / f"{case_id}_img.png")
    Image.fromarray(mask).save(split_dir / f"{case_id}_mask.png")


def test_load_well_formed_directory(tmp_path):
    for d in range(2):
        for i, split in enumerate(["train", "train", "test"]):
            _write_case(tmp_path / f"domain_{d}" / split, f"d{d}_{i}")
    dataset = load_dataset(tmp_path, num_classes=3)
    assert len(dataset) == 6
    assert dataset.num_domains == 2
    assert len(dataset.test_samples([1])) == 1
    assert dataset.samples[0].image.max() <= 1.0


def test_missing_mask_names_the_image(tmp_path):
    split_dir = tmp_path / "domain_0" / "train"
    _write_case(split_dir, "case_a")
    (split_dir / "case_a_mask.png").unlink()
    with pytest.raises(DataError, match="case_a_img.png"):
        load_dataset(tmp_path)


def test_size_mismatch_rejected(tmp_path):
    _write_case(tmp_path / "domain_0" / "train", "case_a", mask_size=(16, 12))
    with pytest.raises(DataError, match="mismatch"):
        load_dataset(tmp_path)


def test_unknown_label_rejected(tmp_path):
    _write_case(tmp_path / "domain_0" / "train", "case_a", label=7)
    with pytest.raises(DataError, match="label"):
        load_dataset(tmp_path, num_classes=3)


def test_missing_directory_rejected(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nowhere")


def test_percentile_normalization_range():
    rng = np.random.default_rng(0)
    image = rng.normal(100.0, 30.0, size=(32, 32, 1))
    out = percentile_normalize(image)
    assert out.min() >= 0.0 and out.max() <= 1.0
    lo, hi = np.percentile(image, [0.1, 99.9])
    expected = (np.clip(image, lo, hi) - lo) / (hi - lo)
    np.testing.assert_allclose(out, expected, atol=1e-6)


def test_save_then_load_preserves_layout_and_labels(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path)
    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
    assert manifest["num_classes"] == 3 and len(manifest["samples"]) == len(tiny_dataset)

    loaded = load_dataset(tmp_path)
    assert loaded.num_domains == tiny_dataset.num_domains
    originals = {s.case_id: s for s in tiny_dataset.samples}
    for s in loaded.samples:
        assert np.array_equal(s.mask, originals[s.case_id].mask)
        assert s.anatomy_seed == originals[s.case_id].anatomy_seed
        assert np.abs(s.image - originals[s.case_id].image).max() <= 0.5 / 255 + 1e-6


def test_saving_twice_is_byte_identical(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path / "a")
    save_dataset(tiny_dataset, tmp_path / "b")
    for png in (tmp_path / "a").rglob("*.png"):
        assert png.read_bytes() == (tmp_path / "b" / png.relative_to(tmp_path / "a")).read_bytes()
