import csv
import math

import numpy as np
import pytest
from scipy.stats import wilcoxon

from medical_dg.errors import DataError, ShapeError
from medical_dg.evaluation.evaluate import evaluate_samples
from medical_dg.evaluation.metrics import CaseMetrics, aggregate, assd, class_mask, dice_score, evaluate_case, surface
from medical_dg.evaluation.report import REPORT_COLUMNS, format_table, read_report_csv, write_report_csv
from medical_dg.evaluation.stats import paired_wilcoxon
from medical_dg.evaluation.style_analysis import collect_style_codes, style_separation
from medical_dg.evaluation.visualize import make_image_grid


def _brute_surface(mask):
    h, w = mask.shape
    points = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ni, nj = i + di, j + dj
                if not (0 <= ni < h and 0 <= nj < w) or not mask[ni, nj]:
                    points.append((i, j))
                    break
    return points


def _brute_assd(a, b, spacing=(1.0, 1.0)):
    sa, sb = _brute_surface(a), _brute_surface(b)

    def nearest(p, others):
        return min(math.hypot((p[0] - q[0]) * spacing[0], (p[1] - q[1]) * spacing[1]) for q in others)

    distances = [nearest(p, sb) for p in sa] + [nearest(q, sa) for q in sb]
    return sum(distances) / len(distances)


# Dice

def test_dice_hand_example():
    pred = np.zeros((4, 4), bool)
    gt = np.zeros((4, 4), bool)
    pred[0, :2] = True
    gt[0, 1:2] = True
    assert dice_score(pred, gt) == pytest.approx(100 * 2 / 3, abs=1e-2)


def test_dice_identical_disjoint_and_empty():
    mask = np.zeros((5, 5), bool)
    mask[1:3, 1:3] = True
    assert dice_score(mask, mask) == 100.0
    assert dice_score(mask, ~mask) == 0.0
    empty = np.zeros((5, 5), bool)
    assert dice_score(empty, empty) == 100.0
    assert dice_score(mask, empty) == 0.0


def test_dice_is_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.random((10, 10)) > 0.5, rng.random((10, 10)) > 0.6
        assert dice_score(a, b) == pytest.approx(dice_score(b, a))


def test_dice_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(200):
        h, w = rng.integers(1, 13, size=2)
        a, b = rng.random((h, w)) > rng.uniform(0.0, 1.0), rng.random((h, w)) > rng.uniform(0.0, 1.0)
        overlap = size_a = size_b = 0
        for i in range(h):
            for j in range(w):
                overlap += int(a[i, j] and b[i, j])
                size_a += int(a[i, j])
                size_b += int(b[i, j])
        expected = 100.0 if size_a + size_b == 0 else 200.0 * overlap / (size_a + size_b)
        assert dice_score(a, b) == pytest.approx(expected, abs=1e-9)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        dice_score(np.zeros((3, 3)), np.zeros((3, 4)))


# ASSD

def test_assd_single_pixels():
    a = np.zeros((10, 10), bool)
    b = np.zeros((10, 10), bool)
    a[2, 2] = True
    b[2, 5] = True
    assert assd(a, b) == pytest.approx(3.0)


def test_assd_identical_masks_is_zero():
    mask = np.zeros((8, 8), bool)
    mask[2:6, 1:7] = True
    assert assd(mask, mask) == 0.0


def test_assd_undefined_for_empty_mask():
    mask = np.zeros((8, 8), bool)
    mask[3, 3] = True
    assert assd(mask, np.zeros_like(mask)) is None
    assert assd(np.zeros_like(mask), mask) is None


def test_surface_counts_image_border_as_background():
    full = np.ones((4, 4), bool)
    assert surface(full).sum() == 12


def test_assd_matches_brute_force():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(200):
        h, w = rng.integers(1, 13, size=2)
        a, b = rng.random((h, w)) > rng.uniform(0.2, 0.9), rng.random((h, w)) > rng.uniform(0.2, 0.9)
        if not a.any() or not b.any():
            assert assd(a, b) is None
            continue
        assert assd(a, b) == pytest.approx(_brute_assd(a, b), abs=1e-9)
        checked += 1
    assert checked > 120


def test_assd_scales_with_spacing():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a, b = rng.random((9, 9)) > 0.5, rng.random((9, 9)) > 0.5
        assert assd(a, b, spacing=(2.0, 2.0)) == 2 * assd(a, b)
    assert assd(a, b, spacing=(1.0, 3.0)) == pytest.approx(_brute_assd(a, b, (1.0, 3.0)), abs=1e-9)


# Per-case evaluation and aggregation

def test_nested_class_masks():
    labels = np.array([[0, 1, 2]])
    assert class_mask(labels, 1).tolist() == [[False, True, True]]
    assert class_mask(labels, 1, nested=False).tolist() == [[False, True, False]]


def test_evaluate_case_scores_each_foreground_class():
    gt = np.zeros((6, 6), np.uint8)
    gt[1:5, 1:5] = 1
    gt[2:4, 2:4] = 2
    results = evaluate_case(gt, gt, "c0", 1, num_classes=3)
    assert [m.class_index for m in results] == [1, 2]
    assert all(m.dice == 100.0 and m.assd == 0.0 for m in results)


def _case(case_id, domain, dice, distance=1.0, c=1):
    return CaseMetrics(case_id, domain, c, dice, distance)


def test_aggregate_mean_and_population_std():
    report = aggregate([_case("a", 0, 80.0), _case("b", 0, 90.0)])
    assert report.overall[1].dice_mean == pytest.approx(85.0)
    assert report.overall[1].dice_std == pytest.approx(5.0)


def test_per_domain_counts_partition_the_cases():
    cases = [_case(f"c{i}", i % 3, 70.0 + i) for i in range(10)]
    report = aggregate(cases)
    assert sum(s[1].n for s in report.per_domain.values()) == report.overall[1].n == 10


def test_undefined_distances_are_excluded_and_counted():
    report = aggregate([_case("a", 0, 0.0, None), _case("b", 0, 90.0, 2.0)])
    assert report.assd_undefined == 1
    assert report.overall[1].assd_mean == 2.0 and report.overall[1].n_assd == 1
    assert "ASSD undefined for 1" in format_table(report)


def test_aggregate_rejects_no_cases():
    with pytest.raises(ValueError):
        aggregate([])


# Report files

def test_report_csv_round_trip(tmp_path):
    report = aggregate([_case("a", 0, 80.0), _case("b", 1, 90.0, None)])
    path = write_report_csv(report, tmp_path / "report.csv")
    with path.open() as f:
        assert next(csv.reader(f)) == REPORT_COLUMNS
    rows = read_report_csv(path)
    assert rows[1].assd is None and rows[0].dice == pytest.approx(80.0)


def test_report_csv_with_wrong_columns_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("case,dice\na,1\n")
    with pytest.raises(DataError):
        read_report_csv(path)
    with pytest.raises(DataError):
        read_report_csv(tmp_path / "missing.csv")


def test_evaluate_samples_covers_every_case(tiny_model, tiny_dataset):
    samples = tiny_dataset.test_samples([0, 1])
    report = evaluate_samples(tiny_model, samples, batch_size=3)
    assert len(report.per_case) == 2 * len(samples)
    assert {m.domain_id for m in report.per_case} == {0, 1}
    assert tiny_model.training
    with pytest.raises(DataError):
        evaluate_samples(tiny_model, [])


# Significance test

def test_paired_wilcoxon_matches_scipy():
    rng = np.random.default_rng(0)
    a = {f"c{i}": float(v) for i, v in enumerate(rng.normal(80, 5, 20))}
    b = {k: v - 3.0 + float(rng.normal(0, 1)) for k, v in a.items()}
    result = paired_wilcoxon(a, b)
    expected = wilcoxon([a[k] - b[k] for k in sorted(a)])
    assert result.n == 20
    assert result.p_value == pytest.approx(expected.pvalue)
    assert result.significant and result.mean_difference > 0


def test_paired_wilcoxon_uses_shared_cases():
    result = paired_wilcoxon({"a": 1.0, "b": 2.0, "x": 5.0}, {"a": 1.0, "b": 2.0})
    assert result.n == 2 and result.p_value == 1.0
    with pytest.raises(ValueError):
        paired_wilcoxon({"a": 1.0}, {"b": 1.0})


# Style codes and panels

def test_style_separation_on_clustered_codes():
    codes = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
    separation = style_separation(codes, [0, 0, 1, 1])
    assert separation.intra > 0.9 and separation.inter < 0.2
    assert separation.intra_pairs == 2 and separation.inter_pairs == 4
    with pytest.raises(ValueError):
        style_separation(codes, [0, 0, 0, 0])


def test_collect_style_codes(tiny_model, tiny_dataset):
    codes, domains = collect_style_codes(tiny_model, tiny_dataset.train_samples(), batch_size=5)
    assert codes.shape == (16, tiny_model.config.style_dim)
    assert sorted(set(domains.tolist())) == [0, 1, 2, 3]


def test_image_grid_layout():
    panels = [np.full((8, 10, 3), i / 5, np.float32) for i in range(6)]
    grid = make_image_grid(panels, padding=2)
    assert grid.size == (6 * 10 + 7 * 2, 8 + 2 * 2)
    grid = make_image_grid(panels, columns=3, padding=0)
    assert grid.size == (30, 16)
    with pytest.raises(ValueError):
        make_image_grid([np.zeros((4, 4)), np.zeros((5, 4))])
