"""
Segmentation metrics: Dice (percent) and average symmetric surface distance.

Surfaces are the foreground pixels with at least one background 4-neighbour;
pixels outside the image count as background. Distances are Euclidean, scaled
per axis by the pixel spacing.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt, generate_binary_structure

from medical_dg.errors import ShapeError

logger = logging.getLogger(__name__)

_CROSS = generate_binary_structure(2, 1)


def _binary_pair(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def dice_score(pred: np.ndarray, gt: np.ndarray) -> float:
    """100 * 2|P & G| / (|P| + |G|); both empty scores 100."""
    pred, gt = _binary_pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 100.0
    return 100.0 * 2.0 * int(np.logical_and(pred, gt).sum()) / total


def surface(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask).astype(bool)
    return mask & ~binary_erosion(mask, structure=_CROSS, border_value=0)


def surface_distances(pred: np.ndarray, gt: np.ndarray, spacing: Sequence[float] = (1.0, 1.0)) -> np.ndarray:
    """All directed nearest-surface distances, pred -> gt then gt -> pred."""
    pred, gt = _binary_pair(pred, gt)
    s_pred, s_gt = surface(pred), surface(gt)
    to_gt = distance_transform_edt(~s_gt, sampling=spacing)
    to_pred = distance_transform_edt(~s_pred, sampling=spacing)
    return np.concatenate([to_gt[s_pred], to_pred[s_gt]])


def assd(pred: np.ndarray, gt: np.ndarray, spacing: Sequence[float] = (1.0, 1.0)) -> Optional[float]:
    """Mean of all directed surface distances; None when either mask is empty."""
    pred, gt = _binary_pair(pred, gt)
    if not pred.any() or not gt.any():
        return None
    return float(surface_distances(pred, gt, spacing).mean())


@dataclass
class CaseMetrics:
    case_id: str
    domain_id: int
    class_index: int
    dice: float
    assd: Optional[float]


@dataclass
class ClassSummary:
    dice_mean: float
    dice_std: float
    assd_mean: Optional[float]
    assd_std: Optional[float]
    n: int
    n_assd: int


@dataclass
class MetricsReport:
    per_case: List[CaseMetrics]
    per_domain: Dict[int, Dict[int, ClassSummary]]
    overall: Dict[int, ClassSummary]
    assd_undefined: int = 0
    class_names: Dict[int, str] = field(default_factory=dict)

    @property
    def classes(self) -> List[int]:
        return sorted(self.overall)

    @property
    def mean_foreground_dice(self) -> float:
        return float(np.mean([self.overall[c].dice_mean for c in self.classes]))

    def class_name(self, class_index: int) -> str:
        return self.class_names.get(class_index, f"class_{class_index}")

    def dice_by_case(self, class_index: Optional[int] = None) -> Dict[str, float]:
        """Per-case Dice for one class, or averaged over the foreground classes."""
        grouped: Dict[str, List[float]] = {}
        for m in self.per_case:
            if class_index is None or m.class_index == class_index:
                grouped.setdefault(m.case_id, []).append(m.dice)
        return {case: float(np.mean(values)) for case, values in grouped.items()}


def class_mask(labels: np.ndarray, class_index: int, nested: bool = True) -> np.ndarray:
    """Binary mask for one class; nested scores the structure together with everything inside it."""
    labels = np.asarray(labels)
    return labels >= class_index if nested else labels == class_index


def evaluate_case(
    pred: np.ndarray,
    gt: np.ndarray,
    case_id: str,
    domain_id: int,
    num_classes: int,
    spacing: Sequence[float] = (1.0, 1.0),
    nested: bool = True,
) -> List[CaseMetrics]:
    """Dice and ASSD for every foreground class of one label map."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"{case_id}: prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    results = []
    for c in range(1, num_classes):
        p, g = class_mask(pred, c, nested), class_mask(gt, c, nested)
        results.append(CaseMetrics(case_id, int(domain_id), c, dice_score(p, g), assd(p, g, spacing)))
    return results


def _summarize(cases: Sequence[CaseMetrics]) -> ClassSummary:
    dice = np.array([m.dice for m in cases], dtype=np.float64)
    distances = np.array([m.assd for m in cases if m.assd is not None], dtype=np.float64)
    return ClassSummary(
        dice_mean=float(dice.mean()),
        dice_std=float(dice.std()),
        assd_mean=float(distances.mean()) if distances.size else None,
        assd_std=float(distances.std()) if distances.size else None,
        n=len(cases),
        n_assd=int(distances.size),
    )


def aggregate(per_case: Iterable[CaseMetrics], class_names: Optional[Sequence[str]] = None) -> MetricsReport:
    """Per-domain and overall mean +/- population std per class."""
    per_case = list(per_case)
    if not per_case:
        raise ValueError("cannot aggregate zero cases")

    by_domain: Dict[int, Dict[int, List[CaseMetrics]]] = {}
    by_class: Dict[int, List[CaseMetrics]] = {}
    for m in per_case:
        by_domain.setdefault(m.domain_id, {}).setdefault(m.class_index, []).append(m)
        by_class.setdefault(m.class_index, []).append(m)

    undefined = sum(1 for m in per_case if m.assd is None)
    if undefined:
        logger.warning(f"ASSD undefined (empty mask) for {undefined} case/class pairs; excluded from the means")

    names = {i + 1: name for i, name in enumerate(class_names or [])}
    return MetricsReport(
        per_case=per_case,
        per_domain={d: {c: _summarize(ms) for c, ms in sorted(classes.items())} for d, classes in sorted(by_domain.items())},
        overall={c: _summarize(ms) for c, ms in sorted(by_class.items())},
        assd_undefined=undefined,
        class_names=names,
    )
