import logging
from typing import Optional, Sequence

from medical_dg.data.synthetic import Sample
from medical_dg.errors import DataError
from medical_dg.evaluation.metrics import MetricsReport, aggregate, evaluate_case
from medical_dg.networks.cddsa import CDDSANet
from medical_dg.training.batching import samples_to_batch

logger = logging.getLogger(__name__)


def predict_samples(model: CDDSANet, samples: Sequence[Sample], batch_size: int = 16, device: str = "cpu"):
    """Label maps for each sample, in order, from deterministic (eval-mode) inference."""
    was_training = model.training
    model.eval()
    predictions = []
    try:
        for start in range(0, len(samples), batch_size):
            batch = samples_to_batch(samples[start:start + batch_size])
            predictions.extend(model.predict(batch.images.to(device)).cpu().numpy())
    finally:
        model.train(was_training)
    return predictions


def evaluate_samples(
    model: CDDSANet,
    samples: Sequence[Sample],
    num_classes: Optional[int] = None,
    spacing: Sequence[float] = (1.0, 1.0),
    nested: bool = True,
    batch_size: int = 16,
    device: str = "cpu",
    class_names: Optional[Sequence[str]] = None,
) -> MetricsReport:
    """Segment every sample and score it against its mask."""
    samples = list(samples)
    if not samples:
        raise DataError("no samples to evaluate")
    num_classes = num_classes or model.config.num_classes

    per_case = []
    for sample, pred in zip(samples, predict_samples(model, samples, batch_size, device)):
        per_case.extend(evaluate_case(pred, sample.mask, sample.case_id, sample.domain_id, num_classes, spacing, nested))
    report = aggregate(per_case, class_names)
    logger.debug(f"Evaluated {len(samples)} cases: mean foreground Dice {report.mean_foreground_dice:.2f}")
    return report
