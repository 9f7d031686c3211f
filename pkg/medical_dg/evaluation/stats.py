import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.stats import wilcoxon

logger = logging.getLogger(__name__)

TEST_NAME = "Wilcoxon signed-rank, paired, two-sided"


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    mean_difference: float
    test: str = TEST_NAME

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def paired_wilcoxon(a: Mapping[str, float], b: Mapping[str, float]) -> WilcoxonResult:
    """Compare two methods on the cases they share (per-case Dice keyed by case id)."""
    common = sorted(set(a) & set(b))
    if not common:
        raise ValueError("the two result sets share no cases")
    if len(common) < len(a) or len(common) < len(b):
        logger.warning(f"Comparing on {len(common)} shared cases ({len(a)} vs {len(b)} available)")

    diff = np.array([a[c] - b[c] for c in common], dtype=np.float64)
    if np.all(diff == 0):
        return WilcoxonResult(statistic=0.0, p_value=1.0, n=len(common), mean_difference=0.0)
    result = wilcoxon(diff, alternative="two-sided")
    return WilcoxonResult(
        statistic=float(result.statistic),
        p_value=float(result.pvalue),
        n=len(common),
        mean_difference=float(diff.mean()),
    )
