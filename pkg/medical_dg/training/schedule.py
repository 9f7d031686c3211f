"""
Learning-rate schedule: decay to 95% whenever validation Dice has not improved
for `patience` consecutive epochs, then start counting again.
"""

from dataclasses import dataclass, field
from typing import List, Sequence

import torch
from torch.optim.lr_scheduler import ReduceLROnPlateau


@dataclass
class PlateauSchedule:
    """Wraps ReduceLROnPlateau so the LR can also be stepped from a metric history."""

    optimizer: torch.optim.Optimizer
    factor: float = 0.95
    patience: int = 8
    seen: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        # ReduceLROnPlateau decays once num_bad_epochs > patience, i.e. on the
        # (patience + 1)-th stagnant epoch; our window is `patience` epochs.
        self.scheduler = ReduceLROnPlateau(
            self.optimizer,
            mode="max",
            factor=self.factor,
            patience=self.patience - 1,
            threshold=0.0,
            threshold_mode="abs",
        )

    @property
    def lr(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    @property
    def stagnant_epochs(self) -> int:
        return int(self.scheduler.num_bad_epochs)

    def step(self, val_metric: float) -> float:
        self.seen.append(float(val_metric))
        self.scheduler.step(float(val_metric))
        return self.lr


def make_schedule(optimizer: torch.optim.Optimizer, factor: float = 0.95, patience: int = 8) -> PlateauSchedule:
    return PlateauSchedule(optimizer, factor=factor, patience=patience)


def lr_step(schedule: PlateauSchedule, val_metric_history: Sequence[float]) -> float:
    """Feed the not-yet-seen tail of the validation history and return the current LR."""
    if not val_metric_history:
        raise ValueError("lr_step needs a non-empty validation history")
    for value in list(val_metric_history)[len(schedule.seen):]:
        schedule.step(value)
    return schedule.lr
