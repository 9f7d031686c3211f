"""
Leave-one-domain-out experiment driver.

Each fold trains on every domain but one and scores the held-out domain's test
split. The intra_domain mode instead trains and tests inside each domain. Folds
are independent and may run in separate processes, each writing only to its
own `fold_<d>/` directory.
"""

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from medical_dg.config import ExperimentConfig, TrainMode
from medical_dg.data.synthetic import MultiDomainDataset
from medical_dg.errors import ConfigurationError, DataError
from medical_dg.evaluation.evaluate import evaluate_samples
from medical_dg.evaluation.metrics import MetricsReport, aggregate
from medical_dg.evaluation.report import INTER_DOMAIN_NOTE, format_table, write_report_csv, write_summary_csv
from medical_dg.training.trainer import CDDSATrainer

logger = logging.getLogger(__name__)

REPORT_NAME = "report.csv"
TABLE_NAME = "report.txt"


@dataclass(frozen=True)
class LODOPlan:
    held_out_domain: int
    train_domains: Tuple[int, ...]
    intra: bool = False

    def __post_init__(self):
        if self.intra:
            if self.train_domains != (self.held_out_domain,):
                raise ConfigurationError(f"an intra-domain plan trains on its own domain only, got {self.train_domains}")
        elif self.held_out_domain in self.train_domains:
            raise ConfigurationError(f"held-out domain {self.held_out_domain} is also a training domain")

    @property
    def name(self) -> str:
        return f"fold_{self.held_out_domain}"


@dataclass
class FoldResult:
    plan: LODOPlan
    checkpoint_path: Path
    report: MetricsReport
    best_epoch: int
    best_val_dice: float
    output_dir: Path


def make_lodo_plans(domain_ids: Sequence[int], holdout: Optional[int] = None, intra: bool = False) -> List[LODOPlan]:
    """One plan per domain (or only `holdout`); together they hold out every domain once."""
    domains = sorted(set(domain_ids))
    if holdout is not None and holdout not in domains:
        raise ConfigurationError(f"holdout domain {holdout} not in {domains}")
    if not intra and len(domains) < 2:
        raise DataError(f"leave-one-domain-out needs at least two domains, got {domains}")

    targets = domains if holdout is None else [holdout]
    if intra:
        return [LODOPlan(d, (d,), intra=True) for d in targets]
    return [LODOPlan(d, tuple(o for o in domains if o != d)) for d in targets]


def run_fold(
    dataset: MultiDomainDataset,
    plan: LODOPlan,
    config: ExperimentConfig,
    output_dir: Path,
    device: str = "cpu",
) -> FoldResult:
    fold_dir = Path(output_dir) / plan.name
    pools = dataset.by_domain("train", plan.train_domains)
    test_samples = dataset.test_samples([plan.held_out_domain])
    if not test_samples:
        raise DataError(f"domain {plan.held_out_domain} has an empty test split")

    trainer = CDDSATrainer(config, fold_dir, device)
    result = trainer.fit(pools, held_out=() if plan.intra else (plan.held_out_domain,))

    report = evaluate_samples(
        result.model,
        test_samples,
        spacing=config.evaluation.spacing,
        nested=config.evaluation.nested_classes,
        batch_size=config.train.eval_batch_size,
        device=device,
        class_names=config.evaluation.class_names,
    )
    write_report_csv(report, fold_dir / REPORT_NAME)
    notes = [INTER_DOMAIN_NOTE] if TrainMode(config.train.mode) is TrainMode.INTER_DOMAIN else []
    (fold_dir / TABLE_NAME).write_text(
        format_table(report, f"{config.train.mode.value} - {plan.name}", notes), encoding="utf-8"
    )
    logger.info(
        f"{plan.name}: trained on {list(plan.train_domains)}, test Dice {report.mean_foreground_dice:.2f} "
        f"on domain {plan.held_out_domain} ({len(test_samples)} cases)"
    )
    return FoldResult(plan, result.checkpoint_path, report, result.best_epoch, result.best_val_dice, fold_dir)


def run_lodo(
    dataset: MultiDomainDataset,
    config: ExperimentConfig,
    output_dir: Path,
    holdout: Optional[int] = None,
    jobs: int = 1,
    device: str = "cpu",
) -> List[FoldResult]:
    """Run every fold (in `jobs` worker processes) and write the pooled summary."""
    intra = TrainMode(config.train.mode) is TrainMode.INTRA_DOMAIN
    plans = make_lodo_plans(dataset.domain_ids(), holdout, intra)
    output_dir = Path(output_dir)
    logger.info(f"Running {len(plans)} fold(s) in {config.train.mode.value} mode with {jobs} job(s)")

    if jobs <= 1 or len(plans) == 1:
        results = [run_fold(dataset, plan, config, output_dir, device) for plan in plans]
    else:
        results, errors = [], []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(run_fold, dataset, plan, config, output_dir, device): plan for plan in plans}
            for future in as_completed(futures):
                try:
                    results.append(future.result())
                except Exception as e:
                    logger.error(f"{futures[future].name} failed: {e}")
                    errors.append(e)
        if errors:
            raise errors[0]
        results.sort(key=lambda r: r.plan.held_out_domain)

    pooled = aggregate([m for r in results for m in r.report.per_case], config.evaluation.class_names)
    write_summary_csv(pooled, output_dir / "summary.csv")
    notes = [INTER_DOMAIN_NOTE] if TrainMode(config.train.mode) is TrainMode.INTER_DOMAIN else []
    (output_dir / TABLE_NAME).write_text(format_table(pooled, f"{config.train.mode.value} - all folds", notes), encoding="utf-8")
    return results
