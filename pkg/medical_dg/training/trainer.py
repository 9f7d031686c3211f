"""
The training step and the epoch loop.

One step:

    f_a = E_ana(x), (u, v) = E_sty(x), z = u + sqrt(v) * eps
    x_hat = D_rec(z, f_a), p = S(f_a)
    seg, kl, rec                                   (every disentangling mode)
    dsct over the batch's style codes              (plus_dsct, cddsa, cddsa_gaussian)
    saac between f_a and E_ana(D_rec(z_new, f_a))  (plus_saac, cddsa, cddsa_gaussian)

inter_domain and intra_domain train E_ana + S on the segmentation loss alone.
Random draws inside a step come from one torch.Generator in a fixed order
(eps, then contrastive permutations, then mixing weights), so two modes fed the
same generator state see the same eps.
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import torch

from medical_dg.config import ExperimentConfig, TrainConfig, TrainMode
from medical_dg.data.synthetic import Sample
from medical_dg.errors import TrainingError
from medical_dg.evaluation.evaluate import evaluate_samples
from medical_dg.evaluation.visualize import make_image_grid
from medical_dg.networks.cddsa import CDDSANet
from medical_dg.networks.checkpoint import save_checkpoint
from medical_dg.training.batching import Batch, make_minibatch, samples_to_batch, split_validation, steps_per_epoch
from medical_dg.training.losses import (
    LossTerms,
    build_contrastive_pairs,
    dsct_loss,
    expected_negatives,
    kl_loss,
    rec_loss,
    saac_loss,
    seg_loss,
    total_loss,
)
from medical_dg.training.schedule import make_schedule
from medical_dg.training.style_bank import augment_gaussian, augment_linear, collect_bank, synthesize_augmented

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.pt"
LOG_NAME = "log.jsonl"
SAMPLES_DIR = "samples"


@dataclass
class StepOutputs:
    terms: LossTerms
    anchors: int = 0
    negatives_per_anchor: int = 0


@dataclass
class StepRecord:
    losses: Dict[str, float]
    total: float
    anchors: int = 0
    negatives_per_anchor: int = 0


def compute_step_losses(
    model: CDDSANet,
    batch: Batch,
    config: TrainConfig,
    generator: Optional[torch.Generator] = None,
) -> StepOutputs:
    """Every loss term of one step for the configured mode; inactive terms are zero."""
    mode = TrainMode(config.mode)
    zero = batch.images.new_zeros(())

    f_a = model.encode_anatomy(batch.images)
    p = model.segment(f_a)
    seg = seg_loss(p, batch.masks)
    if not mode.disentangles:
        return StepOutputs(LossTerms(seg=seg, kl=zero, rec=zero, dsct=zero, saac=zero))

    dist = model.encode_style(batch.images)
    style = model.sample_style(dist, generator=generator)
    style.domain_ids = batch.domain_ids
    x_hat = model.decode(style, f_a)
    kl = kl_loss(dist)
    rec = rec_loss(batch.images, x_hat)

    dsct, anchors, negatives = zero, 0, 0
    if mode.uses_dsct:
        if len(torch.unique(batch.domain_ids)) < 2:
            raise TrainingError("the contrastive term needs at least two training domains in the batch")
        pairs = build_contrastive_pairs(
            style.z, batch.domain_ids, config.per_domain_batch, generator, config.tau, config.derangement
        )
        dsct = dsct_loss(pairs)
        anchors, negatives = pairs.anchors.shape[0], pairs.negatives_per_anchor

    saac = zero
    if mode.uses_saac:
        count = len(batch) if config.augment_per_sample else 1
        if mode.style_sampler == "gaussian":
            new_style = augment_gaussian(style.dim, generator, count, device=style.z.device, dtype=style.z.dtype)
        else:
            new_style = augment_linear(collect_bank(style), generator, count)
        x_aug = synthesize_augmented(model, f_a, new_style)
        if config.saac_stop_gradient:
            x_aug = x_aug.detach()
        f_a_aug = model.encode_anatomy(x_aug)
        saac = saac_loss(f_a, f_a_aug)
        if config.segment_augmented:
            seg = 0.5 * (seg + seg_loss(model.segment(f_a_aug), batch.masks))

    return StepOutputs(LossTerms(seg=seg, kl=kl, rec=rec, dsct=dsct, saac=saac), anchors, negatives)


def train_step(
    model: CDDSANet,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    config: TrainConfig,
    generator: Optional[torch.Generator] = None,
) -> StepRecord:
    """One optimizer update over the mode's total loss."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    outputs = compute_step_losses(model, batch, config, generator)
    loss = total_loss(outputs.terms, config.weights)
    loss.backward()
    optimizer.step()
    return StepRecord(
        losses=outputs.terms.as_dict(),
        total=float(loss.detach()),
        anchors=outputs.anchors,
        negatives_per_anchor=outputs.negatives_per_anchor,
    )


class RunLog:
    """Append-only JSON-lines log of epoch and audit events."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def write(self, event: str, **payload: Any) -> None:
        with self.path.open("a", encoding="utf-8") as f:
            f.write(json.dumps({"event": event, **payload}) + "\n")


def read_run_log(path: Path) -> List[Dict[str, Any]]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def seed_everything(seed: int, deterministic: bool = False) -> torch.Generator:
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False
    return torch.Generator().manual_seed(seed)


@dataclass
class TrainResult:
    model: CDDSANet
    best_epoch: int
    best_val_dice: float
    history: List[Dict[str, Any]] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None


class CDDSATrainer:
    """Trains one model on a set of training domains and keeps the best validation checkpoint."""

    def __init__(self, config: ExperimentConfig, output_dir: Path, device: str = "cpu"):
        self.config = config
        self.train_config = config.train
        self.output_dir = Path(output_dir)
        self.device = device

    def _audit_hygiene(self, log: RunLog, pools: Dict[int, List[Sample]], held_out: Sequence[int]) -> None:
        train_domains = sorted(pools)
        leaked = sorted({s.domain_id for pool in pools.values() for s in pool} & set(held_out))
        mislabelled = [s.case_id for d, pool in pools.items() for s in pool if s.domain_id != d]
        passed = not (set(train_domains) & set(held_out)) and not leaked and not mislabelled
        log.write(
            "audit",
            check="held_out_hygiene",
            held_out=list(held_out),
            train_domains=train_domains,
            train_cases=sum(len(p) for p in pools.values()),
            passed=passed,
        )
        if not passed:
            raise TrainingError(
                f"held-out domain(s) {list(held_out)} leak into training (domains {train_domains}, "
                f"leaked {leaked}, mislabelled {mislabelled[:5]})"
            )

    def fit(
        self,
        pools: Dict[int, List[Sample]],
        held_out: Sequence[int] = (),
        validation: Optional[List[Sample]] = None,
    ) -> TrainResult:
        """
        Train on `pools` (domain -> training samples).

        Validation comes from a per-domain slice of `pools` unless given.
        Writes log.jsonl, checkpoint.pt and samples/ under the output directory.
        """
        cfg = self.train_config
        mode = TrainMode(cfg.mode)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        log = RunLog(self.output_dir / LOG_NAME)

        generator = seed_everything(cfg.seed, cfg.deterministic)
        np_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))

        pools = {d: list(p) for d, p in sorted(pools.items())}
        self._audit_hygiene(log, pools, held_out)
        if validation is None:
            pools, validation = split_validation(pools, cfg.validation_fraction, np_rng)
        if not validation:
            logger.warning("No held-in validation samples; scheduling on training Dice")
            validation = [s for p in pools.values() for s in p]

        train_domains = sorted(pools)
        if mode.uses_dsct and len(train_domains) < 2:
            raise TrainingError(f"mode {mode.value} needs at least two training domains, got {train_domains}")

        model = CDDSANet(self.config.model).to(self.device)
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_init)
        schedule = make_schedule(optimizer, cfg.lr_decay_factor, cfg.lr_patience_epochs)
        steps = cfg.steps_per_epoch or steps_per_epoch(pools, cfg.per_domain_batch, train_domains)
        pooled = mode is TrainMode.INTER_DOMAIN

        logger.info(
            f"Training {mode.value} on domains {train_domains} (held out {list(held_out)}): "
            f"{cfg.epochs} epochs x {steps} steps, b={cfg.per_domain_batch}, {len(validation)} validation cases"
        )

        best_dice, best_epoch, best_state = -1.0, 0, None
        checkpoint_path = self.output_dir / CHECKPOINT_NAME
        history: List[Dict[str, Any]] = []
        audited = False

        for epoch in range(1, cfg.epochs + 1):
            lr = schedule.lr
            totals: List[float] = []
            sums: Dict[str, float] = {}
            for _ in range(steps):
                batch = make_minibatch(
                    pools, cfg.per_domain_batch, train_domains, np_rng, self.config.augmentation, pooled
                ).to(self.device)
                record = train_step(model, optimizer, batch, cfg, generator)
                totals.append(record.total)
                for name, value in record.losses.items():
                    sums[name] = sums.get(name, 0.0) + value

                if mode.uses_dsct and not audited:
                    expected = expected_negatives(cfg.per_domain_batch, len(train_domains))
                    passed = (
                        record.negatives_per_anchor == expected
                        and record.anchors == cfg.per_domain_batch * len(train_domains)
                    )
                    log.write(
                        "audit",
                        check="contrastive_pairs",
                        anchors=record.anchors,
                        negatives_per_anchor=record.negatives_per_anchor,
                        expected_negatives=expected,
                        passed=passed,
                    )
                    if not passed:
                        raise TrainingError(
                            f"contrastive pairing produced {record.negatives_per_anchor} negatives per anchor, "
                            f"expected {expected}"
                        )
                    audited = True

            val_dice = evaluate_samples(
                model,
                validation,
                spacing=self.config.evaluation.spacing,
                nested=self.config.evaluation.nested_classes,
                batch_size=cfg.eval_batch_size,
                device=self.device,
            ).mean_foreground_dice
            next_lr = schedule.step(val_dice)

            entry = {
                "epoch": epoch,
                "lr": lr,
                "losses": {name: value / steps for name, value in sums.items()},
                "total": float(np.mean(totals)),
                "val_dice": val_dice,
            }
            history.append(entry)
            log.write("epoch", **entry)
            if next_lr < lr:
                logger.info(f"Epoch {epoch}: validation Dice stagnant, lr {lr:.3g} -> {next_lr:.3g}")

            if val_dice > best_dice:
                best_dice, best_epoch = val_dice, epoch
                best_state = copy.deepcopy(model.state_dict())
                save_checkpoint(
                    checkpoint_path,
                    model,
                    optimizer,
                    epoch=epoch,
                    seeds={"train": cfg.seed},
                    extra={
                        "config": self.config.snapshot(),
                        "held_out": list(held_out),
                        "train_domains": train_domains,
                        "val_dice": val_dice,
                    },
                )
            logger.info(
                f"Epoch {epoch}/{cfg.epochs} total={entry['total']:.4f} seg={entry['losses']['seg']:.4f} "
                f"val_dice={val_dice:.2f} lr={lr:.3g}"
            )

        if best_state is not None:
            model.load_state_dict(best_state)
        model.eval()
        self._write_samples(model, validation, generator)
        log.write("best", epoch=best_epoch, val_dice=best_dice)
        return TrainResult(model, best_epoch, best_dice, history, checkpoint_path)

    @torch.no_grad()
    def _write_samples(self, model: CDDSANet, validation: List[Sample], generator: torch.Generator) -> None:
        """Grid for the first validation image: input, mask, prediction, reconstruction, restyled variants."""
        sample = validation[0]
        images = samples_to_batch(validation[:8]).images.to(self.device)
        x = images[:1]
        levels = max(model.config.num_classes - 1, 1)
        panels = [
            x[0],
            sample.mask.astype(np.float32) / levels,
            model.predict(x)[0].cpu().numpy().astype(np.float32) / levels,
        ]
        if TrainMode(self.train_config.mode).disentangles:
            f_a = model.encode_anatomy(x)
            panels.append(model.reconstruct(x)[0])
            codes = model.sample_style(model.encode_style(images), mode="mean")
            if TrainMode(self.train_config.mode).style_sampler == "gaussian":
                new_styles = augment_gaussian(codes.dim, generator, 3, device=codes.z.device)
            else:
                new_styles = augment_linear(collect_bank(codes.z), generator, 3)
            for z in new_styles.z:
                panels.append(synthesize_augmented(model, f_a, z)[0])

        out = self.output_dir / SAMPLES_DIR
        out.mkdir(parents=True, exist_ok=True)
        make_image_grid(panels).save(out / f"{sample.case_id}_grid.png")
