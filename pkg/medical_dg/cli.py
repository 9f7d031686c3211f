"""
Command-line entry point.

    gen-data     render the synthetic multi-domain dataset
    train        leave-one-domain-out training (one fold with --holdout)
    eval         score a checkpoint on a domain's test split
    reconstruct  original | reconstruction grid for one image
    augment      original | N restyled variants grid for one image
    report       summarize report CSVs, optionally compare two runs

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

import functools
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
import typer
from pydantic import ValidationError

from medical_dg.config import Config, EvaluationConfig, TrainMode, load_experiment_config
from medical_dg.data.ingestion import load_dataset, read_image, save_dataset
from medical_dg.data.synthetic import build_dataset
from medical_dg.errors import CDDSAError, ConfigurationError, DataError
from medical_dg.evaluation.evaluate import evaluate_samples
from medical_dg.evaluation.report import format_table, load_reports, write_report_csv, write_summary_csv
from medical_dg.evaluation.stats import paired_wilcoxon
from medical_dg.evaluation.visualize import make_image_grid
from medical_dg.manifest import RunManifest, run_parameters
from medical_dg.networks.checkpoint import load_checkpoint
from medical_dg.training.batching import samples_to_batch
from medical_dg.training.lodo import REPORT_NAME, TABLE_NAME, run_lodo
from medical_dg.training.style_bank import augment_gaussian, augment_linear, collect_bank, synthesize_augmented

logger = logging.getLogger(__name__)

app = typer.Typer(help="Content/style disentangled segmentation with style augmentation.", no_args_is_help=True)

_BANK_LIMIT = 64


@app.callback()
def main(log_level: str = typer.Option(Config.LOG_LEVEL, "--log-level", help="Logging level")):
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _handle_errors(command):
    """Map package errors to exit codes; anything unexpected exits 4 with a traceback."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except typer.Exit:
            raise
        except CDDSAError as e:
            logger.error(str(e))
            typer.echo(f"Error: {e}", err=True)
            raise typer.Exit(code=e.exit_code)
        except Exception as e:
            logger.exception(f"Unexpected failure: {e}")
            typer.echo(f"Error: {e}", err=True)
            raise typer.Exit(code=4)

    return wrapper


def _set(overrides: Dict[str, Any], section: str, key: str, value: Any) -> None:
    if value is not None:
        overrides.setdefault(section, {})[key] = value


def _argv() -> List[str]:
    return list(sys.argv[1:])


def _image_tensor(path: Path, channels: int) -> torch.Tensor:
    """1 x C x H x W tensor matching the model's channel count."""
    image = read_image(path)
    if image.shape[-1] != channels:
        image = np.repeat(image, channels, axis=-1) if image.shape[-1] == 1 else image.mean(axis=-1, keepdims=True)
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None].float()


def _evaluation_config(extra: Dict[str, Any]) -> EvaluationConfig:
    """Evaluation settings the checkpoint was trained with; defaults for bare checkpoints."""
    section = (extra.get("config") or {}).get("evaluation") or {}
    try:
        return EvaluationConfig.model_validate(section)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid evaluation settings in checkpoint: {e}") from e


@app.command("gen-data")
@_handle_errors
def gen_data(
    config: Optional[Path] = typer.Option(None, "--config", help="Experiment config (JSON)"),
    out: Path = typer.Option(Path(Config.DATA_DIR), "--out", help="Output dataset directory"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    image_size: Optional[int] = typer.Option(None, "--image-size"),
    train_per_domain: Optional[int] = typer.Option(None, "--train-per-domain"),
    test_per_domain: Optional[int] = typer.Option(None, "--test-per-domain"),
):
    """Render the synthetic multi-domain dataset."""
    overrides: Dict[str, Any] = {}
    _set(overrides, "generator", "seed", seed)
    _set(overrides, "generator", "image_size", image_size)
    _set(overrides, "generator", "train_per_domain", train_per_domain)
    _set(overrides, "generator", "test_per_domain", test_per_domain)
    cfg = load_experiment_config(config, overrides)
    cfg.check_generator()

    dataset = build_dataset(cfg.generator, require_contrastive=cfg.train.mode.uses_dsct)
    try:
        save_dataset(dataset, out, cfg.generator)
    except OSError as e:
        raise DataError(f"Cannot write dataset to {out}: {e}") from e
    manifest = RunManifest.create("gen-data", _argv(), cfg.snapshot())
    manifest.finish().write(out)
    typer.echo(f"Wrote {len(dataset)} samples over {dataset.num_domains} domains to {out}")


@app.command()
@_handle_errors
def train(
    config: Optional[Path] = typer.Option(None, "--config", help="Experiment config or run manifest (JSON)"),
    data: Optional[Path] = typer.Option(None, "--data", help=f"Dataset directory (default: {Config.DATA_DIR})"),
    out: Optional[Path] = typer.Option(None, "--out", help="Run directory (default: runs/<mode>)"),
    mode: Optional[TrainMode] = typer.Option(None, "--mode"),
    holdout: Optional[int] = typer.Option(None, "--holdout", help="Run only the fold holding out this domain"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    batch: Optional[int] = typer.Option(None, "--batch", help="Samples per domain per mini-batch"),
    steps_per_epoch: Optional[int] = typer.Option(None, "--steps-per-epoch"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    lambda1: Optional[float] = typer.Option(None, "--lambda1"),
    lambda2: Optional[float] = typer.Option(None, "--lambda2"),
    lambda3: Optional[float] = typer.Option(None, "--lambda3"),
    lambda4: Optional[float] = typer.Option(None, "--lambda4"),
    tau: Optional[float] = typer.Option(None, "--tau"),
    jobs: Optional[int] = typer.Option(None, "--jobs", min=1, help="Folds trained in parallel processes"),
    percentile_norm: Optional[bool] = typer.Option(None, "--percentile-norm/--no-percentile-norm"),
    device: str = typer.Option(Config.DEVICE, "--device"),
):
    """Leave-one-domain-out training and held-out evaluation."""
    overrides: Dict[str, Any] = {}
    _set(overrides, "train", "mode", mode.value if mode else None)
    _set(overrides, "train", "epochs", epochs)
    _set(overrides, "train", "per_domain_batch", batch)
    _set(overrides, "train", "steps_per_epoch", steps_per_epoch)
    _set(overrides, "train", "seed", seed)
    _set(overrides, "train", "tau", tau)
    for i, value in enumerate((lambda1, lambda2, lambda3, lambda4), start=1):
        if value is not None:
            overrides.setdefault("train", {}).setdefault("weights", {})[f"lambda{i}"] = value
    cfg = load_experiment_config(config, overrides)

    # Options a train manifest recorded fill whatever the command line left out
    stored = run_parameters(config, "train")
    data = Path(data if data is not None else stored.get("data", Config.DATA_DIR))
    holdout = holdout if holdout is not None else stored.get("holdout")
    jobs = jobs if jobs is not None else int(stored.get("jobs", 1))
    percentile_norm = percentile_norm if percentile_norm is not None else bool(stored.get("percentile_norm", False))

    dataset = load_dataset(data, percentile_norm=percentile_norm)
    cfg = cfg.fit_to_data(dataset.num_classes, dataset.image_channels)
    run_dir = out or Path(Config.RUNS_DIR) / cfg.train.mode.value

    manifest = RunManifest.create(
        "train", _argv(), cfg.snapshot(), {"data": data},
        run={"data": str(data), "holdout": holdout, "jobs": jobs, "percentile_norm": percentile_norm},
    )
    manifest.write(run_dir)
    results = run_lodo(dataset, cfg, run_dir, holdout=holdout, jobs=jobs, device=device)
    manifest.finish().write(run_dir)

    typer.echo((run_dir / TABLE_NAME).read_text(encoding="utf-8"))
    for r in results:
        typer.echo(f"{r.plan.name}: best epoch {r.best_epoch}, validation Dice {r.best_val_dice:.2f}")


@app.command("eval")
@_handle_errors
def eval_command(
    checkpoint: Path = typer.Option(..., "--checkpoint"),
    data: Path = typer.Option(Path(Config.DATA_DIR), "--data"),
    domain: Optional[int] = typer.Option(None, "--domain", help="Test domain (default: the checkpoint's held-out domain)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory (default: <checkpoint dir>/eval)"),
    spacing: Optional[Tuple[float, float]] = typer.Option(None, "--spacing", help="Pixel spacing (default: the checkpoint's)"),
    percentile_norm: bool = typer.Option(False, "--percentile-norm"),
    device: str = typer.Option(Config.DEVICE, "--device"),
):
    """Score a checkpoint on one domain's test split."""
    loaded = load_checkpoint(checkpoint, device)
    eval_cfg = _evaluation_config(loaded.extra)
    spacing = tuple(spacing) if spacing is not None else eval_cfg.spacing
    dataset = load_dataset(data, percentile_norm=percentile_norm)
    if domain is None:
        held_out = loaded.extra.get("held_out") or []
        domain = held_out[0] if held_out else None
    domains = [domain] if domain is not None else dataset.domain_ids()
    samples = dataset.test_samples(domains)
    if not samples:
        raise DataError(f"empty test split for domain(s) {domains}")

    report = evaluate_samples(
        loaded.model, samples, spacing=spacing, nested=eval_cfg.nested_classes,
        device=device, class_names=eval_cfg.class_names,
    )
    out_dir = out or Path(checkpoint).parent / "eval"
    write_report_csv(report, out_dir / REPORT_NAME)
    table = format_table(report, f"{Path(checkpoint).name} on domain(s) {domains}")
    (out_dir / TABLE_NAME).write_text(table, encoding="utf-8")
    settings = {**eval_cfg.model_dump(mode="json"), "spacing": list(spacing)}
    RunManifest.create(
        "eval", _argv(), {"checkpoint": str(checkpoint), "domains": domains, "evaluation": settings},
        {"checkpoint": Path(checkpoint), "data": Path(data)},
    ).finish().write(out_dir)
    typer.echo(table)


@app.command()
@_handle_errors
def reconstruct(
    checkpoint: Path = typer.Option(..., "--checkpoint"),
    image: Path = typer.Option(..., "--image"),
    out: Path = typer.Option(Path("reconstruction.png"), "--out"),
    device: str = typer.Option(Config.DEVICE, "--device"),
):
    """Save an original | reconstruction grid."""
    loaded = load_checkpoint(checkpoint, device)
    x = _image_tensor(image, loaded.model_config.image_channels).to(device)
    x_hat = loaded.model.reconstruct(x)
    out.parent.mkdir(parents=True, exist_ok=True)
    make_image_grid([x[0], x_hat[0]]).save(out)
    typer.echo(f"Wrote {out}")


@app.command()
@_handle_errors
def augment(
    checkpoint: Path = typer.Option(..., "--checkpoint"),
    image: Path = typer.Option(..., "--image"),
    n: int = typer.Option(5, "--n", min=1, help="Number of restyled variants"),
    out: Path = typer.Option(Path("augmented.png"), "--out"),
    data: Optional[Path] = typer.Option(None, "--data", help="Dataset whose training styles form the bank"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    device: str = typer.Option(Config.DEVICE, "--device"),
):
    """Save an original | N restyled variants grid."""
    loaded = load_checkpoint(checkpoint, device)
    model = loaded.model
    seed = seed if seed is not None else (Config.seed_override() or 0)
    generator = torch.Generator().manual_seed(seed)

    x = _image_tensor(image, loaded.model_config.image_channels).to(device)
    with torch.no_grad():
        anatomy = model.encode_anatomy(x)
        if data is not None:
            samples = load_dataset(data).train_samples()[:_BANK_LIMIT]
            if not samples:
                raise DataError(f"no training images in {data} to build a style bank")
            batch = samples_to_batch(samples)
            codes = model.sample_style(model.encode_style(batch.images.to(device)), mode="mean")
            new_styles = augment_linear(collect_bank(codes.z, batch.domain_ids.to(device)), generator, n)
        else:
            new_styles = augment_gaussian(model.config.style_dim, generator, n, device=device)
        panels = [x[0]] + [synthesize_augmented(model, anatomy, z)[0] for z in new_styles.z]

    out.parent.mkdir(parents=True, exist_ok=True)
    make_image_grid(panels).save(out)
    typer.echo(f"Wrote {out} ({len(panels)} panels)")


def _report_csvs(path: Path) -> List[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise DataError(f"No report at {path}")
    csvs = sorted(path.glob(f"fold_*/{REPORT_NAME}")) or sorted(path.glob(REPORT_NAME))
    if not csvs:
        raise DataError(f"No {REPORT_NAME} files under {path}")
    return csvs


@app.command()
@_handle_errors
def report(
    path: Path = typer.Argument(..., help="Run directory or report CSV"),
    compare: Optional[Path] = typer.Option(None, "--compare", help="Second run to compare per-case Dice against"),
    out: Optional[Path] = typer.Option(None, "--out", help="Where to write summary.csv"),
):
    """Summarize per-case reports into mean±std tables."""
    merged = load_reports(_report_csvs(path))
    summary_dir = out or (path if path.is_dir() else path.parent)
    write_summary_csv(merged, Path(summary_dir) / "summary.csv")
    typer.echo(format_table(merged, str(path)))

    if compare is not None:
        other = load_reports(_report_csvs(compare))
        result = paired_wilcoxon(merged.dice_by_case(), other.dice_by_case())
        typer.echo("")
        typer.echo(f"## {path} vs {compare}")
        typer.echo(
            f"{result.test} on per-case Dice (our choice of test): n={result.n}, "
            f"mean difference {result.mean_difference:+.2f}, W={result.statistic:.1f}, p={result.p_value:.4g}"
            + (" (significant at 0.05)" if result.significant else "")
        )


if __name__ == "__main__":
    app()
