"""
Checkpoint archive (format_version 1): a single torch file holding

    format_version, model_config, state_dict, optimizer, epoch, seeds, extra

`extra` carries JSON-compatible run metadata (config snapshot, fold, metric).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from medical_dg.config import ModelConfig
from medical_dg.errors import DataError
from medical_dg.networks.cddsa import CDDSANet

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class LoadedCheckpoint:
    model: CDDSANet
    model_config: ModelConfig
    epoch: int
    seeds: Dict[str, int] = field(default_factory=dict)
    optimizer_state: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(
    path: Path,
    model: CDDSANet,
    optimizer: Optional[torch.optim.Optimizer] = None,
    epoch: int = 0,
    seeds: Optional[Dict[str, int]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "model_config": model.config.model_dump(mode="json"),
            "state_dict": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "epoch": epoch,
            "seeds": dict(seeds or {}),
            "extra": dict(extra or {}),
        },
        path,
    )
    return path


def load_checkpoint(path: Path, device: str = "cpu") -> LoadedCheckpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}")
    payload = torch.load(path, map_location=device, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"Unsupported checkpoint format {version!r} in {path}")

    config = ModelConfig.model_validate(payload["model_config"])
    model = CDDSANet(config).to(device)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    logger.info(f"Loaded checkpoint {path} (epoch {payload['epoch']})")
    return LoadedCheckpoint(
        model=model,
        model_config=config,
        epoch=int(payload["epoch"]),
        seeds=payload.get("seeds", {}),
        optimizer_state=payload.get("optimizer"),
        extra=payload.get("extra", {}),
    )
