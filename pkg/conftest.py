import pytest
import torch

from medical_dg.config import ModelConfig, load_experiment_config
from medical_dg.data.synthetic import build_dataset, default_generator_config
from medical_dg.networks.cddsa import CDDSANet


def tiny_model_config(**overrides) -> ModelConfig:
    values = dict(
        anatomy_channels=4,
        style_dim=4,
        unet_channels=[4, 4, 8, 8, 8],
        style_channels=[4, 8],
        decoder_channels=[8, 4, 4],
        segmentor_channels=4,
        num_classes=3,
        image_channels=3,
    )
    values.update(overrides)
    return ModelConfig(**values)


def tiny_experiment(**train):
    """Small, fast experiment config on 32px images."""
    return load_experiment_config(overrides={
        "generator": {"image_size": 32, "train_per_domain": 4, "test_per_domain": 2},
        "model": tiny_model_config().model_dump(mode="json"),
        "train": {"epochs": 1, "per_domain_batch": 2, "steps_per_epoch": 1, "eval_batch_size": 4, **train},
    })


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("CDDSA_SEED", raising=False)


@pytest.fixture(scope="session")
def tiny_dataset():
    return build_dataset(default_generator_config(image_size=32, train_per_domain=4, test_per_domain=2, seed=0))


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return CDDSANet(tiny_model_config())
