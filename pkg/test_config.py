import json

import pytest

from medical_dg.config import TRAIN_PRESETS, ExperimentConfig, TrainConfig, load_experiment_config
from medical_dg.errors import ConfigurationError


# Partial sections

def test_partial_generator_override_keeps_default_domains():
    config = load_experiment_config(overrides={"generator": {"image_size": 64}})
    assert config.generator.image_size == 64
    assert len(config.generator.domains) == 4


def test_partial_generator_section_in_a_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"generator": {"seed": 3, "train_per_domain": 2}}))
    config = load_experiment_config(path)
    assert config.generator.seed == 3 and config.generator.train_per_domain == 2
    assert [d.domain_id for d in config.generator.domains] == [0, 1, 2, 3]


def test_seed_environment_alone_is_a_valid_config(monkeypatch):
    monkeypatch.setenv("CDDSA_SEED", "9")
    config = load_experiment_config()
    assert config.generator.seed == 9 and len(config.generator.domains) == 4


# Schedule presets

def test_gray_data_uses_the_longer_schedule():
    train = ExperimentConfig().fit_to_data(3, 1).train
    assert (train.epochs, train.per_domain_batch) == (400, 6)


def test_color_data_keeps_the_default_schedule():
    train = ExperimentConfig().fit_to_data(3, 3).train
    assert (train.epochs, train.per_domain_batch) == (200, 8)


def test_explicit_schedule_survives_the_gray_preset():
    config = load_experiment_config(overrides={"train": {"epochs": 5}}).fit_to_data(3, 1)
    assert config.train.epochs == 5
    assert config.train.per_domain_batch == TRAIN_PRESETS["gray"]["per_domain_batch"]


def test_manifest_snapshot_is_not_re_preset(tmp_path):
    path = tmp_path / "snapshot.json"
    path.write_text(json.dumps(ExperimentConfig().snapshot()))
    train = load_experiment_config(path).fit_to_data(3, 1).train
    assert (train.epochs, train.per_domain_batch) == (200, 8)


def test_unknown_preset_rejected():
    with pytest.raises(ConfigurationError):
        TrainConfig().with_preset("ct")
