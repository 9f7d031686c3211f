import numpy as np
import pytest
import torch
from pydantic import ValidationError

from conftest import tiny_experiment, tiny_model_config
from medical_dg.config import ActivationKind, LossWeights, TrainConfig, TrainMode
from medical_dg.errors import ConfigurationError, DataError, TrainingError
from medical_dg.evaluation.report import read_report_csv
from medical_dg.networks.cddsa import CDDSANet
from medical_dg.networks.checkpoint import load_checkpoint
from medical_dg.training.batching import make_minibatch, split_validation, steps_per_epoch
from medical_dg.training.lodo import LODOPlan, make_lodo_plans, run_lodo
from medical_dg.training.losses import total_loss
from medical_dg.training.schedule import lr_step, make_schedule
from medical_dg.training.trainer import (
    CHECKPOINT_NAME,
    LOG_NAME,
    SAMPLES_DIR,
    CDDSATrainer,
    compute_step_losses,
    read_run_log,
    train_step,
)


@pytest.fixture
def pools(tiny_dataset):
    return tiny_dataset.by_domain("train", [0, 1, 2])


# Batching

@pytest.mark.parametrize("b, expected", [(8, 24), (6, 18)])
def test_minibatch_has_b_per_domain(pools, b, expected):
    batch = make_minibatch(pools, b, [0, 1, 2], np.random.default_rng(0))
    assert len(batch) == expected
    assert torch.bincount(batch.domain_ids).tolist() == [b, b, b]


def test_small_domain_drawn_with_replacement(pools):
    small = {0: pools[0][:1], 1: pools[1]}
    batch = make_minibatch(small, 3, [0, 1], np.random.default_rng(0))
    assert batch.case_ids[:3] == [pools[0][0].case_id] * 3


def test_empty_domain_rejected(pools):
    with pytest.raises(DataError):
        make_minibatch({0: pools[0], 1: []}, 2, [0, 1], np.random.default_rng(0))


def test_pooled_minibatch_size(pools):
    batch = make_minibatch(pools, 2, [0, 1, 2], np.random.default_rng(0), pooled=True)
    assert len(batch) == 6


def test_steps_per_epoch_and_validation_split(pools):
    assert steps_per_epoch(pools, 3, [0, 1, 2]) == 2
    train, validation = split_validation(pools, 0.1, np.random.default_rng(0))
    assert len(validation) == 3
    assert all(len(p) == 3 for p in train.values())
    held_in = {s.case_id for s in validation}
    assert held_in.isdisjoint({s.case_id for p in train.values() for s in p})


# Learning-rate schedule

def _schedule():
    return make_schedule(torch.optim.SGD([torch.nn.Parameter(torch.zeros(1))], lr=1e-3))


def test_lr_decays_after_eight_stagnant_epochs():
    schedule = _schedule()
    assert lr_step(schedule, [0.5] + [0.5] * 7) == pytest.approx(1e-3)
    assert lr_step(schedule, [0.5] * 9) == pytest.approx(9.5e-4)
    assert lr_step(schedule, [0.5] * 17) == pytest.approx(9.025e-4)


def test_improvement_resets_the_stagnation_counter():
    schedule = _schedule()
    history = [0.5] * 8 + [0.6] + [0.6] * 7
    assert lr_step(schedule, history) == pytest.approx(1e-3)
    assert schedule.stagnant_epochs == 7


def test_lr_step_needs_history():
    with pytest.raises(ValueError):
        lr_step(_schedule(), [])


# Training step

def _batch(pools, b=2):
    return make_minibatch(pools, b, sorted(pools), np.random.default_rng(1))


@torch.no_grad()
def test_cddsa_adds_exactly_the_weighted_dsct_and_saac_terms(tiny_model, pools):
    batch = _batch(pools)
    full = compute_step_losses(tiny_model, batch, TrainConfig(mode="cddsa", per_domain_batch=2), torch.Generator().manual_seed(5))
    base = compute_step_losses(tiny_model, batch, TrainConfig(mode="baseline_sdnet", per_domain_batch=2), torch.Generator().manual_seed(5))

    for name in ("seg", "kl", "rec"):
        assert torch.allclose(getattr(full.terms, name), getattr(base.terms, name))
    assert float(base.terms.dsct) == 0.0 and float(base.terms.saac) == 0.0
    weights = LossWeights()
    expected = total_loss(base.terms, weights) + 0.01 * full.terms.dsct + 1.0 * full.terms.saac
    assert torch.allclose(total_loss(full.terms, weights), expected, atol=1e-6)
    assert full.anchors == 6 and full.negatives_per_anchor == 4


@torch.no_grad()
def test_segmentation_only_modes(tiny_model, pools):
    for mode in ("inter_domain", "intra_domain"):
        out = compute_step_losses(tiny_model, _batch(pools), TrainConfig(mode=mode, per_domain_batch=2))
        assert out.terms.seg > 0
        assert all(float(getattr(out.terms, n)) == 0.0 for n in ("kl", "rec", "dsct", "saac"))


@torch.no_grad()
def test_contrastive_step_needs_two_domains(tiny_model, pools):
    single = _batch({0: pools[0]})
    with pytest.raises(TrainingError):
        compute_step_losses(tiny_model, single, TrainConfig(mode="plus_dsct", per_domain_batch=2), torch.Generator())


def test_contrastive_mode_needs_pairs_per_domain():
    with pytest.raises(ValidationError):
        TrainConfig(mode="cddsa", per_domain_batch=1)


@pytest.mark.parametrize("activation", [ActivationKind.TANH, ActivationKind.GUMBEL_HARD])
@pytest.mark.parametrize("mode", list(TrainMode))
def test_loss_decreases_on_a_fixed_batch(pools, mode, activation):
    torch.manual_seed(0)
    model = CDDSANet(tiny_model_config(activation_kind=activation))
    batch = _batch(pools)
    config = TrainConfig(mode=mode, per_domain_batch=2)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    totals = []
    for _ in range(60):
        # same noise draws every step so only the weights change
        torch.manual_seed(1)
        totals.append(train_step(model, optimizer, batch, config, torch.Generator().manual_seed(2)).total)
    assert np.all(np.isfinite(totals))
    assert np.mean(totals[-5:]) < np.mean(totals[:5])


def test_full_step_records_every_term(tiny_model, pools):
    config = TrainConfig(mode="cddsa", per_domain_batch=2, augment_per_sample=True, segment_augmented=True)
    optimizer = torch.optim.Adam(tiny_model.parameters(), lr=1e-3)
    record = train_step(tiny_model, optimizer, _batch(pools), config, torch.Generator().manual_seed(0))
    assert set(record.losses) == {"seg", "kl", "rec", "dsct", "saac"}
    assert np.isfinite(record.total)


# Trainer and leave-one-domain-out

def test_training_is_reproducible(tmp_path, pools):
    config = tiny_experiment(epochs=2, deterministic=True)
    first = CDDSATrainer(config, tmp_path / "a").fit(pools, held_out=(3,))
    second = CDDSATrainer(config, tmp_path / "b").fit(pools, held_out=(3,))
    assert first.history == second.history


def test_held_out_leak_aborts_training(tmp_path, tiny_dataset, pools):
    leaky = {0: pools[0], 1: pools[1] + tiny_dataset.train_samples([3])[:1]}
    with pytest.raises(TrainingError):
        CDDSATrainer(tiny_experiment(), tmp_path).fit(leaky, held_out=(3,))
    audit = read_run_log(tmp_path / LOG_NAME)[0]
    assert audit["check"] == "held_out_hygiene" and audit["passed"] is False


def test_lodo_plans():
    plans = make_lodo_plans([0, 1, 2, 3])
    assert [p.held_out_domain for p in plans] == [0, 1, 2, 3]
    assert all(len(p.train_domains) == 3 and p.held_out_domain not in p.train_domains for p in plans)
    assert make_lodo_plans([0, 1]) == [LODOPlan(0, (1,)), LODOPlan(1, (0,))]
    assert make_lodo_plans([0, 1, 2], holdout=2)[0].train_domains == (0, 1)
    assert make_lodo_plans([0, 1], intra=True)[1] == LODOPlan(1, (1,), intra=True)
    with pytest.raises(ConfigurationError):
        make_lodo_plans([0, 1, 2], holdout=5)
    with pytest.raises(DataError):
        make_lodo_plans([0])
    with pytest.raises(ConfigurationError):
        LODOPlan(1, (0, 1))


def test_single_fold_run_writes_its_artifacts(tmp_path, tiny_dataset):
    results = run_lodo(tiny_dataset, tiny_experiment(), tmp_path, holdout=3)
    assert len(results) == 1
    fold = tmp_path / "fold_3"

    events = read_run_log(fold / LOG_NAME)
    audits = {e["check"]: e for e in events if e["event"] == "audit"}
    assert audits["held_out_hygiene"]["passed"] and audits["held_out_hygiene"]["train_domains"] == [0, 1, 2]
    assert audits["contrastive_pairs"]["negatives_per_anchor"] == 4
    assert [e["epoch"] for e in events if e["event"] == "epoch"] == [1]

    checkpoint = load_checkpoint(fold / CHECKPOINT_NAME)
    assert isinstance(checkpoint.model, CDDSANet)
    assert checkpoint.extra["held_out"] == [3]

    rows = read_report_csv(fold / "report.csv")
    assert {r.domain_id for r in rows} == {3}
    assert len(rows) == 2 * len(tiny_dataset.test_samples([3]))
    assert list((fold / SAMPLES_DIR).glob("*.png"))
    assert (tmp_path / "summary.csv").exists() and (tmp_path / "report.txt").exists()


def test_inter_domain_report_carries_the_loss_note(tmp_path, tiny_dataset):
    run_lodo(tiny_dataset, tiny_experiment(mode="inter_domain"), tmp_path, holdout=0)
    assert "hybrid Dice + cross-entropy" in (tmp_path / "fold_0" / "report.txt").read_text()


def test_intra_domain_trains_and_tests_on_each_domain(tmp_path, tiny_dataset):
    results = run_lodo(tiny_dataset, tiny_experiment(mode="intra_domain"), tmp_path)
    assert [r.plan.held_out_domain for r in results] == [0, 1, 2, 3]
    for d in range(4):
        fold = tmp_path / f"fold_{d}"
        assert {r.domain_id for r in read_report_csv(fold / "report.csv")} == {d}
        audit = next(e for e in read_run_log(fold / LOG_NAME) if e.get("check") == "held_out_hygiene")
        assert audit["train_domains"] == [d]


def test_parallel_folds_come_back_in_domain_order(tmp_path, tiny_dataset):
    results = run_lodo(tiny_dataset, tiny_experiment(mode="inter_domain"), tmp_path, jobs=2)
    assert [r.plan.held_out_domain for r in results] == [0, 1, 2, 3]
    assert all((tmp_path / f"fold_{d}" / CHECKPOINT_NAME).exists() for d in range(4))
    assert (tmp_path / "summary.csv").exists()
