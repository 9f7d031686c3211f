import math

import pytest
import torch
from torch.distributions import Normal, kl_divergence

from medical_dg.config import LossWeights
from medical_dg.errors import LossError, TrainingError
from medical_dg.networks.style import StyleDistribution
from medical_dg.training.losses import (
    ContrastiveBatch,
    LossTerms,
    build_contrastive_pairs,
    ce_loss,
    cosine_similarity,
    dice_loss,
    dsct_loss,
    expected_negatives,
    kl_loss,
    rec_loss,
    saac_loss,
    seg_loss,
    total_loss,
)


def _one_hot(y, k):
    return torch.nn.functional.one_hot(y, k).permute(0, 3, 1, 2).double()


def _binary_half(n=1, size=4):
    y = torch.ones(n, size, size, dtype=torch.long)
    return torch.full((n, 2, size, size), 0.5, dtype=torch.float64), y


# Segmentation losses

def test_dice_perfect_prediction():
    y = torch.randint(0, 3, (2, 8, 8), generator=torch.Generator().manual_seed(0))
    assert float(dice_loss(_one_hot(y, 3), y)) == pytest.approx(0.0, abs=1e-5)


def test_dice_wrong_class_is_one():
    y = torch.ones(1, 8, 8, dtype=torch.long)
    p = _one_hot(torch.zeros(1, 8, 8, dtype=torch.long), 2)
    assert float(dice_loss(p, y)) == pytest.approx(1.0, abs=1e-5)


def test_dice_half_probability_binary_case():
    p, y = _binary_half()
    assert float(dice_loss(p, y)) == pytest.approx(1 / 3, abs=1e-5)


def test_dice_rejects_out_of_range_label():
    p, y = _binary_half()
    y[0, 0, 0] = 2
    with pytest.raises(LossError):
        dice_loss(p, y)


def test_ce_perfect_and_uniform():
    y = torch.randint(0, 4, (2, 6, 6), generator=torch.Generator().manual_seed(1))
    assert float(ce_loss(_one_hot(y, 4), y)) == pytest.approx(0.0, abs=1e-9)
    uniform = torch.full((2, 4, 6, 6), 0.25, dtype=torch.float64)
    assert float(ce_loss(uniform, y)) == pytest.approx(math.log(4), abs=1e-9)


def test_ce_matches_pixel_sum():
    g = torch.Generator().manual_seed(2)
    p = torch.softmax(torch.randn(2, 3, 5, 5, generator=g, dtype=torch.float64), dim=1)
    y = torch.randint(0, 3, (2, 5, 5), generator=g)
    brute = sum(
        -math.log(float(p[n, y[n, i, j], i, j])) for n in range(2) for i in range(5) for j in range(5)
    ) / 50
    assert float(ce_loss(p, y)) == pytest.approx(brute, abs=1e-9)


def test_dice_matches_per_class_sums():
    g = torch.Generator().manual_seed(3)
    p = torch.softmax(torch.randn(1, 3, 5, 5, generator=g, dtype=torch.float64), dim=1)
    y = torch.randint(0, 3, (1, 5, 5), generator=g)
    per_class = []
    for c in (1, 2):
        inter = sum(float(p[0, c, i, j]) for i in range(5) for j in range(5) if y[0, i, j] == c)
        total = float(p[0, c].sum()) + int((y == c).sum())
        per_class.append(1 - (2 * inter + 1e-5) / (total + 1e-5))
    assert float(dice_loss(p, y)) == pytest.approx(sum(per_class) / 2, abs=1e-9)


def test_seg_loss_hand_example():
    p, y = _binary_half()
    assert float(seg_loss(p, y)) == pytest.approx(0.5 * (1 / 3 + math.log(2)), abs=1e-4)
    assert float(seg_loss(p, y)) == pytest.approx(0.5132, abs=1e-4)


def test_seg_loss_batch_of_identical_samples():
    p, y = _binary_half()
    pb, yb = _binary_half(n=5)
    assert float(seg_loss(pb, yb)) == pytest.approx(float(seg_loss(p, y)), abs=1e-12)


def test_seg_loss_perfect_and_empty():
    y = torch.randint(0, 3, (2, 4, 4), generator=torch.Generator().manual_seed(0))
    assert float(seg_loss(_one_hot(y, 3), y)) == pytest.approx(0.0, abs=1e-5)
    with pytest.raises(LossError):
        seg_loss(torch.zeros(0, 3, 4, 4), torch.zeros(0, 4, 4, dtype=torch.long))


# KL, reconstruction, anatomical consistency

def _kl(u, v):
    return float(kl_loss(StyleDistribution(torch.tensor([u], dtype=torch.float64), torch.tensor([v], dtype=torch.float64))))


def test_kl_closed_form_examples():
    assert _kl([0.0, 0.0], [1.0, 1.0]) == pytest.approx(0.0, abs=1e-12)
    assert _kl([1.0], [1.0]) == pytest.approx(0.5, abs=1e-12)
    assert _kl([0.0], [math.e]) == pytest.approx(0.5 * (math.e - 2), abs=1e-12)
    assert _kl([0.0], [math.e]) == pytest.approx(0.3591, abs=1e-4)


def test_kl_matches_gaussian_divergence():
    g = torch.Generator().manual_seed(0)
    u = torch.randn(1000, 1, generator=g, dtype=torch.float64)
    v = torch.rand(1000, 1, generator=g, dtype=torch.float64) * 3 + 0.01
    for i in range(1000):
        expected = kl_divergence(Normal(u[i], v[i].sqrt()), Normal(torch.zeros(1, dtype=torch.float64), torch.ones(1, dtype=torch.float64)))
        assert abs(float(kl_loss(StyleDistribution(u[i:i + 1], v[i:i + 1]))) - float(expected.sum())) < 1e-6


def test_kl_rejects_non_positive_variance():
    with pytest.raises(LossError):
        kl_loss(StyleDistribution(torch.zeros(1, 2), torch.tensor([[1.0, 0.0]])))


def test_rec_and_saac_mean_absolute_error():
    x = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    assert float(rec_loss(x, x)) == 0.0
    assert float(rec_loss(x, x + 0.1)) == pytest.approx(0.1, abs=1e-12)
    f = torch.rand(2, 4, 4, 4, dtype=torch.float64)
    assert float(saac_loss(f, f)) == 0.0
    assert float(saac_loss(f, f - 0.2)) == pytest.approx(0.2, abs=1e-12)

    y = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    brute = sum(abs(a - b) for a, b in zip(x.flatten().tolist(), y.flatten().tolist())) / x.numel()
    assert float(rec_loss(x, y)) == pytest.approx(brute, abs=1e-9)


# Contrastive pairing and loss

def test_contrastive_pair_counts():
    codes = torch.randn(6, 4)
    domains = torch.tensor([0, 0, 1, 1, 2, 2])
    pairs = build_contrastive_pairs(codes, domains, b=2, generator=torch.Generator().manual_seed(0))
    assert pairs.anchors.shape == (6, 4)
    assert pairs.negatives.shape == (6, 4, 4)
    assert pairs.negatives_per_anchor == expected_negatives(2, 3) == 4
    assert torch.equal(domains[pairs.positive_index], domains[pairs.anchor_index])
    assert torch.all(domains[pairs.negative_index] != domains[pairs.anchor_index][:, None])


def test_contrastive_needs_two_domains_and_even_counts():
    with pytest.raises(LossError):
        build_contrastive_pairs(torch.randn(4, 3), torch.zeros(4, dtype=torch.long), b=4)
    with pytest.raises(LossError):
        build_contrastive_pairs(torch.randn(5, 3), torch.tensor([0, 0, 0, 1, 1]), b=2)


def test_derangement_has_no_self_pairs():
    codes = torch.randn(8, 3)
    domains = torch.tensor([0] * 4 + [1] * 4)
    for seed in range(20):
        pairs = build_contrastive_pairs(codes, domains, 4, torch.Generator().manual_seed(seed), derangement=True)
        assert torch.all(pairs.anchor_index != pairs.positive_index)


def _single(anchor, positive, negatives, tau=0.1):
    t = lambda v: torch.tensor(v, dtype=torch.float64)
    return ContrastiveBatch(t([anchor]), t([positive]), t([negatives]), torch.tensor([0]), tau)


def test_dsct_scalar_examples():
    aligned = _single([1.0, 0.0], [1.0, 0.0], [[0.0, 1.0]])
    assert float(dsct_loss(aligned)) == pytest.approx(math.log(1 + math.exp(-10)), abs=1e-6)
    assert float(dsct_loss(aligned)) == pytest.approx(4.54e-5, abs=1e-6)
    orthogonal = _single([1.0, 0.0], [0.0, 1.0], [[0.0, 1.0]])
    assert float(dsct_loss(orthogonal)) == pytest.approx(math.log(2), abs=1e-6)


def test_dsct_decreases_with_positive_similarity():
    negatives = [[0.0, 1.0], [-1.0, 0.2]]
    losses = [
        float(dsct_loss(_single([1.0, 0.0], [math.cos(a), math.sin(a)], negatives)))
        for a in (1.5, 1.0, 0.5, 0.0)
    ]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_dsct_invariant_to_negative_order():
    negatives = [[0.0, 1.0], [-1.0, 0.2], [0.3, -0.7]]
    a = dsct_loss(_single([1.0, 0.5], [0.8, 0.1], negatives))
    b = dsct_loss(_single([1.0, 0.5], [0.8, 0.1], negatives[::-1]))
    assert float(a) == pytest.approx(float(b), abs=1e-12)


def test_dsct_zero_norm_code_rejected():
    with pytest.raises(LossError):
        dsct_loss(_single([0.0, 0.0], [1.0, 0.0], [[0.0, 1.0]]))


def test_cosine_similarity_guard():
    a = torch.tensor([[3.0, 4.0]], dtype=torch.float64)
    assert float(cosine_similarity(a, a)) == pytest.approx(1.0, abs=1e-10)


# Weighted total

def _terms(value):
    t = torch.tensor(value)
    return LossTerms(seg=t, kl=t, rec=t, dsct=t, saac=t)


def test_total_loss_default_weights():
    assert float(total_loss(_terms(1.0), LossWeights())) == pytest.approx(3.011, abs=1e-6)
    assert float(total_loss(_terms(0.0), LossWeights())) == 0.0


def test_total_loss_zero_weights_keep_seg():
    weights = LossWeights(lambda1=0, lambda2=0, lambda3=0, lambda4=0)
    terms = LossTerms(seg=torch.tensor(0.7), kl=torch.tensor(5.0), rec=torch.tensor(2.0))
    assert float(total_loss(terms, weights)) == pytest.approx(0.7)


def test_total_loss_names_non_finite_term():
    terms = _terms(1.0)
    terms.kl = torch.tensor(float("nan"))
    with pytest.raises(TrainingError, match="kl"):
        total_loss(terms, LossWeights())


# Gradients of each loss against central differences

def test_loss_gradients_match_finite_differences():
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(2, 3, 8, 8, generator=g, dtype=torch.float64, requires_grad=True)
    y = torch.randint(0, 3, (2, 8, 8), generator=g)
    assert torch.autograd.gradcheck(lambda z: dice_loss(torch.softmax(z, 1), y), (logits,))
    assert torch.autograd.gradcheck(lambda z: ce_loss(torch.softmax(z, 1), y), (logits,))

    u = torch.randn(3, 4, generator=g, dtype=torch.float64, requires_grad=True)
    logv = torch.randn(3, 4, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b: kl_loss(StyleDistribution(a, b.exp())), (u, logv))

    x = torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64)
    x_hat = (x + 0.05 + 0.1 * torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64)).requires_grad_(True)
    assert torch.autograd.gradcheck(lambda z: rec_loss(x, z), (x_hat,))
    assert torch.autograd.gradcheck(lambda z: saac_loss(x, z), (x_hat,))

    codes = torch.randn(6, 4, generator=g, dtype=torch.float64, requires_grad=True)
    domains = torch.tensor([0, 0, 1, 1, 2, 2])
    assert torch.autograd.gradcheck(
        lambda c: dsct_loss(build_contrastive_pairs(c, domains, 2, torch.Generator().manual_seed(0))), (codes,)
    )
