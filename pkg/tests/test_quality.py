import math

import numpy as np
import pytest
import torch

from latentmap.errors import ConfigurationError, ContractViolation, DegenerateFitError
from latentmap.grids import gaussian_blur, texture_image
from latentmap.quality import (
    CalibratedScorer,
    CnnQualityScorer,
    GradientSharpness,
    LogisticParams,
    MultiScaleQualityModel,
    NegativeTotalVariation,
    PyramidConfig,
    RankedPair,
    apply_logistic,
    build_pyramid,
    fidelity_loss,
    fit_logistic,
    mean_cosine_logits,
    pair_ranking_accuracy,
    pairwise_label,
    pairwise_win_prob,
    sample_crops,
    sample_ranking_pairs,
    train_quality_ranker,
)
from latentmap.quality.scorers import get_scorer


# ---------------------------------------------------------------------------
# logistic calibration
# ---------------------------------------------------------------------------

def test_logistic_midpoint_and_asymptotes():
    params = LogisticParams(xi3=2.0, xi4=0.7)
    assert apply_logistic(params, 2.0) == pytest.approx(0.5)
    assert apply_logistic(params, 1e9) == pytest.approx(1.0)
    assert apply_logistic(params, -1e9) == pytest.approx(0.0)


def test_logistic_closed_form():
    params = LogisticParams(xi3=0.0, xi4=1.0)
    assert apply_logistic(params, 1.0) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-12)


def test_logistic_zero_slope_rejected():
    with pytest.raises(ConfigurationError):
        LogisticParams(xi3=0.0, xi4=0.0)


def test_logistic_monotone_and_bounded():
    params = LogisticParams(xi3=1.0, xi4=-2.0)  # |xi4| is used
    qs = np.linspace(-30, 30, 101)
    vals = [apply_logistic(params, q) for q in qs]
    assert all(0.0 < v < 1.0 for v in vals)
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_logistic_preserves_argmax():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=20)
    params = LogisticParams(xi3=float(rng.normal()), xi4=float(rng.uniform(0.2, 3)))
    mapped = [apply_logistic(params, s) for s in scores]
    assert int(np.argmax(scores)) == int(np.argmax(mapped))


def test_fit_logistic_recovers_parameters():
    rng = np.random.default_rng(1)
    scores = rng.normal(0, 2, size=40)
    truth = LogisticParams(xi3=0.0, xi4=1.0)
    targets = [apply_logistic(truth, s) for s in scores]
    fit = fit_logistic(scores, targets)
    assert fit.xi3 == pytest.approx(0.0, abs=1e-6)
    assert abs(fit.xi4) == pytest.approx(1.0, abs=1e-6)


def test_fit_logistic_absorbs_affine_reparameterization():
    rng = np.random.default_rng(2)
    scores = rng.normal(0, 1.5, size=30)
    truth = LogisticParams(xi3=0.3, xi4=0.8)
    targets = [apply_logistic(truth, s) for s in scores]
    fit_a = fit_logistic(scores, targets)
    fit_b = fit_logistic(2.0 * scores + 3.0, targets)
    outputs_a = [apply_logistic(fit_a, s) for s in scores]
    outputs_b = [apply_logistic(fit_b, 2.0 * s + 3.0) for s in scores]
    assert np.allclose(outputs_a, outputs_b, atol=1e-6)


def test_fit_logistic_two_point_interpolation():
    fit = fit_logistic([1.0, 3.0], [0.25, 0.75])
    assert apply_logistic(fit, 1.0) == pytest.approx(0.25, abs=1e-9)
    assert apply_logistic(fit, 3.0) == pytest.approx(0.75, abs=1e-9)


def test_fit_logistic_degenerate_scores():
    with pytest.raises(DegenerateFitError):
        fit_logistic([2.0, 2.0, 2.0])


def test_fit_logistic_fallback_mean_std():
    scores = [1.0, 2.0, 3.0, 4.0]
    fit = fit_logistic(scores)
    assert fit.xi3 == pytest.approx(2.5)
    assert abs(fit.xi4) == pytest.approx(float(np.std(scores)))


def test_calibrated_scorer_range_and_order():
    scorer = GradientSharpness()
    sharp = texture_image(16, 1, seed=0)
    soft = gaussian_blur(sharp, 2.0)
    calibrated = scorer.calibrate([sharp, soft])
    a, b = float(calibrated(sharp)), float(calibrated(soft))
    assert 0.0 < b < a < 1.0


# ---------------------------------------------------------------------------
# scorers
# ---------------------------------------------------------------------------

def test_neg_tv_maximal_on_constant():
    scorer = NegativeTotalVariation()
    flat = torch.zeros(1, 8, 8)
    assert float(scorer(flat)) == 0.0
    assert float(scorer(texture_image(8, 1, seed=0))) < 0.0


def test_sharpness_blur_ordering():
    scorer = GradientSharpness()
    img = texture_image(32, 1, seed=5)
    assert float(scorer(gaussian_blur(img, 1.5))) < float(scorer(img))


def test_scorers_reject_non_finite():
    bad = torch.full((1, 4, 4), float("inf"))
    for scorer in (NegativeTotalVariation(), GradientSharpness()):
        with pytest.raises(ContractViolation):
            scorer(bad)


@pytest.mark.parametrize("scorer_cls", [NegativeTotalVariation, GradientSharpness])
def test_scorers_have_finite_gradients(scorer_cls):
    x = texture_image(16, 1, seed=1).requires_grad_(True)
    scorer_cls()(x).backward()
    assert torch.isfinite(x.grad).all()


def test_cnn_scorer_ranks_severity(cnn_scorer):
    hits = total = 0
    for i in range(8):
        clean = texture_image(32, 1, seed=5000 + i)  # held out from training seeds
        mild = gaussian_blur(clean, 0.8)
        strong = gaussian_blur(clean, 2.2)
        with torch.no_grad():
            qs = [float(cnn_scorer(img)) for img in (clean, mild, strong)]
        hits += (qs[0] > qs[1]) + (qs[1] > qs[2]) + (qs[0] > qs[2])
        total += 3
    assert hits / total > 0.9


def test_cnn_scorer_gradient_flows(cnn_scorer):
    x = texture_image(32, 1, seed=77).requires_grad_(True)
    cnn_scorer(x).backward()
    assert torch.isfinite(x.grad).all()
    assert float(x.grad.abs().sum()) > 0


def test_get_scorer_registry(tmp_path, cnn_scorer):
    assert isinstance(get_scorer("neg-tv"), NegativeTotalVariation)
    assert isinstance(get_scorer("sharpness"), GradientSharpness)
    with pytest.raises(ConfigurationError):
        get_scorer("cnn")
    with pytest.raises(ConfigurationError):
        get_scorer("mystery")


# ---------------------------------------------------------------------------
# pyramid and crops
# ---------------------------------------------------------------------------

def test_pyramid_reference_sizes():
    cfg = PyramidConfig(base_size=224)
    levels = build_pyramid(torch.zeros(1, 448, 448), cfg)
    assert [lv.shape[-2:] for lv in levels] == [(448, 448), (336, 336), (224, 224)]


def test_pyramid_degenerate_input():
    cfg = PyramidConfig(base_size=32)
    levels = build_pyramid(torch.zeros(1, 32, 32), cfg)
    assert [lv.shape[-2:] for lv in levels] == [(32, 32), (32, 32), (32, 32)]


def test_pyramid_rectangular_arithmetic():
    cfg = PyramidConfig(base_size=32)
    levels = build_pyramid(torch.zeros(1, 64, 96), cfg)
    assert [lv.shape[-2:] for lv in levels] == [(64, 96), (48, 72), (32, 48)]


def test_pyramid_rejects_small_images():
    with pytest.raises(ContractViolation):
        build_pyramid(torch.zeros(1, 16, 16), PyramidConfig(base_size=32))


def test_pyramid_resolutions_non_increasing():
    cfg = PyramidConfig(base_size=32)
    levels = build_pyramid(torch.zeros(1, 50, 70), cfg)
    areas = [lv.shape[-1] * lv.shape[-2] for lv in levels]
    assert areas == sorted(areas, reverse=True)


def test_crops_deterministic_and_sized():
    cfg = PyramidConfig(base_size=32, crops_per_level=2, seed=4)
    x = texture_image(64, 1, seed=0)
    a = sample_crops(x, cfg)
    b = sample_crops(x, cfg)
    assert torch.equal(a, b)
    assert a.shape == (6, 1, 32, 32)
    with pytest.raises(ConfigurationError):
        sample_crops(x, PyramidConfig(base_size=32, crops_per_level=0))


# ---------------------------------------------------------------------------
# multi-scale ranked model
# ---------------------------------------------------------------------------

def test_mean_cosine_logits_identical_and_orthogonal():
    e1 = torch.tensor([[1.0, 0.0, 0.0]])
    table = torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    logits = mean_cosine_logits(e1, table)
    assert logits[0] == pytest.approx(1.0)
    assert logits[1] == pytest.approx(0.0, abs=1e-7)


def test_mean_cosine_logits_mean_and_permutation():
    f1 = torch.tensor([0.2, math.sqrt(1 - 0.04), 0.0])
    f2 = torch.tensor([0.6, 0.8, 0.0])
    table = torch.tensor([[1.0, 0.0, 0.0]])
    fwd = mean_cosine_logits(torch.stack([f1, f2]), table)
    rev = mean_cosine_logits(torch.stack([f2, f1]), table)
    assert fwd[0] == pytest.approx(0.4, abs=1e-6)
    assert torch.allclose(fwd, rev)
    with pytest.raises(ConfigurationError):
        mean_cosine_logits(torch.zeros(0, 3), table)


def test_level_probs_uniform_and_low_temperature(monkeypatch):
    model = MultiScaleQualityModel(pyramid=PyramidConfig(base_size=8))
    x = texture_image(8, 1, seed=0)

    monkeypatch.setattr(model, "level_logits", lambda img: torch.zeros(5))
    probs = model.level_probs(x).detach()
    assert torch.allclose(probs, torch.full((5,), 0.2), atol=1e-9)

    monkeypatch.setattr(model, "level_logits", lambda img: torch.tensor([0.9, 0.1, 0.0, 0.0, 0.2]))
    with torch.no_grad():
        model.log_tau.fill_(math.log(1e-3))
    probs = model.level_probs(x).detach()
    assert float(probs[0]) == pytest.approx(1.0, abs=1e-6)


def test_level_probs_closed_form_softmax(monkeypatch):
    model = MultiScaleQualityModel(tau=1.0)
    x = texture_image(32, 1, seed=0)
    monkeypatch.setattr(model, "level_logits", lambda img: torch.tensor([1.0, 0, 0, 0, 0]))
    with torch.no_grad():
        model.log_tau.zero_()
    probs = model.level_probs(x).detach()
    assert float(probs[0]) == pytest.approx(math.e / (math.e + 4), abs=1e-6)


def test_temperature_must_be_positive():
    with pytest.raises(ConfigurationError):
        MultiScaleQualityModel(tau=0.0)
    with pytest.raises(ConfigurationError):
        MultiScaleQualityModel(tau=-1.0)


def test_expected_quality_closed_forms(monkeypatch):
    model = MultiScaleQualityModel()
    x = texture_image(32, 1, seed=0)
    cases = [
        (torch.full((5,), 0.2), 3.0),
        (torch.tensor([0.0, 0.0, 0.0, 0.0, 1.0]), 5.0),
        (torch.tensor([0.5, 0.5, 0.0, 0.0, 0.0]), 1.5),
    ]
    for probs, expected in cases:
        monkeypatch.setattr(model, "level_probs", lambda img, p=probs: p)
        assert float(model.expected_quality(x)) == pytest.approx(expected)


def test_model_probabilities_sum_to_one():
    model = MultiScaleQualityModel(pyramid=PyramidConfig(base_size=32, seed=0))
    x = texture_image(32, 1, seed=8)
    probs = model.level_probs(x)
    assert float(probs.detach().sum()) == pytest.approx(1.0, abs=1e-9)
    q = float(model.expected_quality(x))
    assert 1.0 <= q <= 5.0


# ---------------------------------------------------------------------------
# pairwise ranking pieces
# ---------------------------------------------------------------------------

def test_pairwise_label_tie_goes_to_first():
    assert pairwise_label(3.0, 3.0) == 1
    assert pairwise_label(3.0, 4.0) == 0
    assert pairwise_label(4.0, 3.0) == 1
    with pytest.raises(ContractViolation):
        pairwise_label(float("nan"), 1.0)


def test_pairwise_win_prob_values():
    assert pairwise_win_prob(2.0, 2.0) == pytest.approx(0.5)
    from scipy.stats import norm

    diff = math.sqrt(2.0) * norm.ppf(0.75)
    assert pairwise_win_prob(diff, 0.0) == pytest.approx(0.75, abs=1e-9)
    assert pairwise_win_prob(1e3, 0.0) == pytest.approx(1.0)


def test_fidelity_loss_values_and_contract():
    assert fidelity_loss(1, 1.0) == 0.0
    assert fidelity_loss(1, 0.0) == 1.0
    assert fidelity_loss(1, 0.75) == pytest.approx(1.0 - math.sqrt(0.75), abs=1e-12)
    with pytest.raises(ContractViolation):
        fidelity_loss(1, 1.5)
    with pytest.raises(ContractViolation):
        fidelity_loss(0, torch.tensor([-0.1]))


def test_fidelity_loss_properties():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = int(rng.integers(0, 2))
        p_hat = float(rng.uniform())
        loss = fidelity_loss(p, p_hat)
        assert 0.0 <= loss <= 1.0
        assert loss == pytest.approx(fidelity_loss(1 - p, 1.0 - p_hat), abs=1e-12)
    assert fidelity_loss(0, 0.0) == 0.0


def test_ranked_pair_cannot_cross_datasets():
    with pytest.raises(ContractViolation):
        RankedPair.across(0, 1, 1, 2, 1)
    pair = RankedPair.across(0, 1, 0, 2, 0)
    assert pair.dataset == 0 and pair.label == 0


def make_tiny_datasets(size=32, n=6):
    datasets = []
    for d, offset in enumerate((0, 40)):
        images, mos = [], []
        for i in range(n):
            clean = texture_image(size, 1, seed=offset + i)
            for severity in (0.0, 0.5, 1.0):
                images.append(gaussian_blur(clean, 2.5 * severity))
                mos.append((5.0 if d == 0 else 80.0) - (4.0 if d == 0 else 60.0) * severity)
        datasets.append((images, mos))
    return datasets


def test_untrained_ranker_is_chance_level():
    datasets = make_tiny_datasets(n=3)
    torch.manual_seed(0)
    model = MultiScaleQualityModel(pyramid=PyramidConfig(base_size=32))
    pairs = [p for p in sample_ranking_pairs(datasets, 200, seed=1)]
    acc = pair_ranking_accuracy(model, datasets, pairs)
    assert 0.25 <= acc <= 0.75


def test_ranker_gradient_matches_finite_differences():
    torch.manual_seed(0)
    model = MultiScaleQualityModel(
        channels=1, width=8, embed_dim=8, pyramid=PyramidConfig(base_size=8, crops_per_level=1)
    ).double()
    x = texture_image(8, 1, seed=0).double()
    y = gaussian_blur(texture_image(8, 1, seed=1), 1.0).double()

    def loss_value():
        win = pairwise_win_prob(model.expected_quality(x), model.expected_quality(y))
        return fidelity_loss(1, win.clamp(1e-6, 1 - 1e-6))

    loss = loss_value()
    loss.backward()
    weight = model.encoder.conv1.weight
    grad = weight.grad.clone()

    h = 1e-6
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(6):
        idx = int(rng.integers(0, weight.numel()))
        if abs(float(grad.view(-1)[idx])) < 1e-12:
            continue
        with torch.no_grad():
            weight.view(-1)[idx] += h
            up = float(loss_value())
            weight.view(-1)[idx] -= 2 * h
            down = float(loss_value())
            weight.view(-1)[idx] += h
        fd = (up - down) / (2 * h)
        rel = abs(fd - float(grad.view(-1)[idx])) / max(abs(fd), 1e-9)
        assert rel <= 1e-3
        checked += 1
    assert checked >= 3


def test_train_quality_ranker_needs_two_datasets():
    datasets = make_tiny_datasets(n=2)[:1]
    with pytest.raises(ConfigurationError):
        train_quality_ranker(datasets, steps=1)
