import math

import numpy as np
import pytest
import torch

from latentmap import (
    ConvDenoiser,
    CoupledState,
    NoiseSchedule,
    add_noise,
    coupled_denoise_step,
    coupled_noise_step,
    ddim_step,
    default_mixing_weight,
    denoising_loss,
    from_latent,
    load_denoiser,
    save_denoiser,
    to_latent,
    train_denoiser,
)
from latentmap.errors import ConfigurationError, ContractViolation
from latentmap.grids import texture_batch, texture_image


def zero_denoiser(x, t):
    return torch.zeros_like(x)


def random_net(channels=1, width=16, T=6, seed=0, scramble=True):
    """A small untrained denoiser; optionally with randomised output layers."""
    sch = NoiseSchedule.geometric(T)
    torch.manual_seed(seed)
    net = ConvDenoiser(channels=channels, width=width, schedule=sch)
    if scramble:
        with torch.no_grad():
            net.out.weight.normal_(0, 0.05)
            net.gate.weight.normal_(0, 0.02)
    return net.double().eval(), sch


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("factory", [NoiseSchedule.geometric, NoiseSchedule.linear])
def test_schedule_invariants(factory):
    sch = factory(20)
    assert sch.alpha[0] == 1.0
    assert (np.diff(sch.alpha) < 0).all()
    assert sch.alpha[-1] >= 1e-4 - 1e-15
    for t in range(1, sch.T + 1):
        assert sch.a(t) >= 1.0


def test_schedule_validation_errors():
    with pytest.raises(ConfigurationError):
        NoiseSchedule([1.0, 0.5, 0.5, 1e-4])  # not strictly decreasing
    with pytest.raises(ConfigurationError):
        NoiseSchedule([0.9, 0.5, 1e-4])  # alpha_0 != 1
    with pytest.raises(ConfigurationError):
        NoiseSchedule([1.0, 1e-7])  # below the floor
    with pytest.raises(ContractViolation):
        NoiseSchedule.geometric(4).a(5)
    with pytest.raises(ContractViolation):
        NoiseSchedule.geometric(4).b(0)


def test_step_coefficient_closed_forms():
    # alpha: 1.0 -> 0.25 gives a = 2, b = -sqrt(3)
    sch = NoiseSchedule([1.0, 0.25, 1e-4])
    assert sch.a(1) == pytest.approx(2.0, abs=1e-12)
    assert sch.b(1) == pytest.approx(-math.sqrt(3.0), abs=1e-12)


# ---------------------------------------------------------------------------
# forward perturbation
# ---------------------------------------------------------------------------

def test_add_noise_zero_noise_endpoint():
    sch = NoiseSchedule.geometric(8)
    x0 = texture_image(16, 1, seed=0)
    eps = torch.randn_like(x0)
    assert torch.equal(add_noise(x0, 0, eps, sch), x0)  # alpha_0 = 1


def test_add_noise_pure_noise_endpoint():
    sch = NoiseSchedule.geometric(8)
    x0 = texture_image(16, 1, seed=0)
    eps = torch.randn_like(x0)
    out = add_noise(x0, sch.T, eps, sch)
    assert (out - eps).abs().max() <= 0.02 * (1 + x0.abs().max())


def test_add_noise_closed_form():
    # alpha_t = 0.25, x0 = 0, eps = 1 -> sqrt(0.75) everywhere
    sch = NoiseSchedule([1.0, 0.25, 1e-4])
    out = add_noise(torch.zeros(1, 4, 4), 1, torch.ones(1, 4, 4), sch)
    assert torch.allclose(out, torch.full((1, 4, 4), math.sqrt(0.75)), atol=1e-7)


def test_add_noise_contracts():
    sch = NoiseSchedule.geometric(4)
    x0 = torch.zeros(1, 4, 4)
    with pytest.raises(ContractViolation):
        add_noise(x0, 1, torch.zeros(1, 4, 5), sch)
    with pytest.raises(ContractViolation):
        add_noise(x0, 5, torch.zeros_like(x0), sch)


# ---------------------------------------------------------------------------
# DDIM stepping
# ---------------------------------------------------------------------------

def test_ddim_step_near_identity_for_near_equal_alphas():
    sch = NoiseSchedule([1.0, 0.5, 0.5 - 1e-12, 1e-4])
    xt = torch.randn(1, 6, 6, dtype=torch.float64)

    def wild(x, t):
        return torch.ones_like(x) * 7.0

    out = ddim_step(xt, 2, wild, sch)  # a -> 1, b -> 0 as the alphas coincide
    assert (out - xt).abs().max() <= 1e-5


def test_ddim_step_zero_denoiser():
    sch = NoiseSchedule([1.0, 0.25, 1e-4])
    xt = torch.randn(1, 4, 4, dtype=torch.float64)
    out = ddim_step(xt, 1, zero_denoiser, sch)
    assert torch.allclose(out, 2.0 * xt)


def test_ddim_step_range_contract():
    sch = NoiseSchedule.geometric(4)
    with pytest.raises(ContractViolation):
        ddim_step(torch.zeros(1, 4, 4), 0, zero_denoiser, sch)


# ---------------------------------------------------------------------------
# coupled steps
# ---------------------------------------------------------------------------

def unmixed_coupled_step(state, denoiser, sch):
    """Reference implementation of the non-mixed coupled denoise update."""
    a, b = sch.a(state.t), sch.b(state.t)
    x_next = a * state.x + b * denoiser(state.y, state.t)
    y_next = a * state.y + b * denoiser(x_next, state.t)
    return CoupledState(x_next, y_next, state.t - 1)


@pytest.mark.parametrize("dtype", [torch.float32, torch.float64])
def test_p1_reduces_to_unmixed_updates_bitwise(dtype):
    net, sch = random_net(T=6)
    net = net.to(dtype)
    torch.manual_seed(1)
    state = CoupledState(torch.randn(1, 8, 8, dtype=dtype),
                         torch.randn(1, 8, 8, dtype=dtype), 4)
    mixed = coupled_denoise_step(state, net, sch, p=1.0)
    plain = unmixed_coupled_step(state, net, sch)
    assert torch.equal(mixed.x, plain.x)
    assert torch.equal(mixed.y, plain.y)


def test_p1_zero_denoiser_scales_both_branches():
    sch = NoiseSchedule([1.0, 0.25, 1e-4])
    state = CoupledState(torch.randn(1, 4, 4, dtype=torch.float64),
                         torch.randn(1, 4, 4, dtype=torch.float64), 1)
    out = coupled_denoise_step(state, zero_denoiser, sch, p=1.0)
    assert torch.allclose(out.x, 2.0 * state.x)
    assert torch.allclose(out.y, 2.0 * state.y)


def test_single_step_inversion_tight():
    net, sch = random_net(T=6)
    torch.manual_seed(2)
    state = CoupledState(torch.randn(1, 8, 8, dtype=torch.float64),
                         torch.randn(1, 8, 8, dtype=torch.float64), 4)
    p = default_mixing_weight(20)
    down = coupled_denoise_step(state, net, sch, p)
    back = coupled_noise_step(down, net, sch, p)
    assert (back.x - state.x).abs().max() <= 1e-10
    assert (back.y - state.y).abs().max() <= 1e-10
    assert back.t == state.t


def test_noise_step_zero_denoiser_linear_inverse():
    sch = NoiseSchedule([1.0, 0.25, 1e-4])
    state = CoupledState(torch.randn(1, 4, 4, dtype=torch.float64),
                         torch.randn(1, 4, 4, dtype=torch.float64), 0)
    out = coupled_noise_step(state, zero_denoiser, sch, p=1.0)
    assert torch.allclose(out.x, state.x / 2.0)


def test_coupled_symmetry_with_input_blind_denoiser():
    def constant(x, t):
        return torch.full_like(x, 0.3)

    net, sch = random_net(T=6)
    v = torch.randn(1, 8, 8, dtype=torch.float64)
    state = CoupledState(v, v.clone(), sch.T)
    x0, y0 = from_latent(state, constant, sch, p=0.9)
    assert torch.equal(x0, y0)


def test_mixing_validation():
    net, sch = random_net(T=4)
    state = CoupledState(torch.zeros(1, 4, 4, dtype=torch.float64),
                         torch.zeros(1, 4, 4, dtype=torch.float64), 2)
    with pytest.raises(ConfigurationError):
        coupled_denoise_step(state, net, sch, p=1.5)
    with pytest.raises(ConfigurationError):
        coupled_denoise_step(state, net, sch, p=0.0)
    with pytest.raises(ConfigurationError):
        coupled_noise_step(state, net, sch, p=0.0)


def test_coupled_state_shape_contract():
    with pytest.raises(ContractViolation):
        CoupledState(torch.zeros(1, 4, 4), torch.zeros(1, 4, 5), 0)


# ---------------------------------------------------------------------------
# full transform
# ---------------------------------------------------------------------------

def test_round_trip_random_denoiser_double():
    net, sch = random_net(T=20, width=24)
    p = default_mixing_weight(sch.T)
    x0 = texture_image(32, 1, seed=11).double()
    latent = to_latent(x0, net, sch, p)
    assert latent.t == sch.T
    xr, yr = from_latent(latent, net, sch, p)
    assert (xr - x0).abs().max() <= 1e-8
    assert (yr - x0).abs().max() <= 1e-8


def test_zero_denoiser_latent_is_scaled_input():
    sch = NoiseSchedule([1.0, 0.5, 0.25, 1e-1])  # product of a_t = sqrt(1/0.1)
    x0 = torch.randn(1, 4, 4, dtype=torch.float64)
    latent = to_latent(x0, zero_denoiser, sch, p=1.0)
    gain = math.sqrt(sch.alpha[0] / sch.alpha[-1])
    assert torch.allclose(latent.x, x0 / gain, atol=1e-12)


def test_to_latent_rejects_non_finite():
    net, sch = random_net(T=4)
    bad = torch.full((1, 4, 4), float("nan"), dtype=torch.float64)
    with pytest.raises(ContractViolation):
        to_latent(bad, net, sch, p=0.9)


def test_from_latent_requires_terminal_state():
    net, sch = random_net(T=4)
    state = CoupledState(torch.zeros(1, 4, 4, dtype=torch.float64),
                         torch.zeros(1, 4, 4, dtype=torch.float64), 2)
    with pytest.raises(ContractViolation):
        from_latent(state, net, sch, p=0.9)


def test_round_trip_gradient_matches_finite_differences():
    net, sch = random_net(T=4, width=16)
    p = default_mixing_weight(sch.T)
    torch.manual_seed(3)
    x0 = (0.4 * torch.randn(1, 8, 8, dtype=torch.float64)).requires_grad_(True)
    w = torch.randn(1, 8, 8, dtype=torch.float64)

    def scalar_of(x):
        xr, yr = from_latent(to_latent(x, net, sch, p), net, sch, p)
        return (w * xr).sum() + 0.5 * (w * yr).sum()

    scalar_of(x0).backward()
    grad = x0.grad.clone()

    h = 1e-5
    rng = np.random.default_rng(0)
    for _ in range(6):
        i = int(rng.integers(0, 64))
        e = torch.zeros_like(x0)
        e.view(-1)[i] = 1.0
        with torch.no_grad():
            fd = (scalar_of(x0 + h * e) - scalar_of(x0 - h * e)) / (2 * h)
        rel = abs(float(fd) - float(grad.view(-1)[i])) / max(abs(float(fd)), 1e-9)
        assert rel <= 1e-3


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_train_denoiser_zero_steps_is_noop():
    sch = NoiseSchedule.geometric(4)
    images = texture_batch(4, 16, seed=0)
    torch.manual_seed(0)
    net = ConvDenoiser(channels=1, width=16, schedule=sch)
    before = {k: v.clone() for k, v in net.state_dict().items()}
    out = train_denoiser(images, sch, steps=0, net=net)
    assert out is net
    for k, v in out.state_dict().items():
        assert torch.equal(before[k], v)


def test_train_denoiser_empty_dataset():
    with pytest.raises(ConfigurationError):
        train_denoiser(torch.empty(0), NoiseSchedule.geometric(4), steps=10)


def test_train_denoiser_rejects_nonpositive_weighting():
    sch = NoiseSchedule.geometric(4)
    images = texture_batch(4, 16, seed=0)
    with pytest.raises(ConfigurationError):
        train_denoiser(images, sch, steps=1, weight_fn=lambda t: 0.0)


def test_train_denoiser_reduces_validation_loss():
    sch = NoiseSchedule.geometric(8)
    images = texture_batch(32, 16, seed=1)
    torch.manual_seed(0)
    fresh = ConvDenoiser(channels=1, width=16, schedule=sch)
    before = denoising_loss(fresh, images, sch, seed=5)
    net = train_denoiser(images, sch, steps=300, width=16, seed=0)
    after = denoising_loss(net, images, sch, seed=5)
    assert after < before


def test_train_denoiser_memorizes_single_image():
    sch = NoiseSchedule.geometric(8)
    images = texture_batch(1, 16, seed=2)
    net = train_denoiser(images, sch, steps=700, width=24, seed=0, lr=3e-3)
    # near-zero memorisation: the optimal estimate is exactly recoverable
    assert denoising_loss(net, images, sch, seed=6) < 0.1


def test_denoiser_checkpoint_round_trip(tmp_path):
    net, sch = random_net(T=4)
    path = tmp_path / "ckpt.pt"
    save_denoiser(net.float(), sch, path)
    loaded, loaded_sch = load_denoiser(path)
    x = torch.randn(1, 8, 8)
    assert torch.equal(loaded(x, 2), net.float()(x, 2))
    assert loaded_sch.T == sch.T
    assert np.allclose(loaded_sch.alpha, sch.alpha)


def test_denoiser_weighted_training_runs():
    sch = NoiseSchedule.geometric(4)
    images = texture_batch(4, 16, seed=3)
    net = train_denoiser(images, sch, steps=5, width=16, weight_fn=lambda t: 1.0 / t)
    assert isinstance(net, ConvDenoiser)
