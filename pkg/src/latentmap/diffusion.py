"""Invertible coupled diffusion transform and its toy denoiser.

The forward noising model perturbs a clean grid x0 at step t as

    x_t = sqrt(alpha_t) * x0 + sqrt(1 - alpha_t) * eps,

with a cumulative noise schedule alpha_0 = 1 > alpha_1 > ... > alpha_T.
Deterministic denoising follows x_{t-1} = a_t x_t + b_t eps_hat(x_t; t) with

    a_t = sqrt(alpha_{t-1} / alpha_t)
    b_t = -sqrt(alpha_{t-1} (1 - alpha_t) / alpha_t) + sqrt(1 - alpha_{t-1}).

Exact invertibility comes from tracking a coupled pair (x, y) and alternating
the denoiser between the branches with an affine mixing step (EDICT-style
coupling), so every denoise step has a closed-form algebraic inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ContractViolation

__all__ = [
    "NoiseSchedule",
    "CoupledState",
    "ConvDenoiser",
    "default_mixing_weight",
    "add_noise",
    "ddim_step",
    "coupled_denoise_step",
    "coupled_noise_step",
    "to_latent",
    "from_latent",
    "denoising_loss",
    "train_denoiser",
    "save_denoiser",
    "load_denoiser",
]

ALPHA_FLOOR = 1e-4

# eps_hat(x, t) -> same-shape noise estimate; t is the integer step index
DenoiserFn = Callable[[torch.Tensor, int], torch.Tensor]


def default_mixing_weight(T: int) -> float:
    """Mixing weight that keeps the coupled branches close: 0.93 ** (50 / T)."""
    return 0.93 ** (50.0 / T)


class NoiseSchedule:
    """Cumulative noise levels alpha_0..alpha_T and derived step coefficients."""

    def __init__(self, alphas: Sequence[float]):
        alphas = np.asarray(alphas, dtype=np.float64)
        if alphas.ndim != 1 or len(alphas) < 2:
            raise ConfigurationError("schedule needs alpha_0..alpha_T with T >= 1")
        if abs(alphas[0] - 1.0) > 1e-12:
            raise ConfigurationError(f"alpha_0 must be 1, got {alphas[0]}")
        if not (np.diff(alphas) < 0).all():
            raise ConfigurationError("alpha must be strictly decreasing")
        if alphas[-1] < ALPHA_FLOOR - 1e-15:
            raise ConfigurationError(f"alpha_T must stay above the {ALPHA_FLOOR} floor")
        self.alpha = alphas
        self.T = len(alphas) - 1

    @classmethod
    def geometric(cls, T: int, alpha_min: float = ALPHA_FLOOR) -> "NoiseSchedule":
        """Log-uniform alphas; every step shares the ratio alpha_{t-1}/alpha_t."""
        return cls(np.exp(np.linspace(0.0, math.log(alpha_min), T + 1)))

    @classmethod
    def linear(cls, T: int, alpha_min: float = ALPHA_FLOOR) -> "NoiseSchedule":
        """Alphas linear in t (linear-in-variance); the last ratio is large."""
        return cls(np.linspace(1.0, alpha_min, T + 1))

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ContractViolation(f"step index t={t} outside 1..{self.T}")

    def a(self, t: int) -> float:
        self._check_t(t)
        return math.sqrt(self.alpha[t - 1] / self.alpha[t])

    def b(self, t: int) -> float:
        self._check_t(t)
        prev, cur = self.alpha[t - 1], self.alpha[t]
        return -math.sqrt(prev * (1.0 - cur) / cur) + math.sqrt(1.0 - prev)

    def sigma_inv(self) -> list[float]:
        """1 / sqrt(1 - alpha_t) for t = 0..T (entry 0 is unused, stored as 0)."""
        return [0.0] + [1.0 / math.sqrt(1.0 - self.alpha[t]) for t in range(1, self.T + 1)]

    def to_config(self) -> dict:
        return {"T": self.T, "alpha": [float(a) for a in self.alpha]}

    @classmethod
    def from_config(cls, cfg: dict) -> "NoiseSchedule":
        return cls(cfg["alpha"])


@dataclass
class CoupledState:
    """The coupled pair tracked by the invertible transform."""

    x: torch.Tensor
    y: torch.Tensor
    t: int

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise ContractViolation(
                f"coupled branches must share a shape, got {tuple(self.x.shape)} vs {tuple(self.y.shape)}"
            )


def _check_mixing(p: float) -> None:
    if not 0.0 < p <= 1.0:
        raise ConfigurationError(f"mixing weight p must be in (0, 1], got {p}")


def add_noise(x0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Forward perturbation sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps."""
    if x0.shape != eps.shape:
        raise ContractViolation(f"noise shape {tuple(eps.shape)} != image shape {tuple(x0.shape)}")
    if not 0 <= t <= schedule.T:
        raise ContractViolation(f"step index t={t} outside 0..{schedule.T}")
    at = schedule.alpha[t]
    return math.sqrt(at) * x0 + math.sqrt(1.0 - at) * eps


def ddim_step(xt: torch.Tensor, t: int, denoiser: DenoiserFn, schedule: NoiseSchedule) -> torch.Tensor:
    """Single deterministic denoising step a_t x_t + b_t eps_hat(x_t; t)."""
    return schedule.a(t) * xt + schedule.b(t) * denoiser(xt, t)


def coupled_denoise_step(state: CoupledState, denoiser: DenoiserFn,
                         schedule: NoiseSchedule, p: float) -> CoupledState:
    """One coupled denoise step t -> t-1: two alternated updates, then mixing."""
    _check_mixing(p)
    t = state.t
    a, b = schedule.a(t), schedule.b(t)
    x_mid = a * state.x + b * denoiser(state.y, t)
    y_mid = a * state.y + b * denoiser(x_mid, t)
    x_next = p * x_mid + (1.0 - p) * y_mid
    y_next = p * y_mid + (1.0 - p) * x_next
    return CoupledState(x_next, y_next, t - 1)


def coupled_noise_step(state: CoupledState, denoiser: DenoiserFn,
                       schedule: NoiseSchedule, p: float) -> CoupledState:
    """Algebraic inverse of :func:`coupled_denoise_step` at step t+1."""
    if p == 0:
        raise ConfigurationError("mixing weight p = 0 would divide by zero")
    _check_mixing(p)
    t = state.t + 1
    a, b = schedule.a(t), schedule.b(t)
    y_mid = (state.y - (1.0 - p) * state.x) / p
    x_mid = (state.x - (1.0 - p) * y_mid) / p
    y_prev = (y_mid - b * denoiser(x_mid, t)) / a
    x_prev = (x_mid - b * denoiser(y_prev, t)) / a
    return CoupledState(x_prev, y_prev, t)


def to_latent(x0: torch.Tensor, denoiser: DenoiserFn, schedule: NoiseSchedule,
              p: float) -> CoupledState:
    """Deterministically noise an image into its coupled latent at t = T."""
    if not torch.isfinite(x0).all():
        raise ContractViolation("input image contains non-finite values")
    state = CoupledState(x0, x0, 0)
    for _ in range(schedule.T):
        state = coupled_noise_step(state, denoiser, schedule, p)
    return state


def from_latent(state: CoupledState, denoiser: DenoiserFn, schedule: NoiseSchedule,
                p: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Decode a coupled latent at t = T back to the image pair at t = 0."""
    if state.t != schedule.T:
        raise ContractViolation(f"latent state is at t={state.t}, expected t={schedule.T}")
    for _ in range(schedule.T):
        state = coupled_denoise_step(state, denoiser, schedule, p)
    return state.x, state.y


# ---------------------------------------------------------------------------
# Denoiser network
# ---------------------------------------------------------------------------

class SinusoidalTimeEmbedding(nn.Module):
    def __init__(self, dim: int = 32, out: int = 48):
        super().__init__()
        self.dim = dim
        self.proj = nn.Sequential(nn.Linear(dim, out), nn.SiLU(), nn.Linear(out, out))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        dtype = self.proj[0].weight.dtype
        freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=dtype, device=t.device) / half)
        ang = t.to(dtype)[:, None] * freqs[None, :]
        return self.proj(torch.cat([torch.sin(ang), torch.cos(ang)], dim=1))


class ConvDenoiser(nn.Module):
    """Small encoder-decoder noise predictor with a scaled-identity skeleton.

    The prediction is gate(t) * x / sqrt(1 - alpha_t) + f(x, t): at high noise
    the optimal estimate is dominated by the rescaled input, so the conv body
    f only has to model the data-dependent correction.  The output conv is
    zero-initialised, which keeps the untrained transform well conditioned.
    """

    def __init__(self, channels: int = 1, width: int = 48, schedule: NoiseSchedule | None = None,
                 sigma_inv: Sequence[float] | None = None):
        super().__init__()
        if sigma_inv is None:
            if schedule is None:
                raise ConfigurationError("ConvDenoiser needs a schedule or a sigma_inv table")
            sigma_inv = schedule.sigma_inv()
        self.channels = channels
        self.width = width
        self.register_buffer("sigma_inv_table", torch.tensor(sigma_inv, dtype=torch.float64))
        self.temb = SinusoidalTimeEmbedding(32, width)
        self.gate = nn.Linear(width, 1)
        nn.init.zeros_(self.gate.weight)
        nn.init.zeros_(self.gate.bias)
        self.enc1 = nn.Conv2d(channels, width // 2, 3, padding=1)
        self.enc2 = nn.Conv2d(width // 2, width, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(width, width, 3, padding=1)
        self.up = nn.Conv2d(width, width // 2, 3, padding=1)
        self.out = nn.Conv2d(width, channels, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        if x.dim() == 3:
            t_b = torch.as_tensor([int(t)], device=x.device)
            return self.forward(x[None], t_b)[0]
        if not torch.is_tensor(t):
            t = torch.as_tensor([int(t)] * x.shape[0], device=x.device)
        emb = self.temb(t).to(x.dtype)
        scale = self.sigma_inv_table.to(x.dtype)[t][:, None, None, None]
        gate = scale * (1.0 + self.gate(emb)[:, :, None, None])
        h1 = F.silu(self.enc1(x))
        h2 = F.silu(self.enc2(h1))
        h = F.silu(self.mid(h2) + emb[:, :, None, None])
        h = F.interpolate(h, size=h1.shape[-2:], mode="bilinear", align_corners=False)
        h = F.silu(self.up(h))
        return gate * x + self.out(torch.cat([h, h1], dim=1))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def denoising_loss(net: nn.Module, images: torch.Tensor, schedule: NoiseSchedule,
                   seed: int = 0, weight_fn: Callable[[int], float] | None = None) -> float:
    """Mean weighted noise-prediction error on a fixed seeded batch."""
    g = torch.Generator().manual_seed(seed)
    t = torch.randint(1, schedule.T + 1, (images.shape[0],), generator=g)
    eps = torch.randn(images.shape, generator=g, dtype=images.dtype)
    at = torch.as_tensor(schedule.alpha[t.numpy()], dtype=images.dtype)[:, None, None, None]
    xt = at.sqrt() * images + (1 - at).sqrt() * eps
    with torch.no_grad():
        err = (net(xt, t) - eps) ** 2
    if weight_fn is not None:
        w = torch.as_tensor([weight_fn(int(ti)) for ti in t], dtype=images.dtype)
        err = err * w[:, None, None, None]
    return float(err.mean())


def train_denoiser(images: torch.Tensor, schedule: NoiseSchedule, *,
                   steps: int = 2500, batch_size: int = 32, lr: float = 2e-3,
                   weight_fn: Callable[[int], float] | None = None,
                   width: int = 48, seed: int = 0,
                   net: ConvDenoiser | None = None,
                   log_every: int | None = None) -> ConvDenoiser:
    """Fit the noise predictor by minimising E[w(t) ||eps - eps_hat(x_t; t)||^2].

    With steps = 0 the (possibly provided) network is returned untouched.
    """
    if not torch.is_tensor(images):
        images = torch.stack(list(images)) if len(images) else torch.empty(0)
    if images.numel() == 0:
        raise ConfigurationError("training dataset is empty")
    if net is None:
        torch.manual_seed(seed)
        net = ConvDenoiser(channels=images.shape[1], width=width, schedule=schedule)
    if steps == 0:
        return net
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    g = torch.Generator().manual_seed(seed)
    for i in range(steps):
        idx = torch.randint(0, images.shape[0], (batch_size,), generator=g)
        x0 = images[idx]
        t = torch.randint(1, schedule.T + 1, (batch_size,), generator=g)
        eps = torch.randn(x0.shape, generator=g, dtype=x0.dtype)
        at = torch.as_tensor(schedule.alpha[t.numpy()], dtype=x0.dtype)[:, None, None, None]
        xt = at.sqrt() * x0 + (1 - at).sqrt() * eps
        err = (net(xt, t) - eps) ** 2
        if weight_fn is not None:
            w = torch.as_tensor([weight_fn(int(ti)) for ti in t], dtype=x0.dtype)
            if (w <= 0).any():
                raise ConfigurationError("step weighting must be positive")
            err = err * w[:, None, None, None]
        loss = err.mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_every and (i % log_every == 0 or i == steps - 1):
            print(f"denoiser step {i}: loss {loss.item():.4f}")
    net.eval()
    return net


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_denoiser(net: ConvDenoiser, schedule: NoiseSchedule, path) -> None:
    torch.save(
        {
            "kind": "latentmap-denoiser",
            "version": 1,
            "channels": net.channels,
            "width": net.width,
            "schedule": schedule.to_config(),
            "state_dict": net.state_dict(),
        },
        path,
    )


def load_denoiser(path) -> tuple[ConvDenoiser, NoiseSchedule]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "latentmap-denoiser":
        raise ConfigurationError(f"{path} is not a denoiser checkpoint")
    schedule = NoiseSchedule.from_config(blob["schedule"])
    net = ConvDenoiser(channels=blob["channels"], width=blob["width"], schedule=schedule)
    net.load_state_dict(blob["state_dict"])
    net.eval()
    return net, schedule
