"""Differentiable no-reference quality scorers.

Every scorer maps an image grid to a finite scalar where higher means better
predicted quality, and is differentiable with respect to the image, so it can
serve as the prior term of a gradient-based enhancement objective.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigurationError, ContractViolation
from .calibration import CalibratedScorer, fit_logistic

__all__ = [
    "QualityScorer",
    "NegativeTotalVariation",
    "GradientSharpness",
    "CnnQualityScorer",
    "train_cnn_scorer",
    "save_cnn_scorer",
    "load_cnn_scorer",
    "get_scorer",
]


class QualityScorer:
    """Interface: identifier, score range, and a differentiable score(x)."""

    identifier: str = "scorer"
    score_range: tuple[float, float] = (float("-inf"), float("inf"))

    def score(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise ContractViolation("scorer input contains non-finite values")
        return self.score(x)

    def calibrate(self, images, targets=None) -> CalibratedScorer:
        """Fit a logistic rescaling on a calibration set (targets optional)."""
        with torch.no_grad():
            scores = [float(self.score(img)) for img in images]
        return CalibratedScorer(self, fit_logistic(scores, targets))


class NegativeTotalVariation(QualityScorer):
    """Negative mean squared local variation; constant images score 0 (the max)."""

    identifier = "neg-tv"
    score_range = (float("-inf"), 0.0)

    def score(self, x: torch.Tensor) -> torch.Tensor:
        dx = x[..., :, 1:] - x[..., :, :-1]
        dy = x[..., 1:, :] - x[..., :-1, :]
        return -(dx.pow(2).mean() + dy.pow(2).mean())


class GradientSharpness(QualityScorer):
    """Mean gradient energy; blur strictly lowers it."""

    identifier = "sharpness"
    score_range = (0.0, float("inf"))

    def score(self, x: torch.Tensor) -> torch.Tensor:
        dx = x[..., :, 1:] - x[..., :, :-1]
        dy = x[..., 1:, :] - x[..., :-1, :]
        return dx.pow(2).mean() + dy.pow(2).mean()


class CnnQualityScorer(QualityScorer, nn.Module):
    """Small smooth CNN regressor onto the 1..5 opinion scale.

    The penultimate layer doubles as an embedding for semantic distances.
    """

    identifier = "cnn"
    score_range = (1.0, 5.0)

    def __init__(self, channels: int = 1, width: int = 32, embed_dim: int = 32):
        nn.Module.__init__(self)
        self.channels = channels
        self.width = width
        self.embed_dim = embed_dim
        self.conv1 = nn.Conv2d(channels, width // 2, 3, padding=1)
        self.conv2 = nn.Conv2d(width // 2, width, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(width, width, 3, padding=1)
        self.fc_embed = nn.Linear(width, embed_dim)
        self.fc_out = nn.Linear(embed_dim, 1)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate-layer embedding of shape (embed_dim,) (or batched)."""
        batched = x.dim() == 4
        h = x if batched else x[None]
        h = F.silu(self.conv1(h))
        h = F.silu(self.conv2(h))
        h = F.silu(self.conv3(h))
        h = h.mean(dim=(2, 3))
        h = F.silu(self.fc_embed(h))
        return h if batched else h[0]

    def score(self, x: torch.Tensor) -> torch.Tensor:
        z = self.fc_out(self.embed(x))
        return (3.0 + 2.0 * torch.tanh(z)).squeeze(-1)

    def __call__(self, x: torch.Tensor) -> torch.Tensor:  # nn.Module overrides it
        return QualityScorer.__call__(self, x)


def train_cnn_scorer(images, mos, *, steps: int = 800, batch_size: int = 16,
                     lr: float = 2e-3, seed: int = 0, channels: int | None = None,
                     net: CnnQualityScorer | None = None) -> CnnQualityScorer:
    """Fit the CNN scorer to opinion scores by mean squared error."""
    if len(images) == 0:
        raise ConfigurationError("scorer training set is empty")
    stack = torch.stack(list(images))
    targets = torch.as_tensor([float(m) for m in mos], dtype=stack.dtype)
    if targets.shape[0] != stack.shape[0]:
        raise ConfigurationError("images and opinion scores must align")
    if net is None:
        torch.manual_seed(seed)
        net = CnnQualityScorer(channels=channels or stack.shape[1])
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    g = torch.Generator().manual_seed(seed)
    for _ in range(steps):
        idx = torch.randint(0, stack.shape[0], (batch_size,), generator=g)
        pred = net.score(stack[idx])
        loss = F.mse_loss(pred, targets[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return net


def save_cnn_scorer(net: CnnQualityScorer, path) -> None:
    torch.save(
        {
            "kind": "latentmap-cnn-scorer",
            "version": 1,
            "channels": net.channels,
            "width": net.width,
            "embed_dim": net.embed_dim,
            "state_dict": net.state_dict(),
        },
        path,
    )


def load_cnn_scorer(path) -> CnnQualityScorer:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "latentmap-cnn-scorer":
        raise ConfigurationError(f"{path} is not a CNN scorer checkpoint")
    net = CnnQualityScorer(blob["channels"], blob["width"], blob["embed_dim"])
    net.load_state_dict(blob["state_dict"])
    net.eval()
    return net


def get_scorer(name: str, checkpoint=None) -> QualityScorer:
    """Scorer registry used by the command-line tools."""
    if name == "neg-tv":
        return NegativeTotalVariation()
    if name == "sharpness":
        return GradientSharpness()
    if name == "cnn":
        if checkpoint is None:
            raise ConfigurationError("the cnn scorer needs a --scorer-checkpoint")
        return load_cnn_scorer(checkpoint)
    raise ConfigurationError(f"unknown scorer {name!r} (choose neg-tv, sharpness, cnn)")
