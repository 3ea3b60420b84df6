"""Multi-scale pairwise-ranked quality model.

A three-level image pyramid is cropped into fixed-size patches; an image
encoder embeds the crops and a learned table of per-level embeddings plays
the role of textual quality anchors ("bad" .. "perfect").  Mean cosine
similarity over crops gives per-level logits, a temperature softmax turns
them into level probabilities, and the expected level is the quality score.
Training ranks image pairs drawn within a dataset under a Thurstone-style
win probability and the fidelity loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigurationError, ContractViolation
from ..grids import resize

__all__ = [
    "QUALITY_LEVELS",
    "PyramidConfig",
    "build_pyramid",
    "sample_crops",
    "MultiScaleQualityModel",
    "mean_cosine_logits",
    "pairwise_label",
    "pairwise_win_prob",
    "fidelity_loss",
    "sample_ranking_pairs",
    "RankedPair",
    "pair_ranking_accuracy",
    "train_quality_ranker",
    "save_quality_ranker",
    "load_quality_ranker",
]

QUALITY_LEVELS = ("bad", "poor", "fair", "good", "perfect")


@dataclass(frozen=True)
class PyramidConfig:
    """Three-level pyramid: original, x0.75, and shortest-side-B; B x B crops."""

    base_size: int = 32
    mid_scale: float = 0.75
    levels: int = 3
    crops_per_level: int = 3
    seed: int = 0


def _scaled_size(h: int, w: int, scale: float) -> tuple[int, int]:
    return max(1, round(h * scale)), max(1, round(w * scale))


def build_pyramid(x: torch.Tensor, cfg: PyramidConfig) -> list[torch.Tensor]:
    """Pyramid levels with non-increasing resolution, never below the crop size."""
    h, w = x.shape[-2:]
    short = min(h, w)
    if short < cfg.base_size:
        raise ContractViolation(
            f"shortest side {short} is below the base size {cfg.base_size}"
        )
    top_scale = cfg.base_size / short
    mid_scale = max(cfg.mid_scale, top_scale)
    levels = [x]
    for scale in (mid_scale, top_scale):
        size = _scaled_size(h, w, scale)
        levels.append(resize(x, size) if size != (h, w) else x)
    return levels


def sample_crops(x: torch.Tensor, cfg: PyramidConfig) -> torch.Tensor:
    """Deterministic seeded crop grid over all pyramid levels, shape (U, C, B, B)."""
    if cfg.crops_per_level < 1:
        raise ConfigurationError("need at least one crop per level")
    rng = np.random.default_rng(cfg.seed)
    crops = []
    for level in build_pyramid(x, cfg):
        h, w = level.shape[-2:]
        for _ in range(cfg.crops_per_level):
            top = int(rng.integers(0, h - cfg.base_size + 1))
            left = int(rng.integers(0, w - cfg.base_size + 1))
            crops.append(level[:, top:top + cfg.base_size, left:left + cfg.base_size])
    return torch.stack(crops)


def mean_cosine_logits(crop_embeds: torch.Tensor, level_embeds: torch.Tensor) -> torch.Tensor:
    """Mean over crops of cosine similarity to each level embedding, in [-1, 1]."""
    if crop_embeds.shape[0] < 1:
        raise ConfigurationError("need at least one crop embedding")
    f = F.normalize(crop_embeds, dim=-1)
    g = F.normalize(level_embeds, dim=-1)
    return (f @ g.T).mean(dim=0)


class CropEncoder(nn.Module):
    """Smooth CNN mapping a B x B crop to an embedding."""

    def __init__(self, channels: int, width: int, embed_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, width // 2, 3, padding=1)
        self.conv2 = nn.Conv2d(width // 2, width, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(width, width, 3, padding=1)
        self.fc = nn.Linear(width, embed_dim)

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(crops))
        h = F.silu(self.conv2(h))
        h = F.silu(self.conv3(h))
        return self.fc(h.mean(dim=(2, 3)))


class MultiScaleQualityModel(nn.Module):
    """Crop encoder + learned level-embedding table + temperature softmax."""

    def __init__(self, channels: int = 1, width: int = 32, embed_dim: int = 32,
                 n_levels: int = len(QUALITY_LEVELS), tau: float = 0.3,
                 pyramid: PyramidConfig | None = None):
        super().__init__()
        if tau <= 0:
            raise ConfigurationError(f"temperature must be positive, got {tau}")
        self.channels = channels
        self.width = width
        self.embed_dim = embed_dim
        self.n_levels = n_levels
        self.pyramid = pyramid or PyramidConfig()
        self.encoder = CropEncoder(channels, width, embed_dim)
        self.level_embeds = nn.Parameter(torch.randn(n_levels, embed_dim) * 0.5)
        self.log_tau = nn.Parameter(torch.tensor(math.log(tau)))

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp()

    def level_logits(self, x: torch.Tensor) -> torch.Tensor:
        crops = sample_crops(x, self.pyramid)
        return mean_cosine_logits(self.encoder(crops), self.level_embeds)

    def level_probs(self, x: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.level_logits(x) / self.tau, dim=-1)

    def expected_quality(self, x: torch.Tensor) -> torch.Tensor:
        """Probability-weighted mean level, a scalar in [1, n_levels]."""
        probs = self.level_probs(x)
        levels = torch.arange(1, self.n_levels + 1, dtype=probs.dtype)
        return (probs * levels).sum()

    # scorer-style interface so the model plugs into the enhancement solver
    identifier = "multiscale-ranked"

    @property
    def score_range(self) -> tuple[float, float]:
        return (1.0, float(self.n_levels))

    def score(self, x: torch.Tensor) -> torch.Tensor:
        return self.expected_quality(x)

    def calibrate(self, images, targets=None):
        from .scorers import QualityScorer

        return QualityScorer.calibrate(self, images, targets)


def pairwise_label(q_x: float, q_y: float) -> int:
    """Binary ranking label from ground-truth opinion scores: 1 iff q_x >= q_y."""
    if not (math.isfinite(q_x) and math.isfinite(q_y)):
        raise ContractViolation("opinion scores must be finite")
    return 1 if q_x >= q_y else 0


def pairwise_win_prob(qx_hat, qy_hat):
    """Thurstone win probability Phi((qx_hat - qy_hat) / sqrt(2))."""
    diff = qx_hat - qy_hat
    if torch.is_tensor(diff):
        return torch.special.ndtr(diff / math.sqrt(2.0))
    from scipy.stats import norm

    return float(norm.cdf(diff / math.sqrt(2.0)))


def fidelity_loss(p, p_hat):
    """1 - sqrt(p * p_hat) - sqrt((1 - p)(1 - p_hat)), in [0, 1].

    For binary p only the active branch is evaluated, so autograd through the
    inactive sqrt(0) cannot poison the gradient.
    """
    p_val = float(p)
    if torch.is_tensor(p_hat):
        if bool((p_hat < 0).any()) or bool((p_hat > 1).any()):
            raise ContractViolation("predicted probability outside [0, 1]")
        if p_val == 1.0:
            return 1.0 - p_hat.sqrt()
        if p_val == 0.0:
            return 1.0 - (1.0 - p_hat).sqrt()
        return 1.0 - (p_val * p_hat).sqrt() - ((1 - p_val) * (1 - p_hat)).sqrt()
    if not 0.0 <= p_hat <= 1.0:
        raise ContractViolation("predicted probability outside [0, 1]")
    return 1.0 - math.sqrt(p_val * p_hat) - math.sqrt((1 - p_val) * (1 - p_hat))


@dataclass(frozen=True)
class RankedPair:
    """A training pair; both images must come from the same dataset."""

    dataset: int
    i: int
    j: int
    label: int = field(default=1)

    @staticmethod
    def across(dataset_i: int, i: int, dataset_j: int, j: int, label: int) -> "RankedPair":
        if dataset_i != dataset_j:
            raise ContractViolation(
                "ranking pairs must stay within one dataset; opinion scales are incomparable"
            )
        return RankedPair(dataset_i, i, j, label)


def sample_ranking_pairs(datasets, n_pairs: int, seed: int = 0) -> list[RankedPair]:
    """Within-dataset pairs with labels from the datasets' opinion scores."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        d = int(rng.integers(0, len(datasets)))
        images, mos = datasets[d]
        i, j = rng.choice(len(images), size=2, replace=False)
        pairs.append(RankedPair.across(d, int(i), d, int(j), pairwise_label(mos[i], mos[j])))
    return pairs


def pair_ranking_accuracy(model: MultiScaleQualityModel, datasets, pairs) -> float:
    """Fraction of pairs whose predicted order matches the label."""
    hits = 0
    with torch.no_grad():
        for pair in pairs:
            images, _ = datasets[pair.dataset]
            qx = float(model.expected_quality(images[pair.i]))
            qy = float(model.expected_quality(images[pair.j]))
            hits += int((qx >= qy) == bool(pair.label))
    return hits / len(pairs)


def train_quality_ranker(datasets, *, steps: int = 1200, pairs_per_step: int = 8,
                         lr: float = 3e-3, weight_decay: float = 1e-3, seed: int = 0,
                         model: MultiScaleQualityModel | None = None,
                         pyramid: PyramidConfig | None = None,
                         log_every: int | None = None) -> MultiScaleQualityModel:
    """Pairwise learning-to-rank across datasets (pairs never cross datasets).

    AdamW with decoupled weight decay and cosine-annealed learning rate; the
    loss is the fidelity between binary labels and Thurstone win probabilities.
    """
    if len(datasets) < 2:
        raise ConfigurationError("need at least two desk-scale datasets")
    channels = datasets[0][0][0].shape[0]
    if model is None:
        torch.manual_seed(seed)
        model = MultiScaleQualityModel(channels=channels, pyramid=pyramid)
    if steps == 0:
        return model
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps)
    rng_seed = seed
    for step in range(steps):
        pairs = sample_ranking_pairs(datasets, pairs_per_step, seed=rng_seed + step)
        loss = 0.0
        for pair in pairs:
            images, _ = datasets[pair.dataset]
            qx = model.expected_quality(images[pair.i])
            qy = model.expected_quality(images[pair.j])
            # clamp away the saturated CDF tails where the loss slope is infinite
            win = pairwise_win_prob(qx, qy).clamp(1e-6, 1 - 1e-6)
            loss = loss + fidelity_loss(pair.label, win)
        loss = loss / len(pairs)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if log_every and (step % log_every == 0 or step == steps - 1):
            print(f"ranker step {step}: fidelity loss {float(loss):.4f}")
    model.eval()
    return model


def save_quality_ranker(model: MultiScaleQualityModel, path) -> None:
    torch.save(
        {
            "kind": "latentmap-quality-ranker",
            "version": 1,
            "channels": model.channels,
            "width": model.width,
            "embed_dim": model.embed_dim,
            "n_levels": model.n_levels,
            "pyramid": vars(model.pyramid) if not isinstance(model.pyramid, dict) else model.pyramid,
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_quality_ranker(path) -> MultiScaleQualityModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "latentmap-quality-ranker":
        raise ConfigurationError(f"{path} is not a quality-ranker checkpoint")
    pyramid = PyramidConfig(**blob["pyramid"]) if isinstance(blob["pyramid"], dict) else blob["pyramid"]
    model = MultiScaleQualityModel(
        channels=blob["channels"], width=blob["width"], embed_dim=blob["embed_dim"],
        n_levels=blob["n_levels"], pyramid=pyramid,
    )
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
