"""Image grids: [-1, 1] float tensors, PNG round-trip, synthetic desk-scale data.

An image grid is a torch tensor of shape (C, H, W) with values in [-1, 1],
C in {1, 3}.  All procedural generators are deterministic given their seed.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ContractViolation

__all__ = [
    "load_png",
    "save_png",
    "resize",
    "downsample",
    "gaussian_blur",
    "add_white_noise",
    "block_artifacts",
    "distort",
    "texture_image",
    "texture_batch",
    "severity_ladder",
]


def check_grid(x: torch.Tensor, name: str = "image") -> torch.Tensor:
    if x.dim() != 3:
        raise ContractViolation(f"{name} must have shape (C, H, W), got {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ContractViolation(f"{name} contains non-finite values")
    return x


# ---------------------------------------------------------------------------
# PNG round trip: 8-bit [0, 255] <-> [-1, 1], linear
# ---------------------------------------------------------------------------

def load_png(path, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    img = Image.open(path)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0 * 2.0 - 1.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(arr).to(dtype)


def save_png(x: torch.Tensor, path) -> None:
    check_grid(x)
    arr = ((x.detach().cpu().numpy() + 1.0) / 2.0 * 255.0).round().clip(0, 255).astype(np.uint8)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    elif arr.shape[0] == 3:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        raise ContractViolation(f"cannot save {arr.shape[0]}-channel image as PNG")


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def resize(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bicubic resize to (H, W); antialiased when shrinking."""
    check_grid(x)
    shrink = size[0] < x.shape[-2] or size[1] < x.shape[-1]
    return F.interpolate(
        x[None], size=size, mode="bicubic", antialias=shrink, align_corners=False
    )[0]


def downsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Antialiased bicubic downsampling by an integer factor (1 = identity)."""
    if factor == 1:
        return x
    h, w = x.shape[-2:]
    return resize(x, (max(1, h // factor), max(1, w // factor)))


# ---------------------------------------------------------------------------
# Synthetic distortions
# ---------------------------------------------------------------------------

def gaussian_blur(x: torch.Tensor, sigma: float) -> torch.Tensor:
    if sigma <= 0:
        return x.clone()
    k = int(2 * math.ceil(2 * sigma) + 1)
    ax = torch.arange(k, dtype=x.dtype) - k // 2
    g = torch.exp(-0.5 * (ax / sigma) ** 2)
    g = g / g.sum()
    kernel = (g[:, None] * g[None, :]).expand(x.shape[0], 1, k, k)
    pad = k // 2
    out = F.conv2d(F.pad(x[None], (pad,) * 4, mode="reflect"), kernel, groups=x.shape[0])
    return out[0]


def add_white_noise(x: torch.Tensor, sigma: float, seed: int = 0) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    noise = torch.randn(x.shape, generator=g, dtype=x.dtype)
    return (x + sigma * noise).clamp(-1, 1)


def block_artifacts(x: torch.Tensor, block: int = 4, strength: float = 0.5) -> torch.Tensor:
    """Blend each block x block tile toward its mean (JPEG-ish blocking)."""
    c, h, w = x.shape
    hh, ww = h - h % block, w - w % block
    tiles = x[:, :hh, :ww].reshape(c, hh // block, block, ww // block, block)
    means = tiles.mean(dim=(2, 4), keepdim=True).expand_as(tiles)
    out = x.clone()
    out[:, :hh, :ww] = ((1 - strength) * tiles + strength * means).reshape(c, hh, ww)
    return out


def distort(x: torch.Tensor, kind: str, severity: float, seed: int = 0) -> torch.Tensor:
    """Apply one named distortion at severity in [0, 1]."""
    if not 0.0 <= severity <= 1.0:
        raise ContractViolation(f"severity must be in [0, 1], got {severity}")
    if kind == "blur":
        return gaussian_blur(x, sigma=2.5 * severity)
    if kind == "noise":
        return add_white_noise(x, sigma=0.5 * severity, seed=seed)
    if kind == "block":
        return block_artifacts(x, block=4, strength=severity)
    raise ContractViolation(f"unknown distortion kind {kind!r}")


DISTORTION_KINDS = ("blur", "noise", "block")


# ---------------------------------------------------------------------------
# Procedural content
# ---------------------------------------------------------------------------

def texture_image(size: int = 32, channels: int = 1, seed: int = 0,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """One textured toy image: tinted base, shapes, strokes, grating, speckle."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    planes = []
    base_tint = rng.uniform(-0.15, 0.15, channels)
    shared = np.zeros((size, size))
    for _ in range(rng.integers(1, 3)):
        cx, cy = rng.uniform(0.2, 0.8, 2)
        r = rng.uniform(0.12, 0.3)
        mask = ((xx - cx) ** 2 + (yy - cy) ** 2) < r ** 2
        shared = shared + mask * rng.uniform(-0.25, 0.25)
    for _ in range(rng.integers(1, 4)):
        ang = rng.uniform(0, math.pi)
        c = rng.uniform(0.1, 0.9)
        d = np.cos(ang) * xx + np.sin(ang) * yy - c
        width = rng.uniform(0.02, 0.05)
        shared = shared + rng.uniform(0.2, 0.5) * rng.choice([-1.0, 1.0]) * np.exp(
            -0.5 * (d / width) ** 2
        )
    fx, fy = rng.uniform(4, 10, 2)
    phase = rng.uniform(0, 2 * math.pi)
    shared = shared + rng.uniform(0.15, 0.35) * np.sin(2 * math.pi * (fx * xx + fy * yy) + phase)
    for ch in range(channels):
        plane = base_tint[ch] + shared + 0.12 * rng.standard_normal((size, size))
        planes.append(np.clip(plane, -1, 1))
    return torch.from_numpy(np.stack(planes)).to(dtype)


def texture_batch(n: int, size: int = 32, channels: int = 1, seed: int = 0,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Stack of n texture images with per-image derived seeds, shape (n, C, H, W)."""
    return torch.stack([texture_image(size, channels, seed * 100003 + i, dtype) for i in range(n)])


def severity_ladder(clean: torch.Tensor, kind: str, severities, seed: int = 0):
    """Distorted variants plus MOS values on a 1..5 scale (5 = undistorted)."""
    images, mos = [], []
    for i, s in enumerate(severities):
        images.append(distort(clean, kind, s, seed=seed + i))
        mos.append(5.0 - 4.0 * float(s))
    return images, mos
