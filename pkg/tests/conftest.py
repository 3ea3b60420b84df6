"""Shared fixtures; expensive trained artifacts are cached under tests/.cache."""

import os

import pytest
import torch

from latentmap import NoiseSchedule, load_denoiser, save_denoiser, train_denoiser
from latentmap.grids import gaussian_blur, texture_batch, texture_image
from latentmap.quality import load_cnn_scorer, save_cnn_scorer, train_cnn_scorer
from latentmap.grids import severity_ladder

CACHE_DIR = os.path.join(os.path.dirname(__file__), ".cache")

DENOISER_STEPS = 1800
SCORER_STEPS = 700


@pytest.fixture(scope="session")
def cache_dir():
    os.makedirs(CACHE_DIR, exist_ok=True)
    return CACHE_DIR


@pytest.fixture(scope="session")
def schedule20():
    return NoiseSchedule.geometric(20)


@pytest.fixture(scope="session")
def toy_images():
    return texture_batch(128, size=32, channels=1, seed=0)


@pytest.fixture(scope="session")
def trained_denoiser(cache_dir, schedule20, toy_images):
    """Toy denoiser trained on the 32x32 texture set (cached across runs)."""
    path = os.path.join(cache_dir, f"denoiser-s{DENOISER_STEPS}.pt")
    if os.path.exists(path):
        net, _ = load_denoiser(path)
        return net
    net = train_denoiser(toy_images, schedule20, steps=DENOISER_STEPS, seed=0,
                         log_every=600)
    save_denoiser(net, schedule20, path)
    return net


@pytest.fixture(scope="session")
def trained_denoiser64(trained_denoiser):
    net64 = load_or_copy_double(trained_denoiser)
    return net64


def load_or_copy_double(net):
    import copy

    return copy.deepcopy(net).double().eval()


def build_mos_dataset(n_clean=24, size=32, seed=7):
    """Distortion severity ladder over procedural images with 1..5 scores."""
    images, mos = [], []
    for i in range(n_clean):
        clean = texture_image(size, 1, seed=900 + seed + i)
        for kind in ("blur", "noise"):
            batch, scores = severity_ladder(clean, kind, (0.0, 0.25, 0.5, 0.75, 1.0), seed=i)
            images.extend(batch)
            mos.extend(scores)
    return images, mos


@pytest.fixture(scope="session")
def cnn_scorer(cache_dir):
    path = os.path.join(cache_dir, f"cnn-scorer-s{SCORER_STEPS}.pt")
    if os.path.exists(path):
        return load_cnn_scorer(path)
    images, mos = build_mos_dataset()
    net = train_cnn_scorer(images, mos, steps=SCORER_STEPS, seed=0)
    save_cnn_scorer(net, path)
    return net


@pytest.fixture(scope="session")
def cnn_scorer64(cnn_scorer):
    return load_or_copy_double(cnn_scorer)


@pytest.fixture()
def blurred_fixture():
    """One blurred 32x32 image used as an enhancement starting point."""
    return gaussian_blur(texture_image(32, 1, seed=101), 1.4).double()
