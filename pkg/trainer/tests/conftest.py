"""Shared fixtures: a synthetic periodic texture folder and two trained
sessions (a short smoke run and a longer run for distribution checks)."""

import numpy as np
import pytest
from PIL import Image

from psgan_trainer import ModelConfig, TrainConfig, train


def make_checker_texture(seed: int = 0, size: int = 256) -> np.ndarray:
    """Noisy 8-pixel checkerboard, (3, size, size) float32 in [-1, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.indices((size, size))
    checker = (((yy // 8 + xx // 8) % 2) * 2 - 1) * 0.7
    img = np.stack([checker, checker * 0.8, -checker * 0.5])
    return (img + rng.normal(0, 0.05, img.shape)).astype(np.float32)


@pytest.fixture(scope="session")
def texture_folder(tmp_path_factory):
    folder = tmp_path_factory.mktemp("textures")
    img = make_checker_texture()
    px = np.clip((img.transpose(1, 2, 0) + 1) * 127.5, 0, 255).astype(np.uint8)
    Image.fromarray(px).save(folder / "checker.png")
    return folder


@pytest.fixture(scope="session")
def toy_model():
    return ModelConfig(depth=2, channels=(32, 3), d_g=4, d_l=8, d_p=2,
                       mlp_hidden=8)


@pytest.fixture(scope="session")
def smoke_session(texture_folder, toy_model):
    """200-iteration run used for the training-dynamics checks."""
    config = TrainConfig(texture_folder=str(texture_folder), model=toy_model,
                         patch_size=20, lattice=(5, 5), batch_size=16,
                         iterations=200, seed=0)
    gen, history = train(config)
    return gen, history, config


@pytest.fixture(scope="session")
def long_session(texture_folder, toy_model):
    """1000-iteration run used for sample-statistics checks."""
    config = TrainConfig(texture_folder=str(texture_folder), model=toy_model,
                         patch_size=20, lattice=(5, 5), batch_size=16,
                         iterations=1000, seed=0)
    gen, history = train(config)
    return gen, history, config
