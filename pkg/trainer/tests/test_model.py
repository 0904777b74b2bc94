"""Architecture contracts and cross-boundary numerical agreement with the
mosaic engine's forward pass."""

import math

import numpy as np
import pytest
import torch

import ganmosaic
from ganmosaic.generator import LatentState

from psgan_trainer import (Discriminator, Generator, ModelConfig,
                           export_weights, freeze_bn_statistics,
                           sample_latent)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(depth=2, channels=(32,))  # length mismatch
    with pytest.raises(ValueError):
        ModelConfig(depth=2, channels=(32, 4))  # output must be RGB
    with pytest.raises(ValueError):
        ModelConfig(kernel=4)
    cfg = ModelConfig(depth=3, channels=(64, 32, 3))
    assert cfg.upsample_factor == 8
    assert cfg.in_channels(0) == cfg.d_g + cfg.d_l + cfg.d_p
    assert cfg.in_channels(2) == 32


def test_generator_output_shape(toy_model):
    gen = Generator(toy_model).eval()
    zg, zl, ph = sample_latent(toy_model, 3, 5, 7)
    with torch.no_grad():
        out = gen(zg, zl, ph)
    assert out.shape == (3, 3, 20, 28)
    assert out.abs().max() <= 1.0  # tanh output


def test_discriminator_restores_input_lattice(toy_model):
    """One logit per lattice position: D(G(Z)) has Z's spatial shape."""
    gen, disc = Generator(toy_model).eval(), Discriminator(toy_model).eval()
    zg, zl, ph = sample_latent(toy_model, 2, 5, 7)
    with torch.no_grad():
        logits = disc(gen(zg, zl, ph))
    assert logits.shape == (2, 1, 5, 7)


def test_sample_latent_structure(toy_model):
    g = torch.Generator().manual_seed(3)
    zg, zl, ph = sample_latent(toy_model, 4, 6, 5, generator=g)
    assert zg.shape == (4, toy_model.d_g, 6, 5)
    assert zl.shape == (4, toy_model.d_l, 6, 5)
    assert ph.shape == (4, toy_model.d_p)
    # global channels are constant across the lattice within an instance
    assert torch.equal(zg, zg[:, :, :1, :1].expand_as(zg))
    assert zg.abs().max() <= 1 and zl.abs().max() <= 1
    assert ph.min() >= 0 and ph.max() < 2 * math.pi


def test_engine_forward_matches_torch(toy_model, tmp_path):
    """The exported file must reproduce the torch eval-mode forward pass in
    the consuming engine to well under 1e-4."""
    torch.manual_seed(42)
    gen = Generator(toy_model)
    # arbitrary but realistic batch-norm buffers
    freeze_bn_statistics(gen, n_batches=4, batch=8, lattice=(5, 5), seed=9)
    path = tmp_path / "w.gnsc"
    export_weights(gen, path)
    spec, weights = ganmosaic.load_weights(path)

    worst = 0.0
    for seed in range(5):
        latent = ganmosaic.sample_prior(spec, 6, 4, seed)
        engine_out = ganmosaic.forward(weights, latent)
        with torch.no_grad():
            torch_out = gen(torch.from_numpy(latent.zg),
                            torch.from_numpy(latent.zl),
                            torch.from_numpy(latent.phases[None]))
        worst = max(worst, float(np.abs(engine_out - torch_out.numpy()).max()))
    assert worst < 1e-4
    print(f"[PASS] engine vs torch forward: max abs diff {worst:.2e}")


def test_engine_forward_matches_torch_no_periodic(tmp_path):
    cfg = ModelConfig(depth=2, channels=(16, 3), d_g=3, d_l=4, d_p=0,
                      mlp_hidden=8)
    torch.manual_seed(7)
    gen = Generator(cfg)
    freeze_bn_statistics(gen, n_batches=2, batch=4, lattice=(4, 4), seed=1)
    path = tmp_path / "w.gnsc"
    export_weights(gen, path)
    spec, weights = ganmosaic.load_weights(path)
    latent = ganmosaic.sample_prior(spec, 4, 4, 0)
    engine_out = ganmosaic.forward(weights, latent)
    with torch.no_grad():
        torch_out = gen(torch.from_numpy(latent.zg),
                        torch.from_numpy(latent.zl),
                        torch.from_numpy(latent.phases[None]))
    assert np.abs(engine_out - torch_out.numpy()).max() < 1e-4


def test_periodic_channels_are_plane_waves(toy_model):
    """sin(kx*lam + ky*mu + phase) with lattice-index arguments."""
    gen = Generator(toy_model).eval()
    g = torch.rand((1, toy_model.d_g, 1, 1)) * 2 - 1
    zg = g.expand(1, toy_model.d_g, 5, 6)
    phases = torch.rand((1, toy_model.d_p)) * 2 * math.pi
    with torch.no_grad():
        zp = gen.periodic(zg, phases)
        h = torch.relu(gen.mlp1(g[0, :, 0, 0]))
        k = gen.mlp2(h)
    lam = torch.arange(5.0).view(5, 1)
    mu = torch.arange(6.0).view(1, 6)
    for i in range(toy_model.d_p):
        expected = torch.sin(k[2 * i] * lam + k[2 * i + 1] * mu + phases[0, i])
        assert torch.allclose(zp[0, i], expected, atol=1e-6)


def test_engine_accepts_latent_constructed_from_torch_draw(toy_model, tmp_path):
    """Round trip the other way: torch-drawn latents are valid engine input."""
    torch.manual_seed(5)
    gen = Generator(toy_model)
    freeze_bn_statistics(gen, n_batches=2, batch=4, lattice=(5, 5), seed=2)
    path = tmp_path / "w.gnsc"
    export_weights(gen, path)
    _, weights = ganmosaic.load_weights(path)
    zg, zl, ph = sample_latent(toy_model, 1, 5, 5)
    latent = LatentState(zg.numpy(), zl.numpy(), ph[0].numpy().astype(np.float64))
    out = ganmosaic.forward(weights, latent)
    assert out.shape == (1, 3, 20, 20)
    assert np.isfinite(out).all()
