"""Adversarial training loop over a folder of texture images.

Alternating Adam updates on the spatially averaged GAN objective: the
discriminator scores every lattice position of real and generated patches
and the losses average over positions and batch. The generator uses the
non-saturating loss (maximize log D(G(Z)) rather than minimize
log(1 - D(G(Z)))) — standard practice, substituted for the saturating form
because the latter stalls early when the discriminator is ahead. Real
labels are not smoothed: smoothing to s < 1 moves the discriminator's
fixed point on real data to sigmoid s/(1+s) < 0.5, so a well-matched
generator drives real-patch accuracy to zero. The discriminator instead
trains at half the generator's learning rate to keep the game balanced.

After the final update, batch-norm statistics are frozen from prior
batches: each hidden layer's per-batch input mean/variance is captured
while the stack normalizes with batch statistics, the per-batch values are
averaged, and the result is stored in the batch-norm buffers. The exported
file is therefore calibrated: consumers apply the batch norms as constant
affine maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .model import Discriminator, Generator, ModelConfig, sample_latent


@dataclass
class TrainConfig:
    texture_folder: str
    model: ModelConfig = field(default_factory=ModelConfig)
    patch_size: int = 160
    lattice: tuple[int, int] = (5, 5)
    batch_size: int = 16
    iterations: int = 2000
    lr: float = 2e-4
    seed: int = 0
    d_lr_factor: float = 0.5
    bn_freeze_batches: int = 16
    eval_every: int = 10

    def __post_init__(self):
        f = self.model.upsample_factor
        if self.patch_size != self.lattice[0] * f or self.lattice[0] != self.lattice[1]:
            # patches must render exactly from the training lattice
            if self.patch_size != self.lattice[0] * f:
                raise ValueError(
                    f"patch size {self.patch_size} != lattice {self.lattice[0]} "
                    f"x upsample factor {f}")
        if self.batch_size < 2 or self.iterations < 1:
            raise ValueError("batch_size must be >= 2 and iterations >= 1")


def load_textures(folder, patch_size: int) -> list[np.ndarray]:
    """All images in the folder as (3, H, W) float32 in [-1, 1]."""
    paths = sorted(p for p in Path(folder).iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not paths:
        raise ValueError(f"no texture images found in {folder}")
    images = []
    for p in paths:
        with Image.open(p) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
        if arr.shape[0] < patch_size or arr.shape[1] < patch_size:
            raise ValueError(
                f"{p} is {arr.shape[1]}x{arr.shape[0]}, smaller than the "
                f"patch size {patch_size}")
        images.append((arr / 127.5 - 1.0).transpose(2, 0, 1))
    return images


def sample_patches(images: list[np.ndarray], n: int, patch: int,
                   rng: np.random.Generator) -> torch.Tensor:
    out = np.empty((n, 3, patch, patch), dtype=np.float32)
    for i in range(n):
        img = images[rng.integers(len(images))]
        r = rng.integers(img.shape[1] - patch + 1)
        c = rng.integers(img.shape[2] - patch + 1)
        out[i] = img[:, r:r + patch, c:c + patch]
    return torch.from_numpy(out)


def _accuracy(logits: torch.Tensor, real: bool) -> float:
    pred = (torch.sigmoid(logits) > 0.5).float()
    target = 1.0 if real else 0.0
    return float((pred == target).float().mean())


def freeze_bn_statistics(gen: Generator, n_batches: int, batch: int,
                         lattice: tuple[int, int], seed: int) -> None:
    """Average per-batch input statistics of every hidden batch norm over
    prior draws and store them in the running buffers."""
    cfg = gen.cfg
    sums = {i: [torch.zeros(cfg.channels[i]), torch.zeros(cfg.channels[i])]
            for i in range(cfg.depth - 1)}

    hooks = []

    def make_hook(i):
        def hook(module, inputs):
            x = inputs[0].detach()
            sums[i][0] += x.mean(dim=(0, 2, 3))
            sums[i][1] += x.var(dim=(0, 2, 3), unbiased=False)
        return hook

    for i, bn in enumerate(gen.bns):
        hooks.append(bn.register_forward_pre_hook(make_hook(i)))
    gen.train()  # hidden layers must normalize with batch statistics here
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _ in range(n_batches):
            zg, zl, ph = sample_latent(cfg, batch, *lattice, generator=g)
            gen(zg, zl, ph)
    for h in hooks:
        h.remove()
    with torch.no_grad():
        for i, bn in enumerate(gen.bns):
            bn.running_mean.copy_(sums[i][0] / n_batches)
            bn.running_var.copy_(sums[i][1] / n_batches)
    gen.eval()


def train(config: TrainConfig, log_path=None) -> tuple[Generator, list[dict]]:
    """Train and return the generator in eval mode with frozen batch-norm
    buffers, plus the metric history (also written as JSON lines)."""
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    cfg = config.model
    images = load_textures(config.texture_folder, config.patch_size)
    holdout = sample_patches(images, config.batch_size, config.patch_size, rng)

    gen = Generator(cfg)
    disc = Discriminator(cfg)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(),
                             lr=config.lr * config.d_lr_factor,
                             betas=(0.5, 0.999))
    bce = nn.BCEWithLogitsLoss()
    L, M = config.lattice
    history: list[dict] = []

    for it in range(config.iterations):
        real = sample_patches(images, config.batch_size, config.patch_size, rng)
        zg, zl, ph = sample_latent(cfg, config.batch_size, L, M)
        fake = gen(zg, zl, ph)

        d_real = disc(real)
        d_fake = disc(fake.detach())
        loss_d = bce(d_real, torch.ones_like(d_real)) \
            + bce(d_fake, torch.zeros_like(d_fake))
        opt_d.zero_grad()
        loss_d.backward()
        opt_d.step()

        d_gen = disc(fake)
        loss_g = bce(d_gen, torch.ones_like(d_gen))  # non-saturating
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()

        if it % config.eval_every == 0 or it == config.iterations - 1:
            with torch.no_grad():
                acc_hold = _accuracy(disc(holdout), real=True)
                acc_fake = _accuracy(d_fake, real=False)
            history.append({"iteration": it, "loss_d": loss_d.item(),
                            "loss_g": loss_g.item(),
                            "d_acc_real_holdout": acc_hold,
                            "d_acc_fake": acc_fake})

    freeze_bn_statistics(gen, config.bn_freeze_batches, config.batch_size,
                         config.lattice, seed=config.seed + 1)
    if log_path is not None:
        with open(log_path, "w") as fh:
            for rec in history:
                fh.write(json.dumps(rec) + "\n")
    return gen, history
