"""Spatial GAN generator/discriminator pair.

The generator is fully convolutional: a latent field [Z_global, Z_local,
Z_periodic] on an (L, M) lattice is upsampled 2x per layer by transposed
convolutions (kernel 5, stride 2, padding 2, output padding 1), batch-norm +
relu between layers, tanh at the output. Periodic channels are plane waves
sin(k_x*lam + k_y*mu + phase) whose wave vectors come from a pointwise MLP
on the global channels. The discriminator mirrors the stack with strided
convolutions and emits one logit per lattice position; the GAN objective is
averaged over those spatial classifications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 5
    channels: tuple[int, ...] = (512, 256, 128, 64, 3)
    kernel: int = 5
    d_g: int = 20
    d_l: int = 30
    d_p: int = 10
    mlp_hidden: int = 60
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.depth < 1 or len(self.channels) != self.depth:
            raise ValueError(f"channels {self.channels} inconsistent with depth {self.depth}")
        if self.channels[-1] != 3:
            raise ValueError("last generator layer must output 3 channels")
        if self.kernel % 2 == 0 or self.kernel < 3:
            raise ValueError(f"kernel must be odd and >= 3, got {self.kernel}")
        if self.d_g < 1 or self.d_l < 0 or self.d_p < 0:
            raise ValueError("invalid latent channel counts")

    @property
    def upsample_factor(self) -> int:
        return 2 ** self.depth

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2

    @property
    def latent_channels(self) -> int:
        return self.d_g + self.d_l + self.d_p

    def in_channels(self, layer: int) -> int:
        return self.latent_channels if layer == 0 else self.channels[layer - 1]

    def spec_dict(self) -> dict:
        return {"depth": self.depth, "channels": list(self.channels),
                "kernel": self.kernel, "d_g": self.d_g, "d_l": self.d_l,
                "d_p": self.d_p, "mlp_hidden": self.mlp_hidden,
                "bn_eps": self.bn_eps}


class Generator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleList()
        for i in range(cfg.depth):
            self.convs.append(nn.ConvTranspose2d(
                cfg.in_channels(i), cfg.channels[i], cfg.kernel, stride=2,
                padding=cfg.padding, output_padding=1))
            if i < cfg.depth - 1:
                self.bns.append(nn.BatchNorm2d(cfg.channels[i], eps=cfg.bn_eps))
        if cfg.d_p > 0:
            self.mlp1 = nn.Linear(cfg.d_g, cfg.mlp_hidden)
            self.mlp2 = nn.Linear(cfg.mlp_hidden, 2 * cfg.d_p)

    def periodic(self, zg: torch.Tensor, phases: torch.Tensor) -> torch.Tensor:
        """Plane-wave channels from the global field; (b, d_p, L, M)."""
        cfg = self.cfg
        b, _, L, M = zg.shape
        if cfg.d_p == 0:
            return zg.new_zeros((b, 0, L, M))
        h = F.relu(F.conv2d(zg, self.mlp1.weight[:, :, None, None], self.mlp1.bias))
        k = F.conv2d(h, self.mlp2.weight[:, :, None, None], self.mlp2.bias)
        kx, ky = k[:, 0::2], k[:, 1::2]
        lam = torch.arange(L, dtype=zg.dtype).view(1, 1, L, 1)
        mu = torch.arange(M, dtype=zg.dtype).view(1, 1, 1, M)
        return torch.sin(kx * lam + ky * mu + phases.view(b, -1, 1, 1))

    def forward(self, zg: torch.Tensor, zl: torch.Tensor,
                phases: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        parts = [zg, zl]
        if cfg.d_p > 0:
            parts.append(self.periodic(zg, phases))
        x = torch.cat([p for p in parts if p.shape[1] > 0], dim=1)
        for i in range(cfg.depth):
            x = self.convs[i](x)
            if i < cfg.depth - 1:
                x = F.relu(self.bns[i](x))
            else:
                x = torch.tanh(x)
        return x


class Discriminator(nn.Module):
    """Mirror-symmetric strided conv stack; one sigmoid logit per lattice
    position, so the output lattice equals the generator's input lattice."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        widths = list(reversed(cfg.channels[:-1])) or [16]
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleDict()
        prev = 3
        for i in range(cfg.depth - 1):
            width = widths[min(i, len(widths) - 1)]
            self.convs.append(nn.Conv2d(prev, width, cfg.kernel, stride=2,
                                        padding=cfg.padding))
            if i > 0:  # DCGAN convention: no norm on the first layer
                self.bns[str(i)] = nn.BatchNorm2d(width, eps=cfg.bn_eps)
            prev = width
        self.head = nn.Conv2d(prev, 1, cfg.kernel, stride=2, padding=cfg.padding)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if str(i) in self.bns:
                x = self.bns[str(i)](x)
            x = F.leaky_relu(x, 0.2)
        return self.head(x)  # (b, 1, L, M) logits


def sample_latent(cfg: ModelConfig, batch: int, L: int, M: int,
                  generator: torch.Generator | None = None):
    """Prior draw: per-instance broadcast global vector, i.i.d. local field,
    per-instance uniform phases."""
    g = torch.rand((batch, cfg.d_g, 1, 1), generator=generator) * 2 - 1
    zg = g.expand(batch, cfg.d_g, L, M).contiguous()
    zl = torch.rand((batch, cfg.d_l, L, M), generator=generator) * 2 - 1
    phases = torch.rand((batch, max(cfg.d_p, 1)), generator=generator)[:, :cfg.d_p] \
        * (2 * math.pi)
    return zg, zl, phases
