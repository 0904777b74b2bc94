"""Seamless chunked rendering of arbitrarily large mosaics.

The generator is local: an output pixel depends only on latent positions
within the receptive margin of its lattice cell. Each tile therefore runs
the full forward pass on a latent window padded by that margin (clamped at
the lattice boundary), then keeps only its interior crop. Crops partition
the output exactly, so assembly is a plain blit — no blending — and the
result matches the monolithic forward everywhere, including across seams.
Absolute lattice offsets are forwarded so the periodic channels keep their
global phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .generator import (GeneratorSpec, GeneratorWeights, LatentState, forward,
                        receptive_margin, sample_prior)
from .imageio import ImageBuffer


@dataclass(frozen=True)
class Tile:
    # interior (cropped) region, latent coordinates
    r0: int
    r1: int
    c0: int
    c1: int
    # computed window including margin, clamped to the lattice
    wr0: int
    wr1: int
    wc0: int
    wc1: int


@dataclass
class TilePlan:
    L: int
    M: int
    chunk: tuple[int, int]
    margin: int
    upsample: int
    tiles: list[Tile]
    chunk_memory_bytes: int
    monolithic_memory_bytes: int

    def validate(self) -> None:
        f = self.upsample
        covered = np.zeros((self.L, self.M), dtype=np.int64)
        for t in self.tiles:
            if not (0 <= t.wr0 <= t.r0 < t.r1 <= t.wr1 <= self.L
                    and 0 <= t.wc0 <= t.c0 < t.c1 <= t.wc1 <= self.M):
                raise ValidationError(f"tile window/crop out of order: {t}")
            for lo, hi, wlo, whi, n in ((t.r0, t.r1, t.wr0, t.wr1, self.L),
                                        (t.c0, t.c1, t.wc0, t.wc1, self.M)):
                if (lo - wlo < self.margin and wlo != 0) or \
                        (whi - hi < self.margin and whi != n):
                    raise ValidationError(f"tile margin thinner than {self.margin}: {t}")
            covered[t.r0:t.r1, t.c0:t.c1] += 1
        if not np.all(covered == 1):
            raise ValidationError("tile crops do not partition the lattice exactly")
        assert sum((t.r1 - t.r0) * f * (t.c1 - t.c0) * f for t in self.tiles) \
            == self.L * f * self.M * f


def activation_bytes(spec: GeneratorSpec, L: int, M: int) -> int:
    """Float32 bytes of all forward activations for an (L, M) latent window."""
    total = spec.latent_channels * L * M
    l, m = L, M
    for i in range(spec.depth):
        l *= 2
        m *= 2
        total += spec.channels[i] * l * m
    return total * 4


def plan_tiles(L: int, M: int, chunk, spec: GeneratorSpec) -> TilePlan:
    """Split an (L, M) latent lattice into margin-padded chunks whose crops
    abut exactly. ``chunk`` is an int or an (Lc, Mc) pair of latent positions."""
    lc, mc = (chunk, chunk) if isinstance(chunk, int) else tuple(chunk)
    m = receptive_margin(spec)
    if lc < 2 * m + 1 or mc < 2 * m + 1:
        raise ValidationError(
            f"chunk {lc}x{mc} too small for margin {m}; need at least {2 * m + 1}")
    if L < 1 or M < 1:
        raise ValidationError(f"lattice must be at least 1x1, got {L}x{M}")
    tiles = []
    for r0 in range(0, L, lc):
        r1 = min(r0 + lc, L)
        for c0 in range(0, M, mc):
            c1 = min(c0 + mc, M)
            tiles.append(Tile(r0, r1, c0, c1,
                              max(0, r0 - m), min(L, r1 + m),
                              max(0, c0 - m), min(M, c1 + m)))
    plan = TilePlan(L=L, M=M, chunk=(lc, mc), margin=m,
                    upsample=spec.upsample_factor, tiles=tiles,
                    chunk_memory_bytes=activation_bytes(
                        spec, min(L, lc + 2 * m), min(M, mc + 2 * m)),
                    monolithic_memory_bytes=activation_bytes(spec, L, M))
    plan.validate()
    return plan


def render_tiled(weights: GeneratorWeights, latent: LatentState, plan: TilePlan,
                 threads: int = 1) -> np.ndarray:
    """Render (1, 3, L*2^depth, M*2^depth) float32 via the tile plan.

    Bit-identical to the monolithic forward on a single-tile plan and equal
    within float rounding otherwise; tile order never matters because crop
    regions are disjoint.
    """
    latent.validate()
    if latent.lattice != (plan.L, plan.M):
        raise DimensionError(
            f"plan lattice {(plan.L, plan.M)} != latent lattice {latent.lattice}")
    if weights.spec.upsample_factor != plan.upsample:
        raise DimensionError("plan was built for a different generator depth")
    f = plan.upsample
    out = np.empty((1, 3, plan.L * f, plan.M * f), dtype=np.float32)

    def run(tile: Tile) -> None:
        sub = LatentState(latent.zg[:, :, tile.wr0:tile.wr1, tile.wc0:tile.wc1],
                          latent.zl[:, :, tile.wr0:tile.wr1, tile.wc0:tile.wc1],
                          latent.phases)
        img = forward(weights, sub, offset=(tile.wr0, tile.wc0))
        crop = img[:, :,
                   (tile.r0 - tile.wr0) * f:(tile.r1 - tile.wr0) * f,
                   (tile.c0 - tile.wc0) * f:(tile.c1 - tile.wc0) * f]
        out[:, :, tile.r0 * f:tile.r1 * f, tile.c0 * f:tile.c1 * f] = crop

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, plan.tiles))
    else:
        for tile in plan.tiles:
            run(tile)
    return out


def bilinear_global_field(corners: np.ndarray, L: int, M: int) -> np.ndarray:
    """Blend 4 corner vectors (4, d_g) over the lattice -> (1, d_g, L, M).

    Corner order: top-left, top-right, bottom-left, bottom-right. Corner
    lattice positions reproduce the corner vectors exactly.
    """
    corners = np.asarray(corners, dtype=np.float64)
    if corners.shape[0] != 4 or corners.ndim != 2:
        raise ValidationError(f"need 4 corner vectors, got shape {corners.shape}")
    a = np.linspace(0.0, 1.0, L).reshape(L, 1, 1)
    b = np.linspace(0.0, 1.0, M).reshape(1, M, 1)
    tl, tr, bl, br = corners
    field = ((1 - a) * (1 - b) * tl + (1 - a) * b * tr
             + a * (1 - b) * bl + a * b * br)  # (L, M, d_g)
    return field.transpose(2, 0, 1)[None].astype(np.float32)


def morph_grid(weights: GeneratorWeights, corner_seeds, L: int, M: int,
               chunk: int = 32, threads: int = 1) -> ImageBuffer:
    """Texture-manifold morph: global field bilinearly blended between 4
    seeded prior draws, local field and phases from the first seed's prior."""
    spec = weights.spec
    if spec.d_g < 1:
        raise ValidationError("morph grid needs at least one global channel")
    seeds = list(corner_seeds)
    if len(seeds) != 4:
        raise ValidationError(f"need exactly 4 corner seeds, got {len(seeds)}")
    corners = np.stack([
        np.random.default_rng(s).uniform(-1.0, 1.0, size=spec.d_g) for s in seeds])
    zg = bilinear_global_field(corners, L, M)
    base = sample_prior(spec, L, M, seeds[0])
    latent = LatentState(zg, base.zl, base.phases)
    plan = plan_tiles(L, M, chunk, spec)
    return ImageBuffer.from_engine(render_tiled(weights, latent, plan, threads))
