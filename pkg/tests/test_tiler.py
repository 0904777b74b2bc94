import numpy as np
import pytest

from ganmosaic.errors import DimensionError, ValidationError
from ganmosaic.generator import (GeneratorSpec, calibrate_bn, forward,
                                 random_weights, receptive_margin, sample_prior)
from ganmosaic.tiler import (activation_bytes, bilinear_global_field,
                             morph_grid, plan_tiles, render_tiled)


def test_single_tile_plan_covers_everything(toy_spec):
    plan = plan_tiles(8, 8, 8, toy_spec)
    assert len(plan.tiles) == 1
    t = plan.tiles[0]
    assert (t.r0, t.r1, t.c0, t.c1) == (0, 8, 0, 8)
    assert (t.wr0, t.wr1, t.wc0, t.wc1) == (0, 8, 0, 8)


def test_two_by_two_plan_margins_and_partition(toy_spec):
    m = receptive_margin(toy_spec)
    plan = plan_tiles(64, 64, 32, toy_spec)
    assert len(plan.tiles) == 4
    assert plan.margin == m
    interior = [t for t in plan.tiles if t.r0 > 0 and t.c0 > 0]
    assert interior and all(t.r0 - t.wr0 == m and t.c0 - t.wc0 == m for t in interior)
    # exact partition of the output area
    f = toy_spec.upsample_factor
    area = sum((t.r1 - t.r0) * (t.c1 - t.c0) for t in plan.tiles)
    assert area * f * f == (64 * f) * (64 * f)


def test_uneven_lattice_still_partitions(toy_spec):
    plan = plan_tiles(37, 23, (16, 8), toy_spec)
    plan.validate()  # raises on gaps/overlaps/thin margins


def test_chunk_too_small_for_margin(toy_spec):
    m = receptive_margin(toy_spec)
    with pytest.raises(ValidationError, match="margin"):
        plan_tiles(64, 64, 2 * m, toy_spec)


def test_single_tile_render_bit_identical(toy_weights, toy_spec):
    latent = sample_prior(toy_spec, 6, 7, seed=1)
    plan = plan_tiles(6, 7, 8, toy_spec)
    tiled = render_tiled(toy_weights, latent, plan)
    assert np.array_equal(tiled, forward(toy_weights, latent))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_tiled_matches_monolithic(toy_weights, toy_spec, seed):
    # periodic channels active: offsets must keep the waves globally aligned
    latent = sample_prior(toy_spec, 16, 16, seed=seed)
    plan = plan_tiles(16, 16, 8, toy_spec)
    assert len(plan.tiles) == 4
    tiled = render_tiled(toy_weights, latent, plan)
    mono = forward(toy_weights, latent)
    assert np.max(np.abs(tiled - mono)) < 1e-5


def test_tile_order_is_irrelevant(toy_weights, toy_spec):
    latent = sample_prior(toy_spec, 16, 16, seed=4)
    plan = plan_tiles(16, 16, 8, toy_spec)
    a = render_tiled(toy_weights, latent, plan)
    plan.tiles = plan.tiles[::-1]
    b = render_tiled(toy_weights, latent, plan)
    assert a.tobytes() == b.tobytes()


def test_threaded_render_matches_serial(toy_weights, toy_spec):
    latent = sample_prior(toy_spec, 16, 16, seed=5)
    plan = plan_tiles(16, 16, 8, toy_spec)
    a = render_tiled(toy_weights, latent, plan, threads=1)
    b = render_tiled(toy_weights, latent, plan, threads=4)
    assert a.tobytes() == b.tobytes()


def test_plan_latent_mismatch(toy_weights, toy_spec):
    latent = sample_prior(toy_spec, 8, 8, seed=6)
    plan = plan_tiles(16, 16, 8, toy_spec)
    with pytest.raises(DimensionError):
        render_tiled(toy_weights, latent, plan)


def test_chunk_memory_estimate_beats_monolithic(toy_spec):
    plan = plan_tiles(32, 32, 16, toy_spec)
    assert len(plan.tiles) == 4
    assert plan.chunk_memory_bytes < 0.5 * plan.monolithic_memory_bytes
    # the estimator itself: latent plus every layer activation, float32
    f = 1
    expect = toy_spec.latent_channels * 4 * 4
    l = 4
    for ch in toy_spec.channels:
        l *= 2
        expect += ch * l * l
    assert activation_bytes(toy_spec, 4, 4) == expect * 4


# ---------------------------------------------------------------------------
# morph grids
# ---------------------------------------------------------------------------

def test_bilinear_corners_are_exact():
    rng = np.random.default_rng(7)
    corners = rng.uniform(-1, 1, size=(4, 5))
    zg = bilinear_global_field(corners, 9, 11)
    assert zg.shape == (1, 5, 9, 11)
    assert np.allclose(zg[0, :, 0, 0], corners[0], atol=1e-6)
    assert np.allclose(zg[0, :, 0, -1], corners[1], atol=1e-6)
    assert np.allclose(zg[0, :, -1, 0], corners[2], atol=1e-6)
    assert np.allclose(zg[0, :, -1, -1], corners[3], atol=1e-6)


def test_bilinear_equal_corners_constant():
    v = np.tile(np.array([0.2, -0.7, 0.5]), (4, 1))
    zg = bilinear_global_field(v, 6, 6)
    assert np.allclose(zg, zg[:, :, :1, :1], atol=1e-6)


def test_morph_grid_renders_expected_size(toy_weights, toy_spec):
    buf = morph_grid(toy_weights, [1, 2, 3, 4], 8, 10)
    f = toy_spec.upsample_factor
    assert (buf.height, buf.width) == (8 * f, 10 * f)
    again = morph_grid(toy_weights, [1, 2, 3, 4], 8, 10)
    assert np.array_equal(buf.pixels, again.pixels)


def test_morph_grid_paper_scale_output():
    # depth-5 stack on a 30x30 lattice upsamples 32x to 960x960
    spec = GeneratorSpec(depth=5, channels=(4, 4, 4, 4, 3), kernel=5,
                         d_g=2, d_l=2, d_p=0, mlp_hidden=4)
    w = calibrate_bn(random_weights(spec, seed=9), spec, n_samples=8,
                     lattice=(4, 4), seed=10)
    buf = morph_grid(w, [1, 2, 3, 4], 30, 30)
    assert (buf.height, buf.width) == (960, 960)
