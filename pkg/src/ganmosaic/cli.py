"""Command-line surface: mosaic creation, initialization galleries, morph
grids, batch-norm calibration, and weight-file inspection.

Option precedence is built-in defaults, overridden by a JSON config file
(--config), overridden by explicit flags. Every command is reproducible
from (config, seed) alone.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import EngineError, StateError, ValidationError
from .generator import calibrate_bn, forward, sample_prior
from .imageio import ImageBuffer, load_image, save_image
from .losses import CorrespondenceMap, LossConfig, total_loss
from .optimize import (OptimizerConfig, explore_inits, optimize,
                       random_projection_init, trace_report)
from .tiler import morph_grid, plan_tiles, render_tiled
from .weights_io import load_weights, save_weights

DEFAULTS = {
    "map": "identity",
    "alpha_l": 5.0,
    "iters": 80,
    "init_samples": 20,
    "seed": 0,
    "chunk": 32,
    "threads": None,  # resolved from MOSAIC_ENGINE_THREADS, else 1
    "samples": 256,
    "lattice": 16,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ganmosaic",
        description="Latent-space texture mosaics over a convolutional generator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, content=True, out=True):
        p.add_argument("--weights", required=True, help="generator weight file (.gnsc)")
        if content:
            p.add_argument("--content", required=True, help="content image (8-bit PNG)")
        if out:
            p.add_argument("--out", required=True, help="output path")
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--seed", type=int, help=f"RNG seed (default {DEFAULTS['seed']})")
        p.add_argument("--chunk", type=int,
                       help=f"tile size in latent positions (default {DEFAULTS['chunk']})")
        p.add_argument("--threads", type=int,
                       help="worker threads (default $MOSAIC_ENGINE_THREADS or 1)")

    p = sub.add_parser("mosaic", help="optimize a latent mosaic for a content image")
    common(p)
    p.add_argument("--map", help=f"correspondence map: identity | down4 | down16 | "
                                 f"down64 | luma-down4 | features:PATH:LAYER "
                                 f"(default {DEFAULTS['map']})")
    p.add_argument("--alpha-l", type=float, dest="alpha_l",
                   help=f"texture regularizer weight (default {DEFAULTS['alpha_l']})")
    p.add_argument("--iters", type=int,
                   help=f"optimizer iterations (default {DEFAULTS['iters']})")
    p.add_argument("--init-samples", type=int, dest="init_samples",
                   help=f"random initializations tried (default {DEFAULTS['init_samples']})")

    p = sub.add_parser("explore", help="render an unoptimized initialization gallery")
    common(p)
    p.add_argument("--map", help=f"correspondence map (default {DEFAULTS['map']})")
    p.add_argument("--alpha-l", type=float, dest="alpha_l",
                   help=f"texture weight used in reported losses (default {DEFAULTS['alpha_l']})")
    p.add_argument("--init-samples", type=int, dest="init_samples",
                   help=f"gallery size (default {DEFAULTS['init_samples']})")

    p = sub.add_parser("morph", help="render a 4-corner texture morph grid")
    common(p, content=False)
    p.add_argument("--seeds", type=int, nargs=4, required=True,
                   help="corner seeds: top-left top-right bottom-left bottom-right")
    p.add_argument("--size", required=True,
                   help="latent lattice, e.g. 30 or 30x20")

    p = sub.add_parser("calibrate", help="freeze batch-norm statistics from the prior")
    common(p, content=False)
    p.add_argument("--samples", type=int,
                   help=f"prior samples (default {DEFAULTS['samples']})")
    p.add_argument("--lattice", type=int,
                   help=f"calibration lattice size (default {DEFAULTS['lattice']})")

    p = sub.add_parser("inspect", help="print a weight file summary")
    p.add_argument("--weights", required=True, help="generator weight file (.gnsc)")
    return parser


def _effective(ns: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    config = getattr(ns, "config", None)
    if config:
        with open(config) as fh:
            loaded = json.load(fh)
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key not in opts:
                raise ValidationError(f"unknown config key '{key}'")
            opts[key] = value
    for key in opts:
        value = getattr(ns, key, None)
        if value is not None:
            opts[key] = value
    if opts["threads"] is None:
        opts["threads"] = int(os.environ.get("MOSAIC_ENGINE_THREADS", "1"))
    return opts


def _load_calibrated(path):
    spec, weights = load_weights(path)
    if not weights.calibrated:
        raise StateError(
            f"weights in {path} have no frozen batch-norm statistics; "
            f"run `ganmosaic calibrate --weights {path} --out ...` first")
    return spec, weights


def _load_content(path, spec) -> np.ndarray:
    img = load_image(path).to_engine()
    f = spec.upsample_factor
    _, _, h, w = img.shape
    h2, w2 = (h // f) * f, (w // f) * f
    if h2 < f or w2 < f:
        raise ValidationError(
            f"content {h}x{w} smaller than one upsample block ({f}x{f})")
    if (h2, w2) != (h, w):
        print(f"warning: content {h}x{w} is not a multiple of {f}; "
              f"center-cropping to {h2}x{w2}", file=sys.stderr)
        r0, c0 = (h - h2) // 2, (w - w2) // 2
        img = img[:, :, r0:r0 + h2, c0:c0 + w2]
    return img


def _loss_config(opts) -> LossConfig:
    return LossConfig(map=CorrespondenceMap.parse(opts["map"]),
                      alpha_l=float(opts["alpha_l"]))


def cmd_mosaic(ns) -> int:
    opts = _effective(ns)
    spec, weights = _load_calibrated(ns.weights)
    content = _load_content(ns.content, spec)
    loss_cfg = _loss_config(opts)
    opt_cfg = OptimizerConfig(max_iters=int(opts["iters"]),
                              n_init_samples=int(opts["init_samples"]),
                              seed=int(opts["seed"]))
    init, _ = explore_inits(content, weights, opt_cfg, loss_cfg,
                            threads=int(opts["threads"]))
    latent, trace = optimize(content, init, weights, loss_cfg, opt_cfg)
    L, M = latent.lattice
    plan = plan_tiles(L, M, int(opts["chunk"]), spec)
    img = render_tiled(weights, latent, plan, threads=int(opts["threads"]))
    save_image(ImageBuffer.from_engine(img), ns.out)
    csv_path = os.path.splitext(ns.out)[0] + ".csv"
    with open(csv_path, "w") as fh:
        fh.write(trace_report(trace))
    print(f"wrote {ns.out} and {csv_path} "
          f"(status {trace.status}, final loss {trace.final_total:.6g}, "
          f"~{plan.chunk_memory_bytes} bytes per tile)")
    return 0 if trace.exit_ok else 3


def cmd_explore(ns) -> int:
    opts = _effective(ns)
    spec, weights = _load_calibrated(ns.weights)
    content = _load_content(ns.content, spec)
    loss_cfg = _loss_config(opts)
    opt_cfg = OptimizerConfig(n_init_samples=int(opts["init_samples"]),
                              seed=int(opts["seed"]))
    _, records = explore_inits(content, weights, opt_cfg, loss_cfg,
                               threads=int(opts["threads"]))
    _, _, h, w = content.shape
    f = spec.upsample_factor
    L, M = h // f, w // f
    os.makedirs(ns.out, exist_ok=True)
    manifest_path = os.path.join(ns.out, "gallery.jsonl")
    plan = plan_tiles(L, M, int(opts["chunk"]), spec)
    with open(manifest_path, "w") as fh:
        for rec in records:
            if rec["kind"] == "projection":
                latent = random_projection_init(content, spec, rec["seed"])
            else:
                latent = sample_prior(spec, L, M, rec["seed"])
            name = f"{rec['kind']}_{rec['seed']}.png"
            path = os.path.join(ns.out, name)
            img = render_tiled(weights, latent, plan, threads=int(opts["threads"]))
            save_image(ImageBuffer.from_engine(img), path)
            fh.write(json.dumps({"seed": rec["seed"], "loss": rec["loss"],
                                 "file": name}) + "\n")
    print(f"wrote {len(records)} candidates and {manifest_path}")
    return 0


def cmd_morph(ns) -> int:
    opts = _effective(ns)
    spec, weights = _load_calibrated(ns.weights)
    size = str(ns.size).lower().split("x")
    L = int(size[0])
    M = int(size[1]) if len(size) > 1 else L
    buf = morph_grid(weights, ns.seeds, L, M, chunk=int(opts["chunk"]),
                     threads=int(opts["threads"]))
    save_image(buf, ns.out)
    print(f"wrote {ns.out} ({buf.height}x{buf.width})")
    return 0


def cmd_calibrate(ns) -> int:
    opts = _effective(ns)
    spec, weights = load_weights(ns.weights)
    lattice = int(opts["lattice"])
    calibrated = calibrate_bn(weights, spec, n_samples=int(opts["samples"]),
                              lattice=(lattice, lattice), seed=int(opts["seed"]))
    save_weights(calibrated, spec, ns.out)
    print(f"wrote calibrated weights to {ns.out}")
    return 0


def cmd_inspect(ns) -> int:
    spec, weights = load_weights(ns.weights)  # load verifies the checksum
    n_params = sum(a.size for a in weights.conv_w + weights.conv_b)
    print(f"file: {ns.weights}")
    print(f"depth: {spec.depth}")
    print(f"channels: {spec.channels}")
    print(f"kernel: {spec.kernel}")
    print(f"d_g: {spec.d_g}  d_l: {spec.d_l}  d_p: {spec.d_p}")
    print(f"upsample factor: {spec.upsample_factor}")
    print(f"conv parameters: {n_params}")
    print(f"calibrated: {weights.calibrated}")
    print("checksum: OK")
    return 0


COMMANDS = {"mosaic": cmd_mosaic, "explore": cmd_explore, "morph": cmd_morph,
            "calibrate": cmd_calibrate, "inspect": cmd_inspect}


def main(argv=None) -> int:
    ns = _build_parser().parse_args(argv)
    try:
        return COMMANDS[ns.command](ns)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
