"""Minimal CLI: train on a texture folder and export a GNSC weight file."""

from __future__ import annotations

import argparse
import sys

from .export import export_weights
from .model import ModelConfig
from .train import TrainConfig, train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="psgan-train",
        description="Adversarial training of a spatial texture generator.")
    parser.add_argument("--textures", required=True, help="folder of texture images")
    parser.add_argument("--out", required=True, help="output weight file (.gnsc)")
    parser.add_argument("--log", help="JSONL training-metrics file")
    parser.add_argument("--depth", type=int, default=5)
    parser.add_argument("--channels", type=int, nargs="+",
                        default=[512, 256, 128, 64, 3])
    parser.add_argument("--d-g", type=int, default=20, dest="d_g")
    parser.add_argument("--d-l", type=int, default=30, dest="d_l")
    parser.add_argument("--d-p", type=int, default=10, dest="d_p")
    parser.add_argument("--mlp-hidden", type=int, default=60, dest="mlp_hidden")
    parser.add_argument("--lattice", type=int, default=5,
                        help="training lattice side (patch = lattice * 2^depth)")
    parser.add_argument("--batch-size", type=int, default=16, dest="batch_size")
    parser.add_argument("--iterations", type=int, default=2000)
    parser.add_argument("--lr", type=float, default=2e-4)
    parser.add_argument("--seed", type=int, default=0)
    ns = parser.parse_args(argv)
    model = ModelConfig(depth=ns.depth, channels=tuple(ns.channels),
                        d_g=ns.d_g, d_l=ns.d_l, d_p=ns.d_p,
                        mlp_hidden=ns.mlp_hidden)
    config = TrainConfig(texture_folder=ns.textures, model=model,
                         patch_size=ns.lattice * model.upsample_factor,
                         lattice=(ns.lattice, ns.lattice),
                         batch_size=ns.batch_size, iterations=ns.iterations,
                         lr=ns.lr, seed=ns.seed)
    try:
        gen, history = train(config, log_path=ns.log)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    export_weights(gen, ns.out)
    print(f"wrote {ns.out} after {ns.iterations} iterations "
          f"(final d_loss {history[-1]['loss_d']:.3f}, "
          f"g_loss {history[-1]['loss_g']:.3f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
