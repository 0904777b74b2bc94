"""Writer for the "GNSC" generator weight container.

Layout (little-endian): magic "GNSC" | u32 version=1 | u32 header length |
UTF-8 JSON header (architecture, tensor manifest, calibrated flag, creator)
| float32 row-major tensor payloads in manifest order | u64 FNV-1a checksum
of the payload bytes. The tensor order and shapes must match what mosaic
engines expect: conv weights are (in_ch, out_ch, kh, kw) — the native
ConvTranspose2d layout — followed by batch-norm mean/var/gamma/beta per
hidden layer and the periodic-MLP matrices.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import Generator, ModelConfig

MAGIC = b"GNSC"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def manifest_for(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    entries: list[tuple[str, tuple[int, ...]]] = []
    for i in range(cfg.depth):
        entries.append((f"conv{i}.weight", (cfg.in_channels(i), cfg.channels[i],
                                            cfg.kernel, cfg.kernel)))
        entries.append((f"conv{i}.bias", (cfg.channels[i],)))
    for i in range(cfg.depth - 1):
        c = (cfg.channels[i],)
        entries.extend([(f"bn{i}.mean", c), (f"bn{i}.var", c),
                        (f"bn{i}.gamma", c), (f"bn{i}.beta", c)])
    if cfg.d_p > 0:
        entries.extend([("mlp.w1", (cfg.mlp_hidden, cfg.d_g)),
                        ("mlp.b1", (cfg.mlp_hidden,)),
                        ("mlp.w2", (2 * cfg.d_p, cfg.mlp_hidden)),
                        ("mlp.b2", (2 * cfg.d_p,))])
    return entries


def collect_tensors(gen: Generator) -> dict[str, np.ndarray]:
    cfg = gen.cfg
    out: dict[str, np.ndarray] = {}
    for i in range(cfg.depth):
        out[f"conv{i}.weight"] = gen.convs[i].weight.detach().numpy()
        out[f"conv{i}.bias"] = gen.convs[i].bias.detach().numpy()
    for i in range(cfg.depth - 1):
        bn = gen.bns[i]
        out[f"bn{i}.mean"] = bn.running_mean.detach().numpy()
        out[f"bn{i}.var"] = bn.running_var.detach().numpy()
        out[f"bn{i}.gamma"] = bn.weight.detach().numpy()
        out[f"bn{i}.beta"] = bn.bias.detach().numpy()
    if cfg.d_p > 0:
        out["mlp.w1"] = gen.mlp1.weight.detach().numpy()
        out["mlp.b1"] = gen.mlp1.bias.detach().numpy()
        out["mlp.w2"] = gen.mlp2.weight.detach().numpy()
        out["mlp.b2"] = gen.mlp2.bias.detach().numpy()
    return out


def write_container(path, header: dict, tensors: dict[str, np.ndarray],
                    manifest: list[tuple[str, tuple[int, ...]]]) -> None:
    header = dict(header)
    header["manifest"] = [{"name": n, "shape": list(s)} for n, s in manifest]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(tensors[n], dtype="<f4").tobytes() for n, _ in manifest)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
        f.write(struct.pack("<Q", fnv1a64(payload)))


def export_weights(gen: Generator, path, calibrated: bool = True,
                   creator: str = "psgan-trainer") -> None:
    """Write the trained generator (with frozen batch-norm buffers) to a
    GNSC file. Periodic phases are not exported; consumers sample their own."""
    cfg = gen.cfg
    tensors = collect_tensors(gen)
    manifest = manifest_for(cfg)
    for name, shape in manifest:
        if tuple(tensors[name].shape) != shape:
            raise ValueError(f"{name}: shape {tensors[name].shape} != {shape}")
    header = {"kind": "generator", "spec": cfg.spec_dict(),
              "calibrated": bool(calibrated), "creator": creator}
    write_container(path, header, tensors, manifest)
