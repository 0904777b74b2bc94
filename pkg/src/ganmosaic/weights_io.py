"""Bit-exact binary weight files ("GNSC" format).

Layout (little-endian):
  magic "GNSC" (4 bytes) | u32 version=1 | u32 header length |
  UTF-8 JSON header | float32 tensor payloads, row-major, manifest order |
  u64 FNV-1a checksum over the payload bytes.

The JSON header carries the architecture fields, a tensor manifest (names
and shapes, in fixed order), the calibrated flag and a creator string. The
same container also holds feature-extractor conv stacks used as learned
correspondence maps (header kind "features").
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (BadMagicError, ChecksumError, SpecMismatchError,
                     TruncatedFileError, VersionError)
from .generator import GeneratorSpec, GeneratorWeights

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


def _generator_manifest(spec: GeneratorSpec) -> list[tuple[str, tuple[int, ...]]]:
    entries: list[tuple[str, tuple[int, ...]]] = []
    for i in range(spec.depth):
        entries.append((f"conv{i}.weight", (spec.in_channels(i), spec.channels[i],
                                            spec.kernel, spec.kernel)))
        entries.append((f"conv{i}.bias", (spec.channels[i],)))
    for i in range(spec.depth - 1):
        c = (spec.channels[i],)
        entries.extend([(f"bn{i}.mean", c), (f"bn{i}.var", c),
                        (f"bn{i}.gamma", c), (f"bn{i}.beta", c)])
    if spec.d_p > 0:
        entries.extend([("mlp.w1", (spec.mlp_hidden, spec.d_g)),
                        ("mlp.b1", (spec.mlp_hidden,)),
                        ("mlp.w2", (2 * spec.d_p, spec.mlp_hidden)),
                        ("mlp.b2", (2 * spec.d_p,))])
    return entries


def _generator_tensors(w: GeneratorWeights) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for i in range(w.spec.depth):
        out[f"conv{i}.weight"] = w.conv_w[i]
        out[f"conv{i}.bias"] = w.conv_b[i]
    for i in range(w.spec.depth - 1):
        out[f"bn{i}.mean"] = w.bn_mean[i]
        out[f"bn{i}.var"] = w.bn_var[i]
        out[f"bn{i}.gamma"] = w.bn_gamma[i]
        out[f"bn{i}.beta"] = w.bn_beta[i]
    if w.spec.d_p > 0:
        out["mlp.w1"], out["mlp.b1"] = w.mlp_w1, w.mlp_b1
        out["mlp.w2"], out["mlp.b2"] = w.mlp_w2, w.mlp_b2
    return out


def _write_container(path, header: dict, tensors: dict[str, np.ndarray],
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


def _read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic bytes (expected {MAGIC!r})")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version} (expected {VERSION})")
    if len(raw) < 12 + header_len:
        raise TruncatedFileError(f"{path}: header truncated")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TruncatedFileError(f"{path}: unreadable header: {e}") from e
    offset = 12 + header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header.get("manifest", []):
        shape = tuple(int(x) for x in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(raw) - 8:
            raise TruncatedFileError(
                f"{path}: tensor section truncated at '{entry['name']}'")
        arr = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        tensors[entry["name"]] = arr.copy()
        offset += nbytes
    if len(raw) < offset + 8:
        raise TruncatedFileError(f"{path}: missing checksum")
    stored = struct.unpack_from("<Q", raw, offset)[0]
    actual = fnv1a64(raw[12 + header_len:offset])
    if stored != actual:
        raise ChecksumError(f"{path}: payload checksum {actual:#018x} != stored {stored:#018x}")
    if len(raw) != offset + 8:
        raise TruncatedFileError(f"{path}: {len(raw) - offset - 8} trailing bytes")
    return header, tensors


def save_weights(weights: GeneratorWeights, spec: GeneratorSpec, path,
                 creator: str = "ganmosaic") -> None:
    if spec != weights.spec:
        raise SpecMismatchError("spec argument differs from weights.spec")
    weights.validate()
    header = {"kind": "generator", "spec": spec.to_dict(),
              "calibrated": bool(weights.calibrated), "creator": creator}
    _write_container(path, header, _generator_tensors(weights), _generator_manifest(spec))


def load_weights(path) -> tuple[GeneratorSpec, GeneratorWeights]:
    header, tensors = _read_container(path)
    if header.get("kind", "generator") != "generator":
        raise SpecMismatchError(f"{path}: not a generator file (kind={header.get('kind')!r})")
    spec = GeneratorSpec.from_dict(header["spec"])
    expected = _generator_manifest(spec)
    got = [(e["name"], tuple(e["shape"])) for e in header["manifest"]]
    if got != [(n, s) for n, s in expected]:
        raise SpecMismatchError(f"{path}: tensor manifest does not match declared architecture")
    d = tensors
    depth = spec.depth
    try:
        w = GeneratorWeights(
            spec,
            [d[f"conv{i}.weight"] for i in range(depth)],
            [d[f"conv{i}.bias"] for i in range(depth)],
            [d[f"bn{i}.mean"] for i in range(depth - 1)],
            [d[f"bn{i}.var"] for i in range(depth - 1)],
            [d[f"bn{i}.gamma"] for i in range(depth - 1)],
            [d[f"bn{i}.beta"] for i in range(depth - 1)],
            d.get("mlp.w1", np.zeros((0, 0), np.float32)),
            d.get("mlp.b1", np.zeros(0, np.float32)),
            d.get("mlp.w2", np.zeros((0, 0), np.float32)),
            d.get("mlp.b2", np.zeros(0, np.float32)),
            calibrated=bool(header.get("calibrated", False)))
        w.validate()
    except Exception as e:
        raise SpecMismatchError(f"{path}: {e}") from e
    return spec, w


# ---------------------------------------------------------------------------
# feature-extractor files (learned correspondence maps)
# ---------------------------------------------------------------------------

@dataclass
class FeatureExtractor:
    """A stride-2 conv stack with relu activations, applied as a
    correspondence map. ``layers`` lists (in_ch, out_ch, kernel) per layer."""

    layers: list[tuple[int, int, int]]
    conv_w: list[np.ndarray]  # (out, in, kh, kw)
    conv_b: list[np.ndarray]


def save_features(fx: FeatureExtractor, path, creator: str = "ganmosaic") -> None:
    manifest = []
    tensors = {}
    for i, (ic, oc, k) in enumerate(fx.layers):
        manifest.append((f"conv{i}.weight", (oc, ic, k, k)))
        manifest.append((f"conv{i}.bias", (oc,)))
        tensors[f"conv{i}.weight"] = fx.conv_w[i]
        tensors[f"conv{i}.bias"] = fx.conv_b[i]
    header = {"kind": "features",
              "layers": [{"in": ic, "out": oc, "kernel": k} for ic, oc, k in fx.layers],
              "creator": creator}
    _write_container(path, header, tensors, manifest)


def load_features(path) -> FeatureExtractor:
    header, tensors = _read_container(path)
    if header.get("kind") != "features":
        raise SpecMismatchError(f"{path}: not a features file (kind={header.get('kind')!r})")
    layers = [(int(l["in"]), int(l["out"]), int(l["kernel"])) for l in header["layers"]]
    conv_w, conv_b = [], []
    for i, (ic, oc, k) in enumerate(layers):
        w = tensors[f"conv{i}.weight"]
        b = tensors[f"conv{i}.bias"]
        if w.shape != (oc, ic, k, k) or b.shape != (oc,):
            raise SpecMismatchError(f"{path}: feature conv{i} shapes inconsistent")
        conv_w.append(w)
        conv_b.append(b)
    return FeatureExtractor(layers, conv_w, conv_b)
