"""The PSGAN-style generator: latent composition, conv stack, periodic basis.

The generator maps a spatial latent tensor (global, local and periodic
channels concatenated) through a stack of spatially doubling transposed
convolutions with fixed-statistics batch normalization, ending in tanh.
Wave numbers of the periodic plane waves are produced from the global
channels by a small pointwise MLP, so gradients flow back into the global
field; phases are sampled once per latent state and held fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, StateError, ValidationError

STRIDE = 2
OUTPUT_PADDING = 1


@dataclass(frozen=True)
class GeneratorSpec:
    """Architecture description. ``channels`` lists output channels per layer
    and must end in 3 (RGB)."""

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
        if self.depth < 1:
            raise ValidationError(f"depth must be >= 1, got {self.depth}")
        if len(self.channels) != self.depth:
            raise ValidationError(
                f"channels has {len(self.channels)} entries for depth {self.depth}")
        if self.channels[-1] != 3:
            raise ValidationError(f"last layer must output 3 channels, got {self.channels[-1]}")
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ValidationError(f"kernel must be odd and >= 3, got {self.kernel}")
        if self.d_g < 1 or self.d_l < 0 or self.d_p < 0:
            raise ValidationError(
                f"latent channel counts invalid: d_g={self.d_g} d_l={self.d_l} d_p={self.d_p}")
        if self.mlp_hidden < 1:
            raise ValidationError(f"mlp_hidden must be >= 1, got {self.mlp_hidden}")

    @property
    def upsample_factor(self) -> int:
        return 2 ** self.depth

    @property
    def padding(self) -> int:
        # with stride 2 and output_padding 1, (kernel-1)//2 makes each layer
        # exactly double the spatial size
        return (self.kernel - 1) // 2

    @property
    def latent_channels(self) -> int:
        return self.d_g + self.d_l + self.d_p

    def in_channels(self, layer: int) -> int:
        return self.latent_channels if layer == 0 else self.channels[layer - 1]

    def to_dict(self) -> dict:
        return {"depth": self.depth, "channels": list(self.channels), "kernel": self.kernel,
                "d_g": self.d_g, "d_l": self.d_l, "d_p": self.d_p,
                "mlp_hidden": self.mlp_hidden, "bn_eps": self.bn_eps}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(depth=int(d["depth"]), channels=tuple(d["channels"]), kernel=int(d["kernel"]),
                   d_g=int(d["d_g"]), d_l=int(d["d_l"]), d_p=int(d["d_p"]),
                   mlp_hidden=int(d["mlp_hidden"]), bn_eps=float(d.get("bn_eps", 1e-5)))


def output_shape(spec: GeneratorSpec, L: int, M: int) -> tuple[int, int]:
    """Output pixel dims for a latent lattice, without allocating anything."""
    return L * spec.upsample_factor, M * spec.upsample_factor


@dataclass
class GeneratorWeights:
    """Parameter tensors plus frozen BN statistics for one GeneratorSpec.

    Conv weights are (in_ch, out_ch, kh, kw); BN vectors are per output
    channel of their layer (the output layer has no BN). The periodic MLP is
    d_g -> mlp_hidden -> 2*d_p, row i of the reshaped (d_p, 2) output being
    the wave vector of periodic channel i. MLP arrays are empty when d_p=0.
    """

    spec: GeneratorSpec
    conv_w: list[np.ndarray]
    conv_b: list[np.ndarray]
    bn_mean: list[np.ndarray]
    bn_var: list[np.ndarray]
    bn_gamma: list[np.ndarray]
    bn_beta: list[np.ndarray]
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    calibrated: bool = False

    def validate(self) -> None:
        s = self.spec
        if len(self.conv_w) != s.depth or len(self.conv_b) != s.depth:
            raise ValidationError(f"expected {s.depth} conv layers")
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            want = (s.in_channels(i), s.channels[i], s.kernel, s.kernel)
            if w.shape != want:
                raise ValidationError(f"conv{i} weight shape {w.shape} != {want}")
            if b.shape != (s.channels[i],):
                raise ValidationError(f"conv{i} bias shape {b.shape} != ({s.channels[i]},)")
        for name, lst in (("mean", self.bn_mean), ("var", self.bn_var),
                          ("gamma", self.bn_gamma), ("beta", self.bn_beta)):
            if len(lst) != s.depth - 1:
                raise ValidationError(f"expected {s.depth - 1} bn {name} vectors")
            for i, v in enumerate(lst):
                if v.shape != (s.channels[i],):
                    raise ValidationError(f"bn{i} {name} shape {v.shape} != ({s.channels[i]},)")
        for v in self.bn_var:
            if np.any(v < 0):
                raise ValidationError("negative BN variance")
        if s.d_p > 0:
            if self.mlp_w1.shape != (s.mlp_hidden, s.d_g):
                raise ValidationError(f"mlp_w1 shape {self.mlp_w1.shape} != ({s.mlp_hidden}, {s.d_g})")
            if self.mlp_w2.shape != (2 * s.d_p, s.mlp_hidden):
                raise ValidationError(f"mlp_w2 shape {self.mlp_w2.shape} != ({2 * s.d_p}, {s.mlp_hidden})")
            if self.mlp_b1.shape != (s.mlp_hidden,) or self.mlp_b2.shape != (2 * s.d_p,):
                raise ValidationError("mlp bias shapes inconsistent with spec")


@dataclass
class LatentState:
    """The optimization variable: global field, local field, fixed phases."""

    zg: np.ndarray  # (1, d_g, L, M)
    zl: np.ndarray  # (1, d_l, L, M)
    phases: np.ndarray  # (d_p,), values in [0, 2pi)

    @property
    def lattice(self) -> tuple[int, int]:
        return self.zg.shape[2], self.zg.shape[3]

    def validate(self) -> None:
        if self.zg.ndim != 4 or self.zl.ndim != 4:
            raise ValidationError("latent fields must be rank-4")
        if self.zg.shape[0] != 1 or self.zl.shape[0] != 1:
            raise ValidationError("latent batch dimension must be 1")
        if self.zg.shape[2:] != self.zl.shape[2:]:
            raise ValidationError(
                f"zg lattice {self.zg.shape[2:]} != zl lattice {self.zl.shape[2:]}")
        L, M = self.lattice
        if L < 1 or M < 1:
            raise ValidationError(f"lattice must be >= 1x1, got {L}x{M}")
        for name, a in (("zg", self.zg), ("zl", self.zl)):
            if a.size and (a.min() < -1.0 or a.max() > 1.0):
                raise ValidationError(f"{name} values outside [-1, 1]")

    def copy(self) -> "LatentState":
        return LatentState(self.zg.copy(), self.zl.copy(), self.phases.copy())


def sample_prior(spec: GeneratorSpec, L: int, M: int, seed: int) -> LatentState:
    """Prior draw: uniform [-1,1] i.i.d. local field, a single broadcast global
    vector (one texture), uniform phases."""
    if L < 1 or M < 1:
        raise ValidationError(f"lattice must be >= 1x1, got {L}x{M}")
    rng = np.random.default_rng(seed)
    g = rng.uniform(-1.0, 1.0, size=spec.d_g).astype(np.float32)
    zg = np.broadcast_to(g.reshape(1, spec.d_g, 1, 1), (1, spec.d_g, L, M)).copy()
    zl = rng.uniform(-1.0, 1.0, size=(1, spec.d_l, L, M)).astype(np.float32)
    phases = rng.uniform(0.0, 2 * math.pi, size=spec.d_p).astype(np.float32)
    return LatentState(zg, zl, phases)


def periodic_basis(zg: Tensor, phases: np.ndarray, weights: GeneratorWeights,
                   offset: tuple[int, int] = (0, 0)) -> Tensor:
    """Plane-wave channels sin(k_i . (lam, mu) + phase_i), k_i = MLP(zg) rows.

    ``offset`` gives the absolute lattice coordinates of the top-left
    position, so chunked rendering evaluates the same waves as a monolithic
    pass.
    """
    spec = weights.spec
    d_p = spec.d_p
    _, d_g, L, M = zg.data.shape
    if d_p == 0:
        return Tensor(np.zeros((1, 0, L, M), dtype=zg.data.dtype), dtype=zg.data.dtype)
    if weights.mlp_w2.shape[0] != 2 * d_p:
        raise DimensionError(
            f"MLP output dim {weights.mlp_w2.shape[0]} != 2*d_p = {2 * d_p}")
    # pointwise MLP as 1x1 convolutions
    w1 = Tensor(weights.mlp_w1.reshape(spec.mlp_hidden, d_g, 1, 1), dtype=zg.data.dtype)
    b1 = Tensor(weights.mlp_b1, dtype=zg.data.dtype)
    w2 = Tensor(weights.mlp_w2.reshape(2 * d_p, spec.mlp_hidden, 1, 1), dtype=zg.data.dtype)
    b2 = Tensor(weights.mlp_b2, dtype=zg.data.dtype)
    h = ad.relu(ad.conv2d(zg, w1, b1, stride=1, padding=0))
    k = ad.conv2d(h, w2, b2, stride=1, padding=0)  # (1, 2*d_p, L, M)
    kx = ad.slice_channels(k, 0, 2 * d_p, 2)
    ky = ad.slice_channels(k, 1, 2 * d_p, 2)
    lam = (offset[0] + np.arange(L, dtype=np.float64)).reshape(1, 1, L, 1)
    mu = (offset[1] + np.arange(M, dtype=np.float64)).reshape(1, 1, 1, M)
    arg = ad.add(ad.mul_const(kx, np.broadcast_to(lam, kx.data.shape)),
                 ad.mul_const(ky, np.broadcast_to(mu, ky.data.shape)))
    arg = ad.add_channel_bias(arg, np.asarray(phases, dtype=np.float64))
    return ad.sin(arg)


def forward_t(weights: GeneratorWeights, zg: Tensor, zl: Tensor, phases: np.ndarray,
              offset: tuple[int, int] = (0, 0)) -> Tensor:
    """Taped forward pass on latent Tensors (gradients flow into zg and zl)."""
    spec = weights.spec
    if not weights.calibrated:
        raise StateError("generator weights are not calibrated; run calibrate_bn first")
    parts = [zg, zl]
    if spec.d_p > 0:
        parts.append(periodic_basis(zg, phases, weights, offset))
    x = ad.concat_channels(parts)
    dtype = x.data.dtype
    for i in range(spec.depth):
        w = Tensor(weights.conv_w[i], dtype=dtype)
        b = Tensor(weights.conv_b[i], dtype=dtype)
        x = ad.conv_transpose2d(x, w, b, STRIDE, spec.padding, OUTPUT_PADDING)
        if i < spec.depth - 1:
            x = ad.batch_norm_fixed(x, weights.bn_mean[i], weights.bn_var[i],
                                    weights.bn_gamma[i], weights.bn_beta[i], spec.bn_eps)
            x = ad.relu(x)
        else:
            x = ad.tanh(x)
    return x


def forward(weights: GeneratorWeights, latent: LatentState,
            offset: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Plain forward pass; returns a (1, 3, L*2^depth, M*2^depth) array."""
    zg = Tensor(latent.zg)
    zl = Tensor(latent.zl)
    return forward_t(weights, zg, zl, latent.phases, offset).data


def random_weights(spec: GeneratorSpec, seed: int, weight_scale: float = 0.05) -> GeneratorWeights:
    """Random uncalibrated weights (DCGAN-style normal init), used as fixtures
    and as a starting point before training."""
    rng = np.random.default_rng(seed)
    conv_w, conv_b = [], []
    for i in range(spec.depth):
        conv_w.append(rng.normal(0.0, weight_scale,
                                 (spec.in_channels(i), spec.channels[i], spec.kernel, spec.kernel)
                                 ).astype(np.float32))
        conv_b.append(np.zeros(spec.channels[i], dtype=np.float32))
    bn_mean = [np.zeros(c, dtype=np.float32) for c in spec.channels[:-1]]
    bn_var = [np.ones(c, dtype=np.float32) for c in spec.channels[:-1]]
    bn_gamma = [np.ones(c, dtype=np.float32) for c in spec.channels[:-1]]
    bn_beta = [np.zeros(c, dtype=np.float32) for c in spec.channels[:-1]]
    if spec.d_p > 0:
        mlp_w1 = rng.normal(0.0, 1.0 / math.sqrt(spec.d_g),
                            (spec.mlp_hidden, spec.d_g)).astype(np.float32)
        mlp_b1 = np.zeros(spec.mlp_hidden, dtype=np.float32)
        mlp_w2 = rng.normal(0.0, 1.0 / math.sqrt(spec.mlp_hidden),
                            (2 * spec.d_p, spec.mlp_hidden)).astype(np.float32)
        mlp_b2 = np.zeros(2 * spec.d_p, dtype=np.float32)
    else:
        mlp_w1 = np.zeros((0, 0), dtype=np.float32)
        mlp_b1 = np.zeros(0, dtype=np.float32)
        mlp_w2 = np.zeros((0, 0), dtype=np.float32)
        mlp_b2 = np.zeros(0, dtype=np.float32)
    w = GeneratorWeights(spec, conv_w, conv_b, bn_mean, bn_var, bn_gamma, bn_beta,
                         mlp_w1, mlp_b1, mlp_w2, mlp_b2, calibrated=False)
    w.validate()
    return w


def _periodic_basis_np(zg: np.ndarray, phases: np.ndarray, weights: GeneratorWeights,
                       offset: tuple[int, int] = (0, 0)) -> np.ndarray:
    spec = weights.spec
    _, d_g, L, M = zg.shape
    if spec.d_p == 0:
        return np.zeros((zg.shape[0], 0, L, M), dtype=np.float32)
    h = np.maximum(np.einsum("hg,bgLM->bhLM", weights.mlp_w1.astype(np.float64),
                             zg.astype(np.float64)) + weights.mlp_b1.reshape(1, -1, 1, 1), 0.0)
    k = np.einsum("oh,bhLM->boLM", weights.mlp_w2.astype(np.float64), h) \
        + weights.mlp_b2.reshape(1, -1, 1, 1)
    kx, ky = k[:, 0::2], k[:, 1::2]
    lam = (offset[0] + np.arange(L, dtype=np.float64)).reshape(1, 1, L, 1)
    mu = (offset[1] + np.arange(M, dtype=np.float64)).reshape(1, 1, 1, M)
    ph = np.asarray(phases, np.float64)
    ph = ph.reshape(1, -1, 1, 1) if ph.ndim == 1 else ph.reshape(ph.shape[0], -1, 1, 1)
    return np.sin(kx * lam + ky * mu + ph)


def calibrate_bn(weights: GeneratorWeights, spec: GeneratorSpec, n_samples: int = 256,
                 lattice: tuple[int, int] = (16, 16), seed: int = 0,
                 chunk: int = 16) -> GeneratorWeights:
    """Freeze BN statistics from forward passes over prior draws.

    Prior batches are pushed through the stack with per-batch statistics (the
    usual training-mode normalization); the per-channel means/variances seen
    at each layer are averaged over batches and frozen into the returned
    weights, which subsequently behave as pure constant affine maps.
    """
    if n_samples < 2:
        raise ValidationError(f"calibration needs n_samples >= 2, got {n_samples}")
    if spec != weights.spec:
        raise ValidationError("calibration spec differs from weights spec")
    L, M = lattice
    rng = np.random.default_rng(seed)
    depth = spec.depth
    sum_mean = [np.zeros(c, dtype=np.float64) for c in spec.channels[:-1]]
    sum_var = [np.zeros(c, dtype=np.float64) for c in spec.channels[:-1]]
    n_batches = 0
    done = 0
    while done < n_samples:
        b = min(chunk, n_samples - done)
        done += b
        zg_vecs = rng.uniform(-1, 1, size=(b, spec.d_g)).astype(np.float32)
        zg = np.broadcast_to(zg_vecs.reshape(b, spec.d_g, 1, 1), (b, spec.d_g, L, M)).copy()
        zl = rng.uniform(-1, 1, size=(b, spec.d_l, L, M)).astype(np.float32)
        phases = rng.uniform(0, 2 * math.pi, size=(b, spec.d_p))  # per prior instance
        zp = _periodic_basis_np(zg, phases, weights)
        x = np.concatenate([a for a in (zg, zl, zp) if a.shape[1] > 0], axis=1).astype(np.float64)
        for i in range(depth):
            x = ad.conv_transpose2d_forward(x, weights.conv_w[i], weights.conv_b[i],
                                            STRIDE, spec.padding, OUTPUT_PADDING)
            if i < depth - 1:
                m = x.mean(axis=(0, 2, 3))
                v = x.var(axis=(0, 2, 3))
                sum_mean[i] += m
                sum_var[i] += v
                x = (x - m.reshape(1, -1, 1, 1)) / np.sqrt(v + spec.bn_eps).reshape(1, -1, 1, 1)
                x = x * weights.bn_gamma[i].reshape(1, -1, 1, 1) \
                    + weights.bn_beta[i].reshape(1, -1, 1, 1)
                x = np.maximum(x, 0.0)
            else:
                x = np.tanh(x)
        n_batches += 1
    out = GeneratorWeights(
        spec,
        [w.copy() for w in weights.conv_w], [b.copy() for b in weights.conv_b],
        [(s / n_batches).astype(np.float32) for s in sum_mean],
        [(s / n_batches).astype(np.float32) for s in sum_var],
        [g.copy() for g in weights.bn_gamma], [b.copy() for b in weights.bn_beta],
        weights.mlp_w1.copy(), weights.mlp_b1.copy(),
        weights.mlp_w2.copy(), weights.mlp_b2.copy(),
        calibrated=True)
    out.validate()
    return out


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def margin_by_propagation(depth: int, kernel: int) -> int:
    """Interval-propagation margin for a stack of ``depth`` doubling layers.

    Exposed separately from :func:`receptive_margin` so a depth-0 identity
    stack (margin 0) can be reasoned about in tests.
    """
    if depth == 0:
        return 0
    s, k, p, op = STRIDE, kernel, (kernel - 1) // 2, OUTPUT_PADDING
    t = 1 << 20  # interior anchor, far from any boundary
    factor = 2 ** depth
    x0 = t * factor
    x1 = x0 + factor - 1
    for _ in range(depth):
        dep_lo = _ceil_div(x0 + p - (k - 1), s)
        prod_lo = x0 // s  # chunk output range starts at A0*s
        dep_hi = (x1 + p) // s
        prod_hi = _ceil_div(x1 + 2 * p - k - op + 1, s)
        x0 = min(dep_lo, prod_lo)
        x1 = max(dep_hi, prod_hi)
    return max(t - x0, x1 - t, 0)


def receptive_margin(spec: GeneratorSpec) -> int:
    """Smallest m such that pixels inside a chunk's crop window never depend
    on latent positions more than m outside the chunk."""
    return margin_by_propagation(spec.depth, spec.kernel)
