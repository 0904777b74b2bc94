"""The mosaic objective: content loss plus the KDE texture regularizer.

Total loss = content(Z) + alpha_l * texture(Z^l). The content term compares
content and generated images through a pluggable correspondence map. The
texture term pushes the joint distribution of neighboring local-channel
pairs toward the smoothed prior: for every lattice position and offset, a
kernel density estimate over the d_l channel pairs is compared on a fixed
grid against the prior convolved with the same kernel.

Kernel convention: k(u) = exp(-u/2)/(2*pi) applied to u = ||x||^2 / sigma,
so sigma is the squared bandwidth and the implied smoother is an isotropic
Gaussian with variance sigma per axis. The texture term is the MEAN over
(position, offset) pairs (not the raw double sum), so the regularizer
weight is comparable across lattice sizes; the per-pair distance is still
the sum of squared density differences over the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import erf

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ValidationError
from .generator import GeneratorWeights, LatentState, forward_t
from .weights_io import FeatureExtractor, load_features

TWO_PI = 2.0 * math.pi

_DEFAULT_OFFSETS = ((0, 1), (1, 1), (1, 0))


@dataclass(frozen=True)
class KdeConfig:
    sigma: float = 0.1  # squared bandwidth (divides the squared distance)
    grid: int = 40      # points per axis on [-1, 1]
    offsets: tuple[tuple[int, int], ...] = _DEFAULT_OFFSETS

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple((int(a), int(b)) for a, b in self.offsets))
        if self.sigma <= 0:
            raise ValidationError(f"kde sigma must be positive, got {self.sigma}")
        if self.grid < 2:
            raise ValidationError(f"kde grid must be >= 2, got {self.grid}")
        if not self.offsets:
            raise ValidationError("kde offsets must be nonempty")
        for off in self.offsets:
            if off == (0, 0) or not all(v in (0, 1) for v in off):
                raise ValidationError(f"kde offset {off} not in {{0,1}}^2 \\ {{(0,0)}}")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "grid": self.grid,
                "offsets": [list(o) for o in self.offsets]}

    @classmethod
    def from_dict(cls, d: dict) -> "KdeConfig":
        return cls(sigma=float(d.get("sigma", 0.1)), grid=int(d.get("grid", 40)),
                   offsets=tuple(tuple(o) for o in d.get("offsets", _DEFAULT_OFFSETS)))


@dataclass
class CorrespondenceMap:
    """A differentiable image transform applied to both sides of the content
    loss. ``kind`` is one of identity | downscale | luma_downscale | features."""

    kind: str = "identity"
    k: int = 1  # downscale factor (power of two)
    extractor: FeatureExtractor | None = None
    extractor_path: str | None = None
    layer: int = 0

    @classmethod
    def parse(cls, text: str) -> "CorrespondenceMap":
        if text == "identity":
            return cls("identity")
        if text.startswith("down"):
            k = int(text[4:])
            if k < 2 or k & (k - 1):
                raise ValidationError(f"downscale factor must be a power of two, got {k}")
            return cls("downscale", k=k)
        if text.startswith("luma-down"):
            k = int(text[9:])
            if k < 2 or k & (k - 1):
                raise ValidationError(f"downscale factor must be a power of two, got {k}")
            return cls("luma_downscale", k=k)
        if text.startswith("features:"):
            _, path, layer = text.split(":")
            return cls("features", extractor=load_features(path),
                       extractor_path=path, layer=int(layer))
        raise ValidationError(f"unknown correspondence map '{text}'")

    def to_string(self) -> str:
        if self.kind == "identity":
            return "identity"
        if self.kind == "downscale":
            return f"down{self.k}"
        if self.kind == "luma_downscale":
            return f"luma-down{self.k}"
        return f"features:{self.extractor_path}:{self.layer}"

    def apply(self, x: Tensor) -> Tensor:
        if self.kind == "identity":
            return x
        if self.kind in ("downscale", "luma_downscale"):
            k = self.k
            while k > 1:
                x = ad.avg_pool2d(x, 2)
                k //= 2
            if self.kind == "luma_downscale":
                x = ad.channel_mean(x)  # luminance = average of the 3 RGB channels
            return x
        if self.kind == "features":
            fx = self.extractor
            if fx is None:
                raise ValidationError("features map has no extractor loaded")
            if not (0 <= self.layer < len(fx.layers)):
                raise ValidationError(
                    f"feature layer {self.layer} out of range 0..{len(fx.layers) - 1}")
            for i in range(self.layer + 1):
                w = Tensor(fx.conv_w[i], dtype=x.data.dtype)
                b = Tensor(fx.conv_b[i], dtype=x.data.dtype)
                k = fx.layers[i][2]
                x = ad.relu(ad.conv2d(x, w, b, stride=2, padding=(k - 1) // 2))
            return x
        raise ValidationError(f"unknown correspondence map kind '{self.kind}'")


@dataclass
class LossConfig:
    map: CorrespondenceMap = field(default_factory=CorrespondenceMap)
    alpha_l: float = 5.0
    kde: KdeConfig = field(default_factory=KdeConfig)

    def __post_init__(self):
        if self.alpha_l < 0:
            raise ValidationError(f"alpha_l must be nonnegative, got {self.alpha_l}")

    def to_dict(self) -> dict:
        return {"map": self.map.to_string(), "alpha_l": self.alpha_l,
                "kde": self.kde.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(map=CorrespondenceMap.parse(d.get("map", "identity")),
                   alpha_l=float(d.get("alpha_l", 5.0)),
                   kde=KdeConfig.from_dict(d.get("kde", {})))


# ---------------------------------------------------------------------------
# content loss
# ---------------------------------------------------------------------------

def content_loss(content: Tensor | np.ndarray, generated: Tensor,
                 cmap: CorrespondenceMap) -> Tensor:
    """mean_sq(phi(content) - phi(generated)), differentiable w.r.t. generated."""
    if not isinstance(content, Tensor):
        content = Tensor(np.asarray(content), dtype=generated.data.dtype)
    if content.data.shape != generated.data.shape:
        raise DimensionError(
            f"content shape {content.data.shape} != generated shape {generated.data.shape}")
    return ad.mean_sq(ad.sub(cmap.apply(content), cmap.apply(generated)))


# ---------------------------------------------------------------------------
# kernel density machinery
# ---------------------------------------------------------------------------

def kde_estimate(points: np.ndarray, tau, sigma: float) -> float:
    """The pair-density estimate at tau: (1/(n*sigma)) sum_i k(||p_i - tau||^2/sigma)
    with k(u) = exp(-u/2)/(2*pi)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValidationError(f"points must be (n>=1, 2), got {pts.shape}")
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    tau = np.asarray(tau, dtype=np.float64).reshape(2)
    u = ((pts - tau) ** 2).sum(axis=1) / sigma
    return float(np.exp(-u / 2.0).sum() / (TWO_PI * pts.shape[0] * sigma))


def _grid_axis(grid: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, grid)


@lru_cache(maxsize=16)
def _reference_density_cached(sigma: float, grid: int) -> np.ndarray:
    # Separable closed form: the prior (uniform on [-1,1]^2) convolved with the
    # implied Gaussian smoother factorizes into two 1-D box-Gaussian convolutions.
    t = _grid_axis(grid)
    s = math.sqrt(2.0 * sigma)
    f = 0.25 * (erf((t + 1.0) / s) - erf((t - 1.0) / s))
    return np.outer(f, f)


def reference_density(kde: KdeConfig) -> np.ndarray:
    """Smoothed-prior density values on the (grid x grid) lattice over [-1,1]^2.

    Axis 0 follows the first point coordinate, axis 1 the second.
    """
    return _reference_density_cached(kde.sigma, kde.grid)


def density_distance(points: np.ndarray, kde: KdeConfig) -> tuple[float, np.ndarray]:
    """Squared density distance to the smoothed prior over the grid, with its
    gradient w.r.t. the points."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    sigma = kde.sigma
    g = _grid_axis(kde.grid)
    ref = reference_density(kde)
    ex = np.exp(-((pts[:, 0:1] - g[None, :]) ** 2) / (2 * sigma))  # (n, G)
    ey = np.exp(-((pts[:, 1:2] - g[None, :]) ** 2) / (2 * sigma))
    c = 1.0 / (n * sigma * TWO_PI)
    p = c * np.einsum("ni,nj->ij", ex, ey)
    diff = p - ref
    value = float((diff ** 2).sum())
    w = (2.0 * c / sigma) * diff  # (G, G)
    u = np.einsum("ij,nj->ni", w, ey)  # sum over second axis
    v = np.einsum("ij,ni->nj", w, ex)
    grad = np.empty_like(pts)
    grad[:, 0] = (u * ex * g[None, :]).sum(axis=1) - pts[:, 0] * (u * ex).sum(axis=1)
    grad[:, 1] = (v * ey * g[None, :]).sum(axis=1) - pts[:, 1] * (v * ey).sum(axis=1)
    return value, grad


def fit_points_to_prior(points: np.ndarray, kde: KdeConfig, steps: int = 500,
                        seed: int = 0) -> tuple[np.ndarray, float, float]:
    """Move a 2-D point sample toward prior-consistent coverage by minimizing
    the density distance. Returns (final points, initial distance, final)."""
    from .optimize import OptimizerConfig, minimize_box_lbfgs

    pts0 = np.asarray(points, dtype=np.float64)
    d0, _ = density_distance(pts0, kde)

    def fun(x):
        val, grad = density_distance(x.reshape(-1, 2), kde)
        return val, grad.ravel()

    cfg = OptimizerConfig(max_iters=steps, seed=seed, tol_grad=0.0, tol_loss_rel=0.0)
    x, info = minimize_box_lbfgs(fun, pts0.ravel().copy(), cfg)
    return x.reshape(-1, 2), d0, info.final_loss


# ---------------------------------------------------------------------------
# texture loss
# ---------------------------------------------------------------------------

def _texture_loss_core(zl: np.ndarray, kde: KdeConfig,
                       max_chunk_elems: int = 8_000_000) -> tuple[float, np.ndarray]:
    """Value and gradient of the texture regularizer, vectorized over lattice
    positions with separable kernel evaluation."""
    _, d_l, L, M = zl.shape
    if L < 2 or M < 2:
        raise ValidationError(f"texture loss needs a lattice of at least 2x2, got {L}x{M}")
    if d_l < 1:
        raise ValidationError("texture loss needs at least one local channel")
    sigma = kde.sigma
    g = _grid_axis(kde.grid)
    ref = reference_density(kde)
    z = zl[0].astype(np.float64)  # (d_l, L, M)
    grad = np.zeros_like(z)
    total = 0.0
    n_pairs = 0
    s_all = (L - 1) * (M - 1)
    chunk = max(1, max_chunk_elems // max(1, d_l * kde.grid * kde.grid))
    c = 1.0 / (d_l * sigma * TWO_PI)
    for (doff_l, doff_m) in kde.offsets:
        a_full = z[:, 0:L - 1, 0:M - 1].reshape(d_l, s_all)
        b_full = z[:, doff_l:L - 1 + doff_l, doff_m:M - 1 + doff_m].reshape(d_l, s_all)
        ga = np.zeros_like(a_full)
        gb = np.zeros_like(b_full)
        for s0 in range(0, s_all, chunk):
            a = a_full[:, s0:s0 + chunk]  # (d_l, s)
            b = b_full[:, s0:s0 + chunk]
            # batched matmuls (BLAS) over the position axis
            ex = np.exp(-((a.T[:, :, None] - g) ** 2) / (2 * sigma))  # (s, d_l, G)
            ey = np.exp(-((b.T[:, :, None] - g) ** 2) / (2 * sigma))
            p = c * np.matmul(ex.transpose(0, 2, 1), ey)  # (s, G, G)
            diff = p - ref
            total += float((diff ** 2).sum())
            w = (2.0 * c / sigma) * diff  # (s, G, G)
            u = np.matmul(ey, w.transpose(0, 2, 1))  # (s, d_l, G), sums 2nd coord
            v = np.matmul(ex, w)
            ga[:, s0:s0 + chunk] = ((u * ex * g).sum(axis=2) - a.T * (u * ex).sum(axis=2)).T
            gb[:, s0:s0 + chunk] = ((v * ey * g).sum(axis=2) - b.T * (v * ey).sum(axis=2)).T
        grad[:, 0:L - 1, 0:M - 1] += ga.reshape(d_l, L - 1, M - 1)
        grad[:, doff_l:L - 1 + doff_l, doff_m:M - 1 + doff_m] += gb.reshape(d_l, L - 1, M - 1)
        n_pairs += s_all
    value = total / n_pairs
    grad = grad / n_pairs
    return value, grad.reshape(zl.shape)


def texture_loss(zl: Tensor | np.ndarray, kde: KdeConfig) -> Tensor:
    """Mean over (position, offset) pairs of the grid distance between the
    pair KDE and the smoothed prior; differentiable w.r.t. zl."""
    if not isinstance(zl, Tensor):
        zl = Tensor(np.asarray(zl))
    value, grad = _texture_loss_core(zl.data, kde)
    return ad.custom_scalar(zl, value, grad.astype(np.float64), "texture_loss")


# ---------------------------------------------------------------------------
# total loss
# ---------------------------------------------------------------------------

@dataclass
class TotalLossResult:
    total: float
    content: float
    texture: float
    grad_zg: np.ndarray
    grad_zl: np.ndarray


def total_loss(content: np.ndarray, latent: LatentState, weights: GeneratorWeights,
               config: LossConfig, compute_texture: bool | None = None) -> TotalLossResult:
    """Single forward/backward evaluation of content + alpha_l * texture.

    ``compute_texture=None`` evaluates the texture term only when it carries
    weight; pass True to track it for reporting in alpha_l = 0 runs.
    """
    spec = weights.spec
    L, M = latent.lattice
    want = (1, 3, L * spec.upsample_factor, M * spec.upsample_factor)
    if tuple(content.shape) != want:
        raise DimensionError(f"content shape {tuple(content.shape)} != expected {want}")
    # the texture term always participates when it carries weight
    compute_texture = bool(compute_texture) or config.alpha_l > 0
    zg = Tensor(latent.zg, requires_grad=True)
    zl = Tensor(latent.zl, requires_grad=True)
    gen = forward_t(weights, zg, zl, latent.phases)
    c_term = content_loss(content, gen, config.map)
    if compute_texture and spec.d_l > 0:
        t_term = texture_loss(zl, config.kde)
        tot = ad.add(c_term, ad.scale(t_term, config.alpha_l)) if config.alpha_l > 0 else c_term
        texture_value = t_term.item()
    else:
        t_term = None
        tot = c_term
        texture_value = 0.0
    grads = ad.gradients(tot, [zg, zl])
    return TotalLossResult(total=tot.item(), content=c_term.item(), texture=texture_value,
                           grad_zg=grads[zg].astype(np.float64),
                           grad_zl=grads[zl].astype(np.float64))
