"""Box-constrained quasi-Newton optimization of the latent state.

Limited-memory BFGS with gradient projection onto the box [-1, 1]:
components sitting at a bound with an outward-pointing descent direction
are held (clamped); the two-loop recursion runs on the free variables and
steps are found by Armijo backtracking on the projected path. Every
accepted step strictly decreases the loss; a failed line search terminates
the run with a "stalled" status instead of accepting an increase.

Initialization follows the random-projection recipe: the content image is
area-averaged down to the latent lattice, pushed through a random linear
map from RGB to the global channels and a sine nonlinearity; a stochastic
search over such candidates (plus one single-texture draw) picks the
lowest-loss start.
"""

from __future__ import annotations

import csv
import io
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .autodiff import avg_pool2d_forward
from .errors import NumericError, ValidationError
from .generator import GeneratorSpec, GeneratorWeights, LatentState, sample_prior
from .losses import LossConfig, total_loss


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 80
    n_init_samples: int = 20
    memory: int = 10
    tol_grad: float = 1e-6
    tol_loss_rel: float = 1e-8
    optimize_local: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.memory < 1:
            raise ValidationError(f"memory must be >= 1, got {self.memory}")

    def to_dict(self) -> dict:
        return {"max_iters": self.max_iters, "n_init_samples": self.n_init_samples,
                "memory": self.memory, "tol_grad": self.tol_grad,
                "tol_loss_rel": self.tol_loss_rel, "optimize_local": self.optimize_local,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        base = cls()
        return cls(**{k: type(getattr(base, k))(v) for k, v in d.items()})


@dataclass
class TraceRecord:
    iteration: int
    content: float
    texture: float
    total: float
    gradnorm: float
    accepted: bool
    ms: float


@dataclass
class RunTrace:
    alpha_l: float
    records: list[TraceRecord] = field(default_factory=list)
    status: str = "max-iters"  # converged | max-iters | stalled | numeric-error

    @property
    def final_total(self) -> float:
        return self.records[-1].total if self.records else float("nan")

    @property
    def exit_ok(self) -> bool:
        return self.status in ("converged", "max-iters")


@dataclass
class LbfgsInfo:
    status: str
    final_loss: float
    iterations: int


ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 20


def _two_loop(g: np.ndarray, pairs: deque) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    if pairs:
        s, y, _ = pairs[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def minimize_box_lbfgs(fun, x0: np.ndarray, config: OptimizerConfig,
                       lower: float = -1.0, upper: float = 1.0,
                       on_iteration=None) -> tuple[np.ndarray, LbfgsInfo]:
    """Minimize ``fun(x) -> (loss, grad)`` over the box [lower, upper]^n.

    ``on_iteration(it, loss, gradnorm, accepted, ms)`` is called once per
    iteration. Every accepted iterate is feasible and strictly decreases the
    loss.
    """
    x = np.clip(np.asarray(x0, dtype=np.float64), lower, upper)
    f, g = fun(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NumericError("non-finite loss or gradient at the initial point")
    pairs: deque = deque(maxlen=config.memory)
    status = "max-iters"
    it = 0
    for it in range(config.max_iters):
        t0 = time.perf_counter()
        active = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
        pg = np.where(active, 0.0, g)
        gradnorm = float(np.max(np.abs(pg))) if pg.size else 0.0
        if gradnorm < config.tol_grad:
            status = "converged"
            break
        d = -_two_loop(pg, pairs)
        d[active] = 0.0
        if float(d @ g) >= 0.0:
            # curvature model unusable here; fall back to projected steepest descent
            pairs.clear()
            d = -pg
        step = 1.0
        accepted = False
        fn = f
        gn = g
        for _ in range(MAX_BACKTRACKS + 1):
            xn = np.clip(x + step * d, lower, upper)
            move = xn - x
            slope = float(g @ move)
            fn, gn = fun(xn)
            if (np.isfinite(fn) and np.all(np.isfinite(gn))
                    and fn <= f + ARMIJO_C1 * slope and fn < f):
                accepted = True
                break
            step *= 0.5
        ms = (time.perf_counter() - t0) * 1000.0
        if not accepted:
            status = "stalled"
            if on_iteration:
                on_iteration(it, f, gradnorm, False, ms)
            break
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
        rel = (f - fn) / max(abs(f), 1e-12)
        x, f, g = xn, fn, gn
        if on_iteration:
            on_iteration(it, f, gradnorm, True, ms)
        if rel < config.tol_loss_rel:
            status = "converged"
            break
    return x, LbfgsInfo(status=status, final_loss=float(f), iterations=it + 1)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def downscale_to_lattice(content: np.ndarray, spec: GeneratorSpec) -> np.ndarray:
    """Area-average the content image down to the latent lattice; (3, L, M)."""
    factor = spec.upsample_factor
    _, _, h, w = content.shape
    if h % factor or w % factor:
        raise ValidationError(
            f"content {h}x{w} is not a multiple of the upsample factor {factor}")
    return avg_pool2d_forward(content, factor)[0].astype(np.float32)


def random_projection_init(content: np.ndarray, spec: GeneratorSpec, seed: int,
                           gain: float = 3.0) -> LatentState:
    """Seed the global field with sin(R @ I_hat) for a random gaussian R;
    local field and phases come from the prior."""
    rng = np.random.default_rng(seed)
    ihat = downscale_to_lattice(content, spec)  # (3, L, M)
    r = rng.normal(0.0, gain, size=(spec.d_g, 3))
    zg = np.sin(np.einsum("gc,cLM->gLM", r, ihat.astype(np.float64)))[None].astype(np.float32)
    L, M = ihat.shape[1], ihat.shape[2]
    zl = rng.uniform(-1.0, 1.0, size=(1, spec.d_l, L, M)).astype(np.float32)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.d_p).astype(np.float32)
    return LatentState(zg, zl, phases)


def explore_inits(content: np.ndarray, weights: GeneratorWeights,
                  opt_config: OptimizerConfig, loss_config: LossConfig,
                  threads: int = 1) -> tuple[LatentState, list[dict]]:
    """Evaluate random-projection candidates plus one single-texture draw and
    return the argmin along with all candidate losses."""
    if opt_config.n_init_samples < 1:
        raise ValidationError("n_init_samples must be >= 1")
    spec = weights.spec
    _, _, h, w = content.shape
    L, M = h // spec.upsample_factor, w // spec.upsample_factor
    cands: list[tuple[str, int, LatentState]] = []
    for i in range(opt_config.n_init_samples):
        seed = opt_config.seed + 1 + i
        cands.append(("projection", seed, random_projection_init(content, spec, seed)))
    cands.append(("single-texture", opt_config.seed,
                  sample_prior(spec, L, M, opt_config.seed)))

    def evaluate(c):
        kind, seed, latent = c
        res = total_loss(content, latent, weights, loss_config)
        return {"kind": kind, "seed": seed, "loss": res.total}

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(evaluate, cands))
    else:
        records = [evaluate(c) for c in cands]
    best = int(np.argmin([r["loss"] for r in records]))
    return cands[best][2], records


# ---------------------------------------------------------------------------
# latent optimization
# ---------------------------------------------------------------------------

def optimize(content: np.ndarray, init: LatentState, weights: GeneratorWeights,
             loss_config: LossConfig, opt_config: OptimizerConfig,
             track_texture: bool = False) -> tuple[LatentState, RunTrace]:
    """Projected L-BFGS on the latent state under the total loss.

    The variable vector is the flattened global field, extended with the
    local field when ``optimize_local``; phases and generator weights are
    never optimized.
    """
    init.validate()
    n_g = init.zg.size
    parts = [init.zg.ravel().astype(np.float64)]
    if opt_config.optimize_local:
        parts.append(init.zl.ravel().astype(np.float64))
    x0 = np.concatenate(parts)
    zl_fixed = init.zl.copy()
    last = {}

    def unpack(x: np.ndarray) -> LatentState:
        zg = x[:n_g].reshape(init.zg.shape).astype(np.float32)
        if opt_config.optimize_local:
            zl = x[n_g:].reshape(init.zl.shape).astype(np.float32)
        else:
            zl = zl_fixed
        return LatentState(zg, zl, init.phases)

    def fun(x: np.ndarray):
        latent = unpack(x)
        res = total_loss(content, latent, weights, loss_config,
                         compute_texture=track_texture)
        last["res"] = res
        grad = [res.grad_zg.ravel()]
        if opt_config.optimize_local:
            grad.append(res.grad_zl.ravel())
        return res.total, np.concatenate(grad)

    trace = RunTrace(alpha_l=loss_config.alpha_l)

    def record(it, loss, gradnorm, accepted, ms):
        res = last["res"]
        trace.records.append(TraceRecord(iteration=it, content=res.content,
                                         texture=res.texture, total=res.total,
                                         gradnorm=gradnorm, accepted=accepted, ms=ms))

    try:
        x, info = minimize_box_lbfgs(fun, x0, opt_config, on_iteration=record)
    except NumericError:
        trace.status = "numeric-error"
        raise
    trace.status = info.status
    return unpack(x), trace


def trace_report(trace: RunTrace) -> str:
    """Render a RunTrace as a CSV convergence table."""
    if not trace.records:
        raise ValidationError("cannot report an empty trace")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iter", "content", "texture", "total", "gradnorm", "accepted", "ms"])
    for r in trace.records:
        writer.writerow([r.iteration, repr(r.content), repr(r.texture), repr(r.total),
                         repr(r.gradnorm), int(r.accepted), repr(r.ms)])
    return buf.getvalue()
