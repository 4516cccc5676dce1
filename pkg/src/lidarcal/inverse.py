"""Inverse model: gradient descent on the camera parameters through the
trained generator.

The 8 parameters are reparameterized as logits through an element-wise
sigmoid, so they can never leave (0,1). Each iteration generates a batch of
codes, correlates them against the transmitted code, localizes the peak with
soft-argmax, converts to depth, and descends on a convex combination of a
log-damped circular median-distance loss and the per-bit batch variance.
The stop criterion re-estimates depth with hard argmax and checks the
inliers rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import GeneratorNet
from .oracle import derive_seed
from .signal import CameraConstants, as_code, inliers_rate, is_hard

_Z_TAG = 0x1A7E
_INIT_TAG = 0x10617


@dataclass
class OptConfig:
    batch_size: int = 512
    beta: float = 0.7
    lr: float = 0.05
    max_iterations: int = 2000
    stop_threshold: float = 97.0
    seed: int = 0
    freeze_z: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError("beta must be in [0, 1]")
        if not (0.0 < self.stop_threshold <= 100.0):
            raise ValueError("stop threshold must be in (0, 100]")
        if self.lr <= 0 or self.max_iterations < 1:
            raise ValueError("lr > 0 and max_iterations >= 1 required")


@dataclass
class TraceRow:
    iteration: int
    loss_median: float
    loss_variance: float
    loss: float
    inliers: float
    params: np.ndarray


@dataclass
class OptResult:
    params: np.ndarray
    converged: bool
    iterations: int
    trace: list[TraceRow] = field(default_factory=list)


def init_logits(seed: int) -> np.ndarray:
    """Unconstrained start point drawn from N(0,1)^8."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, _INIT_TAG)))
    return rng.standard_normal(8)


def _correlation_matrix(alpha: np.ndarray) -> np.ndarray:
    """A[k,j] = centered_alpha[(j-k) mod L]; rho = centered_codes @ A.T."""
    L = alpha.shape[0]
    ac = alpha - alpha.mean()
    j = np.arange(L)
    return ac[(j[None, :] - j[:, None]) % L]


def loss_median_tensor(deltas: Tensor, consts: CameraConstants) -> Tensor:
    """mean log(1 + min(|d - median|, delta_max - |d - median|)).

    The median is detached (a per-iteration constant anchor); differentiating
    through the order statistic destabilizes descent.
    """
    med = float(np.median(deltas.data))
    u = ad.tabs(deltas - med)
    dmax = consts.delta_max
    if float(u.data.max()) > dmax:
        raise ValueError("depth spread exceeds delta_max: inputs outside camera range")
    dist = ad.minimum(u, dmax - u)
    return ad.tmean(ad.log(dist + 1.0))


def loss_median(deltas, consts: CameraConstants) -> float:
    d = np.asarray(deltas, dtype=np.float64)
    if d.size < 2:
        raise ValueError("loss_median needs at least 2 samples")
    return loss_median_tensor(Tensor(d), consts).item()


def loss_variance_tensor(generated: Tensor) -> Tensor:
    """Mean over bits of the per-bit batch variance."""
    return ad.tmean(ad.variance(generated, axis=0))


def loss_variance(generated) -> float:
    g = np.asarray(generated, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 2:
        raise ValueError("loss_variance needs a batch of >= 2 rows")
    return loss_variance_tensor(Tensor(g)).item()


def optimize(G: GeneratorNet, alpha, consts: CameraConstants, cfg: OptConfig) -> OptResult:
    """Descend on the sigmoid-reparameterized camera parameters through G.

    Stops as soon as the hard-argmax inliers rate of a generated batch
    exceeds cfg.stop_threshold; otherwise runs max_iterations and reports
    converged=False.
    """
    alpha = as_code(alpha, consts.L)
    if not is_hard(alpha):
        raise ValueError("transmitted code must be hard")
    if G.L != consts.L:
        raise ValueError(f"generator L={G.L} != camera L={consts.L}")
    A = Tensor(_correlation_matrix(alpha))
    ks = Tensor(np.arange(1.0, consts.L + 1.0))
    n = cfg.batch_size
    logits = Tensor(init_logits(cfg.seed))
    frozen_z = np.random.Generator(
        np.random.PCG64(derive_seed(cfg.seed, _Z_TAG, 0))).normal(size=(n, G.z_dim))

    trace: list[TraceRow] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if cfg.freeze_z:
            z = frozen_z
        else:
            z = np.random.Generator(
                np.random.PCG64(derive_seed(cfg.seed, _Z_TAG, it))).normal(size=(n, G.z_dim))
        params = ad.sigmoid(logits)
        C = ad.broadcast_to(params.reshape(1, 8), (n, 8))
        fake = G.forward(C, Tensor(z))
        centered = fake - ad.tmean(fake, axis=1, keepdims=True)
        rho = ad.einsum2("bj,kj->bk", centered, A)
        t = ad.tsum(ad.softmax(rho, axis=1) * ks.reshape(1, -1), axis=1)
        deltas = 0.5 * (t * (consts.c / consts.f) - consts.d)
        lm = loss_median_tensor(deltas, consts)
        lv = loss_variance_tensor(fake)
        loss = cfg.beta * lm + (1.0 - cfg.beta) * lv
        if not np.isfinite(loss.data):
            raise RuntimeError(
                f"non-finite loss at iteration {it}; trace has {len(trace)} rows")
        (g,) = ad.grad(loss, [logits])

        # evaluation semantics: hard argmax on the same generated batch
        t_hard = np.argmax(rho.data, axis=1) + 1.0
        d_hard = 0.5 * (t_hard / consts.f * consts.c - consts.d)
        R = inliers_rate(d_hard, consts.delta_in)

        trace.append(TraceRow(it, lm.item(), lv.item(), loss.item(), R,
                              params.data.copy()))
        if R > cfg.stop_threshold:
            converged = True
            break
        logits.data -= cfg.lr * g.data

    final = 1.0 / (1.0 + np.exp(-logits.data))
    return OptResult(params=final, converged=converged, iterations=it, trace=trace)
