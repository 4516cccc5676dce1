"""Critic and generator loss terms, including the curriculum schedule.

Sign convention: the critic's raw first output is used directly in every
formula, matching D(x) = [-validity, predicted params]. The gradient penalty
is evaluated at the real samples by default; a config flag switches to the
real/fake interpolation variant.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import DiscriminatorNet, GeneratorNet

GP_NORM_EPS = 1e-12


def curriculum_alpha(iteration: int, threshold: int, constant: float) -> float:
    """0 until the threshold iteration, then min(1, iteration/constant)."""
    if constant <= 0:
        raise ValueError("curriculum constant must be positive")
    if iteration <= threshold:
        return 0.0
    return min(1.0, iteration / constant)


def _row_l2(diff: Tensor) -> Tensor:
    """Mean over rows of per-row L2 norms."""
    return ad.tmean((ad.tsum(diff * diff, axis=1) + GP_NORM_EPS) ** 0.5)


def gradient_penalty(D: DiscriminatorNet, x: Tensor) -> Tensor:
    """E[(||grad_x D(x)[0]||_2 - 1)^2], second-order differentiable."""
    scores = D.forward(x)
    s0 = ad.tsum(scores[:, 0])  # rows are independent, so sum gives per-row grads
    (gx,) = ad.grad(s0, [x], create_graph=True)
    norms = (ad.tsum(gx * gx, axis=1) + GP_NORM_EPS) ** 0.5
    return ad.tmean((norms - 1.0) ** 2)


def d_loss_from_fake(D: DiscriminatorNet, real: Tensor, C: Tensor, fake: Tensor,
                     lambda_gp: float, lambda_parameters: float,
                     gp_x: Tensor | None = None) -> Tensor:
    """Critic loss given an already-generated fake batch.

    E[D(fake)[0]] - E[D(real)[0]] + lambda_gp * GP + lambda_parameters *
    E_rows ||D(real)[1:] - C||_2. gp_x defaults to the real batch.
    """
    s_real = D.forward(real)
    s_fake = D.forward(fake)
    loss = ad.tmean(s_fake[:, 0]) - ad.tmean(s_real[:, 0])
    if lambda_gp:
        loss = loss + lambda_gp * gradient_penalty(D, real if gp_x is None else gp_x)
    if lambda_parameters:
        loss = loss + lambda_parameters * _row_l2(s_real[:, 1:] - C)
    return loss


def d_loss(D: DiscriminatorNet, G: GeneratorNet, real_batch, C, z, cfg, rng=None) -> Tensor:
    """Full critic loss; fake samples are generated and treated as constants.

    rng supplies the interpolation coefficients when gp_on_interpolates is set
    (defaults to a stream seeded from cfg.seed).
    """
    real = Tensor(np.asarray(real_batch, dtype=np.float64))
    Ct = Tensor(np.asarray(C, dtype=np.float64))
    if real.shape[0] != Ct.shape[0]:
        raise ValueError("real batch and condition batch sizes differ")
    with ad.no_record():
        fake = G.forward(Ct, Tensor(np.asarray(z, dtype=np.float64)))
    gp_x = None
    if getattr(cfg, "gp_on_interpolates", False):
        if rng is None:
            rng = np.random.Generator(np.random.PCG64(cfg.seed))
        eps = rng.random((real.shape[0], 1))
        gp_x = Tensor(eps * real.data + (1.0 - eps) * fake.data)
    return d_loss_from_fake(D, real, Ct, fake, cfg.lambda_gp, cfg.lambda_parameters,
                            gp_x=gp_x)


def moment_losses(fake: Tensor, real_mean: np.ndarray, real_var: np.ndarray) -> tuple[Tensor, Tensor]:
    """L1 norms of the per-bit mean and population-variance differences."""
    mean_term = ad.l1_norm(ad.tmean(fake, axis=0) - Tensor(real_mean))
    var_term = ad.l1_norm(ad.variance(fake, axis=0) - Tensor(real_var))
    return mean_term, var_term


def g_loss(D: DiscriminatorNet, G: GeneratorNet, real_batch, C, z, iteration: int, cfg) -> Tensor:
    """Generator loss with curriculum-weighted adversarial terms.

    -alpha*E[D(fake)[0]] + alpha*lambda_parameters*E||D(fake)[1:] - C||_2
    + lambda_mean*L1(per-bit mean diff) + lambda_variance*L1(per-bit var diff).
    All rows of real_batch must share the condition C (same-condition moments).
    """
    real = np.asarray(real_batch, dtype=np.float64)
    Ct = Tensor(np.asarray(C, dtype=np.float64))
    zt = Tensor(np.asarray(z, dtype=np.float64))
    if real.ndim != 2 or real.shape[0] < 1:
        raise ValueError("real batch must be a non-empty matrix")
    alpha = curriculum_alpha(iteration, cfg.curriculum_threshold, cfg.curriculum_constant)
    fake = G.forward(Ct, zt)
    mean_term, var_term = moment_losses(fake, real.mean(axis=0), real.var(axis=0))
    loss = cfg.lambda_mean * mean_term + cfg.lambda_variance * var_term
    if alpha > 0.0:
        # alpha == 0 skips D entirely: the adversarial gradient is exactly zero
        scores = D.forward(fake)
        loss = loss + alpha * (-ad.tmean(scores[:, 0])
                               + cfg.lambda_parameters * _row_l2(scores[:, 1:] - Ct))
    return loss
