"""Adversarial training loop for the camera forward model.

Wasserstein objective with gradient penalty, condition reconstruction, and
curriculum-weighted adversarial terms: the generator first learns the per-bit
moment statistics alone, the adversarial losses fade in after the threshold
iteration. critic_iters critic updates per generator update, Adam for both.

Per-iteration RNG streams are derived from (seed, iteration), so resuming
from a checkpoint reproduces the uninterrupted trajectory exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset_io import dataset_digest
from .losses import curriculum_alpha, d_loss_from_fake, g_loss
from .nets import DiscriminatorNet, GeneratorNet, set_weights
from .oracle import Dataset, derive_seed

_ITER_TAG_D = 0xD0
_ITER_TAG_G = 0x60
_INIT_TAG_G = 0x11
_INIT_TAG_D = 0x22


@dataclass
class TrainConfig:
    lambda_gp: float = 10.0
    lambda_parameters: float = 1.0
    lambda_mean: float = 10.0
    lambda_variance: float = 10.0
    curriculum_threshold: int = 2000
    curriculum_constant: float = 10000.0
    critic_iters: int = 5
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    z_dim: int = 32
    iterations: int = 3000
    seed: int = 0
    gp_on_interpolates: bool = False
    snapshot_every: int = 0

    def __post_init__(self):
        if min(self.lambda_gp, self.lambda_parameters, self.lambda_mean, self.lambda_variance) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.curriculum_constant <= 0 or self.curriculum_threshold < 0:
            raise ValueError("curriculum: constant > 0 and threshold >= 0 required")
        if self.batch_size < 2 or self.critic_iters < 1 or self.z_dim < 1:
            raise ValueError("batch_size >= 2, critic_iters >= 1, z_dim >= 1 required")
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ValueError("invalid optimizer hyperparameters")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


class Adam:
    """Adam with bias correction, operating in place on Tensor data."""

    def __init__(self, tensors: list[Tensor], lr: float, beta1: float, beta2: float,
                 eps: float = 1e-8):
        self.tensors = tensors
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(t.data) for t in tensors]
        self.v = [np.zeros_like(t.data) for t in tensors]

    def step(self, grads: list[Tensor]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for w, m, v, g in zip(self.tensors, self.m, self.v, grads):
            gd = g.data
            m *= self.b1
            m += (1 - self.b1) * gd
            v *= self.b2
            v += (1 - self.b2) * gd * gd
            w.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src


@dataclass
class Checkpoint:
    """Both nets' weights plus everything needed to resume bit-exactly."""

    L: int
    z_dim: int
    g_weights: dict
    d_weights: dict
    adam_g: dict
    adam_d: dict
    cfg: TrainConfig
    iteration: int
    dataset_digest: bytes


@dataclass
class LossRecord:
    iteration: int
    d_loss: float
    g_loss: float
    mean_term: float
    var_term: float
    alpha: float


def stability_rank(dataset: Dataset) -> np.ndarray:
    """Group indices ordered by ascending mean per-bit batch variance (ties by index)."""
    if dataset.n_groups < 1:
        raise ValueError("dataset has no groups")
    scores = dataset.batches.var(axis=1).mean(axis=1)
    return np.argsort(scores, kind="stable")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def build_nets(L: int, cfg: TrainConfig) -> tuple[GeneratorNet, DiscriminatorNet]:
    G = GeneratorNet(L, z_dim=cfg.z_dim, seed=derive_seed(cfg.seed, _INIT_TAG_G))
    D = DiscriminatorNet(L, seed=derive_seed(cfg.seed, _INIT_TAG_D))
    return G, D


def make_checkpoint(G, D, opt_g, opt_d, cfg, iteration, digest) -> Checkpoint:
    return Checkpoint(
        L=G.L, z_dim=G.z_dim,
        g_weights={n: t.data.copy() for n, t in G.weights()},
        d_weights={n: t.data.copy() for n, t in D.weights()},
        adam_g=opt_g.state(), adam_d=opt_d.state(),
        cfg=cfg, iteration=iteration, dataset_digest=digest)


def train(dataset: Dataset, cfg: TrainConfig, resume: Checkpoint | None = None,
          snapshot_fn=None, log_fn=None) -> tuple[Checkpoint, list[LossRecord]]:
    """Run the adversarial loop and return the final checkpoint plus loss log.

    snapshot_fn(iteration, G) is called every cfg.snapshot_every iterations;
    log_fn(record) after every iteration. Deterministic given (seed, dataset).
    """
    if dataset.reps < 2:
        raise ValueError("dataset groups need >= 2 rows (variance undefined otherwise)")
    if dataset.n_groups < 1:
        raise ValueError("dataset has no groups")
    digest = dataset_digest(dataset)

    G, D = build_nets(dataset.L, cfg)
    opt_g = Adam(G.tensors(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = Adam(D.tensors(), cfg.lr, cfg.beta1, cfg.beta2)
    start = 0
    if resume is not None:
        if resume.L != dataset.L:
            raise ValueError(f"checkpoint L={resume.L} != dataset L={dataset.L}")
        if resume.dataset_digest != digest:
            raise ValueError("checkpoint was trained on a different dataset")
        set_weights(G, resume.g_weights)
        set_weights(D, resume.d_weights)
        opt_g.load_state(resume.adam_g)
        opt_d.load_state(resume.adam_d)
        start = resume.iteration

    rows = dataset.batches.reshape(-1, dataset.L)
    row_group = np.repeat(np.arange(dataset.n_groups), dataset.reps)
    records: list[LossRecord] = []

    for it in range(start, cfg.iterations):
        alpha = curriculum_alpha(it, cfg.curriculum_threshold, cfg.curriculum_constant)

        d_val = 0.0
        rng_d = _rng(derive_seed(cfg.seed, _ITER_TAG_D, it))
        for _ in range(cfg.critic_iters):
            idx = rng_d.integers(0, rows.shape[0], size=cfg.batch_size)
            real = Tensor(rows[idx])
            C = Tensor(dataset.params[row_group[idx]])
            z = Tensor(rng_d.normal(size=(cfg.batch_size, cfg.z_dim)))
            with ad.no_record():
                fake = G.forward(C, z)
            gp_x = None
            if cfg.gp_on_interpolates:
                eps = rng_d.random((cfg.batch_size, 1))
                gp_x = Tensor(eps * real.data + (1.0 - eps) * fake.data)
            loss = d_loss_from_fake(D, real, C, fake,
                                    cfg.lambda_gp, cfg.lambda_parameters, gp_x=gp_x)
            grads = ad.grad(loss, D.tensors())
            opt_d.step(grads)
            d_val = loss.item()

        rng_g = _rng(derive_seed(cfg.seed, _ITER_TAG_G, it))
        g = int(rng_g.integers(0, dataset.n_groups))
        real = dataset.batches[g]
        C = np.tile(dataset.params[g], (cfg.batch_size, 1))
        z = rng_g.normal(size=(cfg.batch_size, cfg.z_dim))
        loss_g = g_loss(D, G, real, C, z, it, cfg)
        grads = ad.grad(loss_g, G.tensors())
        opt_g.step(grads)

        # re-derive the moment terms for the log (cheap, data-only)
        with ad.no_record():
            fake = G.forward(Tensor(C), Tensor(z))
        mean_term = float(np.abs(fake.data.mean(axis=0) - real.mean(axis=0)).sum())
        var_term = float(np.abs(fake.data.var(axis=0) - real.var(axis=0)).sum())
        rec = LossRecord(it, d_val, loss_g.item(), mean_term, var_term, alpha)
        records.append(rec)
        if log_fn is not None:
            log_fn(rec)
        if snapshot_fn is not None and cfg.snapshot_every and (it + 1) % cfg.snapshot_every == 0:
            snapshot_fn(it + 1, G)

    ckpt = make_checkpoint(G, D, opt_g, opt_d, cfg, cfg.iterations, digest)
    return ckpt, records


def sample_generator(G: GeneratorNet, params, n: int, seed: int) -> np.ndarray:
    """n soft codes from G for one parameter set (data only, no graph)."""
    rng = _rng(seed)
    C = np.tile(np.asarray(params, dtype=np.float64), (n, 1))
    z = rng.normal(size=(n, G.z_dim))
    with ad.no_record():
        return G.forward(Tensor(C), Tensor(z)).data.copy()
