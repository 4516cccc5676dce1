"""Tests for the parameter optimizer driven through the generator."""

import numpy as np
import pytest

import lidarcal.autodiff as ad
from lidarcal.autodiff import Tensor
from lidarcal.inverse import (OptConfig,derive_seed, init_logits, loss_median,
                              loss_median_tensor, loss_variance, optimize,
                              _correlation_matrix)
from lidarcal.nets import GeneratorNet
from lidarcal.signal import CameraConstants, circular_correlate
from lidarcal.train import TrainConfig, build_nets


def consts16():
    return CameraConstants(L=16)


def hard_code(L, seed=0, density=0.5):
    rng = np.random.Generator(np.random.PCG64(seed))
    a = (rng.random(L) < density).astype(np.float64)
    if a.sum() in (0, L):
        a[0] = 1.0 - a[0]
    return a


# ---------------------------------------------------------------- losses


def test_loss_median_hand_value_symmetric_pair():
    c = consts16()
    dmax = c.delta_max
    # {0, dmax}: median dmax/2, both circular distances dmax/2
    val = loss_median([0.0, dmax], c)
    assert abs(val - np.log(1.0 + dmax / 2.0)) < 1e-12


def test_loss_median_hand_value_three_points():
    c = consts16()
    val = loss_median([100.0, 200.0, 300.0], c)
    expect = (np.log(101.0) + np.log(1.0) + np.log(101.0)) / 3.0
    assert abs(val - expect) < 1e-12


def test_loss_median_wraps_circularly():
    c = consts16()
    # distances past dmax/2 wrap: |d - med| = 0.9*dmax -> 0.1*dmax
    med = 0.0
    val = loss_median([med, med, 0.9 * c.delta_max], c)
    expect = (2 * np.log(1.0) + np.log(1.0 + 0.1 * c.delta_max)) / 3.0
    assert abs(val - expect) < 1e-9


def test_loss_median_rejects_out_of_range():
    c = consts16()
    with pytest.raises(ValueError):
        loss_median([0.0, 2.5 * c.delta_max], c)
    with pytest.raises(ValueError):
        loss_median([1.0], c)


def test_loss_median_outlier_among_many():
    c = consts16()
    deltas = np.full(512, 700.0)
    deltas[-1] = 1000.0
    val = loss_median(deltas, c)
    assert abs(val - np.log(301.0) / 512.0) < 1e-12


def test_loss_variance_hand_values():
    assert loss_variance(np.full((8, 4), 0.3)) == 0.0
    batch = np.zeros((2, 6))
    batch[1] = 1.0  # per-bit population variance 0.25
    assert abs(loss_variance(batch) - 0.25) < 1e-15
    with pytest.raises(ValueError):
        loss_variance(np.zeros((1, 4)))


def test_loss_median_gradient_detaches_anchor():
    """Analytic gradient must match FD of the loss with the median held fixed."""
    c = consts16()
    rng = np.random.Generator(np.random.PCG64(2))
    d0 = rng.random(9) * 2000.0
    med = float(np.median(d0))

    def fixed_anchor(d):
        u = np.abs(d - med)
        return np.mean(np.log1p(np.minimum(u, c.delta_max - u)))

    t = Tensor(d0.copy())
    (g,) = ad.grad(loss_median_tensor(t, c), [t])
    h = 1e-6
    fd = np.zeros_like(d0)
    for i in range(d0.size):
        dp, dm = d0.copy(), d0.copy()
        dp[i] += h
        dm[i] -= h
        fd[i] = (fixed_anchor(dp) - fixed_anchor(dm)) / (2 * h)
    np.testing.assert_allclose(g.data, fd, rtol=1e-5, atol=1e-9)


def test_correlation_matrix_matches_fft_correlation():
    a = hard_code(16, seed=3)
    A = _correlation_matrix(a)
    rng = np.random.Generator(np.random.PCG64(4))
    for _ in range(5):
        b = rng.random(16)
        bc = b - b.mean()
        np.testing.assert_allclose(A @ bc, circular_correlate(a, b), atol=1e-10)


# ---------------------------------------------------------------- full objective gradient


def test_objective_gradient_matches_finite_differences():
    """FD vs analytic gradient of the composed loss wrt the logits (fixed z, fixed anchor)."""
    c = consts16()
    G = GeneratorNet(16, z_dim=4, seed=8)
    alpha = hard_code(16, seed=1)
    A = _correlation_matrix(alpha)
    n = 6
    z = np.random.Generator(np.random.PCG64(9)).normal(size=(n, 4))
    ks = np.arange(1.0, 17.0)
    logits0 = np.random.Generator(np.random.PCG64(10)).standard_normal(8)
    beta = 0.7

    def deltas_of(logits):
        p = 1.0 / (1.0 + np.exp(-logits))
        with ad.no_record():
            fake = G.forward(Tensor(np.tile(p, (n, 1))), Tensor(z)).data
        centered = fake - fake.mean(axis=1, keepdims=True)
        rho = centered @ A.T
        e = np.exp(rho - rho.max(axis=1, keepdims=True))
        t = (e / e.sum(axis=1, keepdims=True) @ ks)
        return 0.5 * (t * c.c / c.f - c.d), fake

    d0, _ = deltas_of(logits0)
    med = float(np.median(d0))

    def f(logits):
        d, fake = deltas_of(logits)
        u = np.abs(d - med)
        lm = np.mean(np.log1p(np.minimum(u, c.delta_max - u)))
        lv = fake.var(axis=0).mean()
        return beta * lm + (1.0 - beta) * lv

    # analytic: same computation recorded through the autodiff graph
    lt = Tensor(logits0.copy())
    params = ad.sigmoid(lt)
    C = ad.broadcast_to(params.reshape(1, 8), (n, 8))
    fake = G.forward(C, Tensor(z))
    centered = fake - ad.tmean(fake, axis=1, keepdims=True)
    rho = ad.einsum2("bj,kj->bk", centered, Tensor(A))
    t = ad.tsum(ad.softmax(rho, axis=1) * Tensor(ks).reshape(1, -1), axis=1)
    deltas = 0.5 * (t * (c.c / c.f) - c.d)
    u = ad.tabs(deltas - med)
    lm = ad.tmean(ad.log(ad.minimum(u, c.delta_max - u) + 1.0))
    lv = ad.tmean(ad.variance(fake, axis=0))
    loss = beta * lm + (1.0 - beta) * lv
    (g,) = ad.grad(loss, [lt])

    fd = np.zeros(8)
    h = 1e-6
    for i in range(8):
        lp, lmn = logits0.copy(), logits0.copy()
        lp[i] += h
        lmn[i] -= h
        fd[i] = (f(lp) - f(lmn)) / (2 * h)
    denom = max(np.linalg.norm(fd), 1e-12)
    assert np.linalg.norm(g.data - fd) / denom < 1e-3


# ---------------------------------------------------------------- optimize loop


def test_optimize_params_stay_in_unit_interval():
    G, _ = build_nets(16, TrainConfig(z_dim=4, seed=2))
    cfg = OptConfig(batch_size=8, max_iterations=5, seed=0)
    res = optimize(G, hard_code(16), consts16(), cfg)
    assert len(res.trace) == res.iterations
    for row in res.trace:
        assert np.all(row.params > 0) and np.all(row.params < 1)
    assert np.all(res.params > 0) and np.all(res.params < 1)


def test_optimize_deterministic():
    G, _ = build_nets(16, TrainConfig(z_dim=4, seed=2))
    cfg = OptConfig(batch_size=8, max_iterations=4, seed=5)
    a = optimize(G, hard_code(16), consts16(), cfg)
    b = optimize(G, hard_code(16), consts16(), cfg)
    np.testing.assert_array_equal(a.params, b.params)
    assert [r.loss for r in a.trace] == [r.loss for r in b.trace]


def test_optimize_beta_one_ignores_variance_term():
    G, _ = build_nets(16, TrainConfig(z_dim=4, seed=2))
    cfg = OptConfig(batch_size=8, max_iterations=4, seed=5, beta=1.0)
    res = optimize(G, hard_code(16), consts16(), cfg)
    for row in res.trace:
        assert row.loss == row.loss_median


def test_optimize_freeze_z_deterministic_and_distinct():
    G, _ = build_nets(16, TrainConfig(z_dim=4, seed=2))
    frozen = OptConfig(batch_size=8, max_iterations=4, seed=5, freeze_z=True)
    moving = OptConfig(batch_size=8, max_iterations=4, seed=5, freeze_z=False)
    a = optimize(G, hard_code(16), consts16(), frozen)
    b = optimize(G, hard_code(16), consts16(), frozen)
    np.testing.assert_array_equal(a.params, b.params)
    c = optimize(G, hard_code(16), consts16(), moving)
    assert not np.array_equal(a.params, c.params)


def test_optimize_condition_blind_generator_never_converges():
    """A generator that ignores the params gives zero gradient and no progress."""
    L = 16

    class Blind:
        L = 16
        z_dim = 4

        def forward(self, C, z):
            # spread the codes with z so the depths scatter (low inliers rate)
            return ad.sigmoid(ad.broadcast_to(
                Tensor(np.zeros((C.shape[0], L))), (C.shape[0], L)) + Tensor(
                    np.random.Generator(np.random.PCG64(0)).normal(
                        size=(C.shape[0], L)) * 3.0))

    cfg = OptConfig(batch_size=16, max_iterations=6, seed=1)
    res = optimize(Blind(), hard_code(L), consts16(), cfg)
    assert not res.converged
    assert res.iterations == 6
    start = 1.0 / (1.0 + np.exp(-init_logits(cfg.seed)))
    np.testing.assert_allclose(res.params, start, atol=1e-12)


def test_optimize_input_validation():
    G, _ = build_nets(16, TrainConfig(z_dim=4, seed=2))
    with pytest.raises(ValueError):
        optimize(G, np.full(16, 0.5), consts16(), OptConfig(max_iterations=1))
    with pytest.raises(ValueError):
        optimize(G, hard_code(8), CameraConstants(L=8), OptConfig(max_iterations=1))
    with pytest.raises(ValueError):
        OptConfig(beta=1.5)
    with pytest.raises(ValueError):
        OptConfig(stop_threshold=0.0)


def test_init_logits_deterministic():
    np.testing.assert_array_equal(init_logits(3), init_logits(3))
    assert not np.array_equal(init_logits(3), init_logits(4))
