"""Synthetic stand-in for the physical coded-pulse camera.

A stochastic, parameter-conditioned forward process producing back-scattered
codes with the pathologies of a real low-power device: phase shift, timing
jitter, edge smear, duty-cycle distortion, bit noise and whole-code outliers.
Every effect strength is driven by the distance of one control parameter from
an interior optimum, so the best parameters are never at the box corners.

All randomness is derived per call from a stable 64-bit hash of
(base_seed, indices) feeding numpy's PCG64, making dataset generation
reproducible bit-for-bit regardless of parallelism.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .signal import CameraConstants, as_code, circular_correlate_batch, inliers_rate, is_hard

_MASK64 = (1 << 64) - 1

DEFAULT_P_STAR = (0.45, 0.55, 0.50, 0.45, 0.55, 0.45, 0.55, 0.50)

# depth at integer sample index t=21 under default constants; keeps the
# noiseless round trip exactly on the hard-argmax grid
DEFAULT_DISTANCE_MM = 2847.820809


def derive_seed(base_seed: int, *indices: int) -> int:
    """Stable 64-bit stream seed: low 8 bytes of SHA-256 over LE-packed u64s."""
    h = hashlib.sha256()
    h.update(struct.pack("<Q", base_seed & _MASK64))
    for ix in indices:
        h.update(struct.pack("<Q", ix & _MASK64))
    return int.from_bytes(h.digest()[:8], "little")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def validate_params(params) -> np.ndarray:
    p = np.asarray(params, dtype=np.float64)
    if p.shape != (8,):
        raise ValueError(f"camera params must be 8 values, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("camera params must lie in [0, 1]")
    return p


@dataclass(frozen=True)
class OracleConfig:
    """Scene and effect-strength configuration of the synthetic camera."""

    consts: CameraConstants = field(default_factory=CameraConstants)
    distance_mm: float = DEFAULT_DISTANCE_MM
    reflectivity: float = 0.9
    p_star: tuple = DEFAULT_P_STAR
    flip_coef: float = 0.5
    flip_floor: float = 0.035
    jitter_coef: float = 4.5
    jitter_floor: float = 0.2
    skew_coef: float = 0.3
    rise_coef: float = 0.6
    fall_coef: float = 0.6
    duty_coef: float = 0.4
    outlier_coef: float = 0.3
    outlier_floor: float = 0.0005
    base_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.distance_mm <= self.consts.delta_max):
            raise ValueError(f"distance {self.distance_mm} outside (0, delta_max={self.consts.delta_max}]")
        if not (0.0 < self.reflectivity <= 1.0):
            raise ValueError("reflectivity must be in (0, 1]")
        ps = np.asarray(self.p_star, dtype=np.float64)
        if ps.shape != (8,) or ps.min() <= 0.2 or ps.max() >= 0.8:
            raise ValueError("p_star must be 8 values inside (0.2, 0.8)")
        coefs = [self.flip_coef, self.flip_floor, self.jitter_coef, self.jitter_floor,
                 self.skew_coef, self.rise_coef, self.fall_coef, self.duty_coef,
                 self.outlier_coef, self.outlier_floor]
        if not all(np.isfinite(c) and c >= 0 for c in coefs):
            raise ValueError("effect coefficients must be finite and non-negative")

    def digest(self) -> bytes:
        """32-byte SHA-256 over the canonical JSON of this config."""
        payload = asdict(self)
        payload["consts"] = asdict(self.consts)
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).digest()

    @property
    def true_shift_samples(self) -> float:
        """Circular shift of the ideal round trip, in samples.

        (2*distance + d)*f/c - 1: the -1 absorbs the 1-based time index of the
        depth formula so a noiseless hard-argmax round trip recovers the
        configured distance exactly.
        """
        c = self.consts
        return (2.0 * self.distance_mm + c.d) * c.f / c.c - 1.0


@dataclass
class Dataset:
    """Transmitted code plus per-parameter-set batches of back-scattered codes."""

    alpha: np.ndarray
    params: np.ndarray        # [groups, 8]
    batches: np.ndarray       # [groups, reps, L], values 0/1
    base_seed: int
    oracle_digest: bytes

    @property
    def L(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_groups(self) -> int:
        return self.params.shape[0]

    @property
    def reps(self) -> int:
        return self.batches.shape[1]


def _fractional_circular_shift(code: np.ndarray, shift: float) -> np.ndarray:
    """Shift right by a sub-sample amount via linear interpolation (soft output)."""
    s0 = int(np.floor(shift))
    frac = shift - s0
    return (1.0 - frac) * np.roll(code, s0) + frac * np.roll(code, s0 + 1)


def _stochastic_round(x: float, rng: np.random.Generator) -> int:
    lo = int(np.floor(x))
    return lo + (1 if rng.random() < (x - lo) else 0)


def _move_edges(code: np.ndarray, rising: bool, sigma: float, rng: np.random.Generator,
                max_move: int = 4) -> np.ndarray:
    """Displace each 0->1 (rising) or 1->0 (falling) transition by ~N(0, sigma) samples."""
    L = code.shape[0]
    prev = np.roll(code, 1)
    if rising:
        edges = np.flatnonzero((prev == 0) & (code == 1))
    else:
        edges = np.flatnonzero((prev == 1) & (code == 0))
    out = code.copy()
    for e in edges:
        d = int(np.clip(np.rint(rng.normal(0.0, sigma)), -max_move, max_move)) if sigma > 0 else 0
        if sigma > 0 and d == 0:
            continue
        if rising:
            # d > 0 widens the 1-run backwards, d < 0 eats its start
            idx = (np.arange(e - d, e) if d > 0 else np.arange(e, e - d)) % L
            out[idx] = 1.0 if d > 0 else 0.0
        else:
            # d > 0 extends the 1-run past the edge, d < 0 eats its tail
            idx = (np.arange(e, e + d) if d > 0 else np.arange(e + d, e)) % L
            out[idx] = 1.0 if d > 0 else 0.0
    return out


def transmit(alpha, params, config: OracleConfig, seed: int) -> np.ndarray:
    """One stochastic back-scattered code; deterministic in (alpha, params, config, seed)."""
    c = config.consts
    alpha = as_code(alpha, c.L)
    if not is_hard(alpha):
        raise ValueError("transmitted code must be hard (all values exactly 0 or 1)")
    p = validate_params(params)
    ps = np.asarray(config.p_star)
    rng = _rng(seed)
    L = c.L

    # 1-3: ideal delay + systematic skew + random jitter as one sub-sample
    # shift, thresholded once at 0.5; jitter grows quadratically with the
    # detector working-point error so the optimum basin is smooth
    sigma_j = config.jitter_floor + config.jitter_coef * (p[6] - ps[6]) ** 2
    shift = (config.true_shift_samples
             + config.skew_coef * abs(p[5] - ps[5])
             + rng.normal(0.0, 1.0) * sigma_j)
    code = (_fractional_circular_shift(alpha, shift) >= 0.5).astype(np.float64)

    # 4: edge smear
    code = _move_edges(code, rising=True, sigma=config.rise_coef * (p[3] - ps[3]) ** 2, rng=rng)
    code = _move_edges(code, rising=False, sigma=config.fall_coef * (p[4] - ps[4]) ** 2, rng=rng)

    # 5: duty distortion, signed bias on every 1-run's trailing edge
    bias = config.duty_coef * (p[2] - ps[2])
    if bias != 0.0:
        prev = np.roll(code, 1)
        falls = np.flatnonzero((prev == 1) & (code == 0))
        out = code.copy()
        for e in falls:
            d = _stochastic_round(bias, rng)
            if d == 0:
                continue
            idx = (np.arange(e, e + d) if d > 0 else np.arange(e + d, e)) % L
            out[idx] = 1.0 if d > 0 else 0.0
        code = out

    # 6: i.i.d. bit flips, probability floored above 0
    q = config.flip_floor + config.flip_coef * ((p[0] - ps[0]) ** 2 + (p[1] - ps[1]) ** 2) \
        * (2.0 - config.reflectivity)
    q = float(np.clip(q, 0.0, 0.5))
    flips = rng.random(L) < q
    code = np.where(flips, 1.0 - code, code)

    # 7: whole-code outlier replacement
    r = float(np.clip(config.outlier_floor + config.outlier_coef * (p[7] - ps[7]) ** 2, 0.0, 1.0))
    if rng.random() < r:
        code = (rng.random(L) < 0.5).astype(np.float64)

    return code


def generate_dataset(alpha, param_sets, reps: int, config: OracleConfig,
                     threads: int = 1) -> Dataset:
    """reps transmits per parameter set, seeded per (base_seed, group, rep).

    Output is bit-identical for any thread count: every record derives its own
    seed, threads only partition the work.
    """
    c = config.consts
    alpha = as_code(alpha, c.L)
    params = np.asarray(param_sets, dtype=np.float64)
    if params.ndim != 2 or params.shape[0] == 0 or params.shape[1] != 8:
        raise ValueError(f"param_sets must be a non-empty list of 8-vectors, got {params.shape}")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for row in params:
        validate_params(row)

    batches = np.empty((params.shape[0], reps, c.L), dtype=np.float64)

    def fill_group(g: int):
        for rep in range(reps):
            seed = derive_seed(config.base_seed, g, rep)
            batches[g, rep] = transmit(alpha, params[g], config, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill_group, range(params.shape[0])))
    else:
        for g in range(params.shape[0]):
            fill_group(g)

    return Dataset(alpha=alpha, params=params, batches=batches,
                   base_seed=config.base_seed, oracle_digest=config.digest())


_EVAL_TAG = 0x45564C31  # distinct stream for evaluation draws


def oracle_eval(alpha, params, config: OracleConfig, n: int,
                consts: CameraConstants | None = None, seed: int | None = None
                ) -> tuple[float, float, float]:
    """Closed-loop evaluation: (inliers rate %, median depth mm, std depth mm).

    Draws n back-scattered codes and estimates depth per row with hard-argmax
    correlation against the transmitted code.
    """
    if n < 2:
        raise ValueError("oracle_eval needs n >= 2")
    consts = consts or config.consts
    alpha = as_code(alpha, consts.L)
    p = validate_params(params)
    base = config.base_seed if seed is None else seed
    batch = np.stack([transmit(alpha, p, config, derive_seed(base, _EVAL_TAG, i))
                      for i in range(n)])
    rho = circular_correlate_batch(alpha, batch)
    ts = np.argmax(rho, axis=1) + 1.0
    deltas = 0.5 * (ts / consts.f * consts.c - consts.d)
    return (inliers_rate(deltas, consts.delta_in),
            float(np.median(deltas)),
            float(np.std(deltas)))


def random_code(L: int, seed: int, density: float = 0.5, run_length: int = 1) -> np.ndarray:
    """A random hard transmitted code with roughly `density` ones.

    run_length > 1 draws L/run_length bits and repeats each, producing pulse
    runs of at least that width (a laser driver cannot modulate arbitrarily
    fast; wider runs also keep the code's edge count low).
    """
    if run_length < 1 or L % run_length != 0:
        raise ValueError("run_length must be >= 1 and divide L")
    bits = (_rng(seed).random(L // run_length) < density).astype(np.float64)
    if bits.sum() in (0, bits.shape[0]):
        bits[0] = 1.0 - bits[0]
    return np.repeat(bits, run_length)
