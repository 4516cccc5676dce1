"""Non-learned signal math for coded-pulse depth estimation.

Circular correlation, soft/hard peak finding, depth conversion, circular
depth distance, inliers rate and per-bit batch moments. Everything here is a
pure function over numpy arrays; correlation lags and time indices follow the
1-based convention k in {1..L}.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

SPEED_OF_LIGHT_MM_S = 2.99792458e11


@dataclass(frozen=True)
class CameraConstants:
    """Fixed camera-system constants.

    f: sampling rate [Hz], c: speed of light [mm/s], d: system delay expressed
    in mm of round-trip distance, L: code length in samples, delta_in: inlier
    radius [mm].
    """

    f: float = 1e9
    c: float = SPEED_OF_LIGHT_MM_S
    d: float = 600.0
    L: int = 128
    delta_in: float = 30.0

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError("sampling rate f must be positive")
        if not self.c > 0:
            raise ValueError("speed of light c must be positive")
        if self.L < 2:
            raise ValueError("code length L must be at least 2")
        if not self.delta_in > 0:
            raise ValueError("inlier radius delta_in must be positive")
        if not self.delta_max > 0:
            raise ValueError("delta_max = (L/f*c - d)/2 must be positive")

    @property
    def delta_max(self) -> float:
        return 0.5 * (self.L / self.f * self.c - self.d)

    @property
    def mm_per_sample(self) -> float:
        """Depth increment of one sample of time travel: c/(2f)."""
        return self.c / (2.0 * self.f)


class DepthEstimate(NamedTuple):
    t_argmax: float  # sample index in [1, L]
    delta: float     # depth in mm


def as_code(bits, L: int | None = None) -> np.ndarray:
    """Validate and return a code as a float64 array with values in [0, 1]."""
    arr = np.asarray(bits, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"code must be 1-D, got shape {arr.shape}")
    if L is not None and arr.shape[0] != L:
        raise ValueError(f"code length {arr.shape[0]} != configured L={L}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("code contains non-finite values")
    if arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ValueError("code values must lie in [0, 1]")
    return arr


def is_hard(code: np.ndarray) -> bool:
    """True when every value is exactly 0 or 1."""
    return bool(np.all((code == 0.0) | (code == 1.0)))


def circular_correlate(a, b) -> np.ndarray:
    """Mean-centered circular correlation.

    rho[k-1] = sum_i (a[i]-mean a) * (b[(i+k-1) mod L]-mean b) for k = 1..L.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    ac = a - a.mean()
    bc = b - b.mean()
    # ifft(conj(fft(ac)) * fft(bc))[k] = sum_i ac[i] * bc[(i+k) mod L]
    rho = np.fft.irfft(np.conj(np.fft.rfft(ac)) * np.fft.rfft(bc), n=a.shape[0])
    return rho


def circular_correlate_batch(a, batch) -> np.ndarray:
    """circular_correlate of one code against each row of an n x L batch."""
    a = np.asarray(a, dtype=np.float64)
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != a.shape[0]:
        raise ValueError(f"batch shape {batch.shape} incompatible with code length {a.shape[0]}")
    ac = a - a.mean()
    bc = batch - batch.mean(axis=1, keepdims=True)
    fa = np.conj(np.fft.rfft(ac))
    return np.fft.irfft(fa[None, :] * np.fft.rfft(bc, axis=1), n=a.shape[0], axis=1)


def soft_argmax(rho) -> float:
    """Differentiable peak index: sum_k softmax(rho)[k] * k, k = 1..L."""
    rho = np.asarray(rho, dtype=np.float64)
    if not np.all(np.isfinite(rho)):
        raise ValueError("correlation profile contains non-finite values")
    e = np.exp(rho - rho.max())
    p = e / e.sum()
    k = np.arange(1, rho.shape[0] + 1, dtype=np.float64)
    return float(p @ k)


def hard_argmax(rho) -> int:
    """1-based index of the maximum; ties break to the lowest index."""
    rho = np.asarray(rho, dtype=np.float64)
    if not np.all(np.isfinite(rho)):
        raise ValueError("correlation profile contains non-finite values")
    return int(np.argmax(rho)) + 1


def depth_from_time(t: float, consts: CameraConstants) -> float:
    """Depth in mm from a (possibly fractional) 1-based sample index."""
    return 0.5 * (t / consts.f * consts.c - consts.d)


def circular_depth_distance(d1: float, d2: float, delta_max: float) -> float:
    """min(|d1-d2|, delta_max - |d1-d2|); depths wrap circularly at delta_max."""
    if not delta_max > 0:
        raise ValueError("delta_max must be positive")
    u = abs(d1 - d2)
    if u > delta_max:
        raise ValueError(f"|d1-d2|={u} exceeds delta_max={delta_max}: inputs outside camera range")
    return min(u, delta_max - u)


def inliers_rate(deltas: Sequence[float], delta_in: float,
                 circular: bool = False, delta_max: float | None = None) -> float:
    """Percentage of estimates within delta_in of the median.

    Default distance is plain |delta - median|; with circular=True the
    circular depth distance (requires delta_max) is used instead.
    """
    d = np.asarray(deltas, dtype=np.float64)
    if d.size == 0:
        raise ValueError("inliers_rate of an empty sequence")
    med = np.median(d)
    if circular:
        if delta_max is None:
            raise ValueError("circular inliers_rate requires delta_max")
        u = np.abs(d - med)
        dist = np.minimum(u, delta_max - u)
    else:
        dist = np.abs(d - med)
    return 100.0 * float(np.count_nonzero(dist <= delta_in)) / d.size


def per_bit_moments(batch) -> tuple[np.ndarray, np.ndarray]:
    """Per-bit sample mean and population variance along the batch axis."""
    b = np.asarray(batch, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] == 0:
        raise ValueError("batch must be a non-empty n x L matrix")
    return b.mean(axis=0), b.var(axis=0)


def estimate_depth_batch(transmitted, batch, consts: CameraConstants,
                         mode: str = "hard") -> list[DepthEstimate]:
    """Correlate each row against the transmitted code and convert the peak to depth."""
    if mode not in ("soft", "hard"):
        raise ValueError(f"mode must be 'soft' or 'hard', got {mode!r}")
    a = as_code(transmitted, consts.L)
    b = np.asarray(batch, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] == 0:
        raise ValueError("batch must be a non-empty n x L matrix")
    if b.shape[1] != consts.L:
        raise ValueError(f"batch row length {b.shape[1]} != L={consts.L}")
    rho = circular_correlate_batch(a, b)
    if mode == "hard":
        ts = np.argmax(rho, axis=1) + 1.0
    else:
        e = np.exp(rho - rho.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        ts = p @ np.arange(1, consts.L + 1, dtype=np.float64)
    return [DepthEstimate(float(t), depth_from_time(float(t), consts)) for t in ts]
