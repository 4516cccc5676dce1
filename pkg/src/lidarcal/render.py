"""Raster and histogram emitters for the visual artifacts.

Binary PGM (P5): one image row per code, pixel 255 for bit 1 and 0 for bit 0.
Depth histograms are CSVs of (bin_left_mm, count) over 200 bins spanning
[0, delta_max].
"""

from __future__ import annotations

import numpy as np

HISTOGRAM_BINS = 200


def codes_to_pgm(batch) -> bytes:
    """Stack of codes (n x L, values in [0,1]) -> binary PGM bytes.

    Soft values are scaled to the 0..255 gray ramp; hard codes map to pure
    black/white.
    """
    b = np.asarray(batch, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] == 0 or b.shape[1] == 0:
        raise ValueError("raster input must be a non-empty n x L matrix")
    if b.min() < 0.0 or b.max() > 1.0:
        raise ValueError("raster values must lie in [0, 1]")
    pixels = np.rint(b * 255.0).astype(np.uint8)
    header = f"P5\n{b.shape[1]} {b.shape[0]}\n255\n".encode()
    return header + pixels.tobytes()


def write_pgm(path, batch) -> None:
    with open(path, "wb") as f:
        f.write(codes_to_pgm(batch))


def depth_histogram(deltas, delta_max: float, bins: int = HISTOGRAM_BINS
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(bin_left_mm, count) arrays over [0, delta_max]; out-of-range values clipped in."""
    d = np.clip(np.asarray(deltas, dtype=np.float64), 0.0, delta_max)
    counts, edges = np.histogram(d, bins=bins, range=(0.0, delta_max))
    return edges[:-1], counts


def histogram_csv_lines(deltas, delta_max: float) -> list[str]:
    lefts, counts = depth_histogram(deltas, delta_max)
    lines = ["bin_left_mm,count"]
    lines += [f"{left:.6f},{int(c)}" for left, c in zip(lefts, counts)]
    return lines
