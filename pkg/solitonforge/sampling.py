"""Seeded randomness and smooth random test functions.

Every random draw in the package goes through a ``numpy.random.Generator``
backed by PCG64: a 128-bit linear congruential state advanced by a fixed
multiplier, with the XSL-RR output function producing 64-bit words. A run is
fully described by one 64-bit seed; sweep points derive independent child
streams from ``SeedSequence(seed, spawn_key=(index,))``.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence


def make_rng(seed: int, *keys: int) -> Generator:
    """PCG64 stream for seed, or the child stream addressed by keys."""
    if not keys:
        return Generator(PCG64(seed))
    return Generator(PCG64(SeedSequence(seed, spawn_key=keys)))


@dataclass(frozen=True)
class BumpSum:
    """sum_k height_k * exp(-(t - center_k)^2 / (2 width_k^2))"""

    centers: np.ndarray = field(repr=False)
    widths: np.ndarray = field(repr=False)
    heights: np.ndarray = field(repr=False)

    def evaluate(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Values and the first two t-derivatives, exact."""
        z = (t[None, :] - self.centers[:, None]) / self.widths[:, None]
        g = self.heights[:, None] * np.exp(-0.5 * z * z)
        w = self.widths[:, None]
        f = g.sum(axis=0)
        f_t = (-z / w * g).sum(axis=0)
        f_tt = ((z * z - 1.0) / (w * w) * g).sum(axis=0)
        return f, f_t, f_tt

    def scaled(self, factor: float) -> "BumpSum":
        return BumpSum(centers=self.centers, widths=self.widths, heights=self.heights * factor)


def gaussian_bumps(
    rng: Generator,
    window: Tuple[float, float],
    h: float,
    count: Tuple[int, int] = (3, 8),
    width_range: Optional[Tuple[float, float]] = None,
) -> BumpSum:
    """Random bump sum centered in window; widths from 4h to a sixth of the window unless width_range is given."""
    lo, hi = window
    if not hi > lo:
        raise ValueError(f"empty sampling window [{lo}, {hi}]")
    k = int(rng.integers(count[0], count[1] + 1))
    if width_range is None:
        min_width = 4.0 * h
        max_width = max(2.0 * min_width, (hi - lo) / 6.0)
    else:
        min_width, max_width = width_range
    return BumpSum(
        centers=rng.uniform(lo, hi, size=k),
        widths=rng.uniform(min_width, max_width, size=k),
        heights=rng.standard_normal(size=k),
    )
