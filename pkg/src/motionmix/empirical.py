"""Empirical generative distributions for vehicle counts and positions.

The generative story for one frame draws the vehicle count from the
observed count frequencies, then each position from a bin histogram over
the region of interest with uniform placement inside the chosen bin.
Both distributions are fitted once from the data and then frozen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Frame, RegionOfInterest

__all__ = [
    "LOG_ZERO",
    "CountDistribution",
    "PositionDistribution",
    "fit_count_dist",
    "fit_position_dist",
]

# Finite stand-in for log(0): the log of the smallest positive normal
# float.  Keeps sums of log-probabilities ordered instead of collapsing
# every candidate to -inf when a single factor has no empirical support.
LOG_ZERO = float(np.log(np.finfo(np.float64).tiny))


@dataclass(frozen=True)
class CountDistribution:
    """Point masses over observed per-frame vehicle counts."""

    counts: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=int)
        probs = np.asarray(self.probs, dtype=float)
        if counts.size != probs.size or counts.size == 0:
            raise ValueError("counts and probs must be non-empty and aligned")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ValueError("count probabilities must sum to 1")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "probs", probs)

    def prob(self, l: int) -> float:
        hit = np.nonzero(self.counts == int(l))[0]
        return float(self.probs[hit[0]]) if hit.size else 0.0

    def log_prob(self, l: int) -> float:
        p = self.prob(l)
        return float(np.log(p)) if p > 0.0 else LOG_ZERO

    def sample(self, rng: np.random.Generator) -> int:
        return int(self.counts[rng.choice(self.counts.size, p=self.probs)])


@dataclass(frozen=True)
class PositionDistribution:
    """Bin histogram over the region with uniform placement within a bin.

    ``weights`` is a flat row-major (y outer) array over the region's
    bin grid; bins without observations carry zero weight.
    """

    roi: RegionOfInterest
    weights: np.ndarray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        if weights.size != self.roi.n_bins:
            raise ValueError(
                f"expected {self.roi.n_bins} bin weights, got {weights.size}"
            )
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValueError("bin weights must sum to 1")
        object.__setattr__(self, "weights", weights)

    def log_density(self, x: float, y: float) -> float:
        """Log spatial density: bin weight divided by bin area.

        Raises ``ValueError`` outside the region; returns :data:`LOG_ZERO`
        in zero-weight bins.
        """
        w = float(self.weights[self.roi.bin_index(x, y)])
        if w <= 0.0:
            return LOG_ZERO
        return float(np.log(w) - np.log(self.roi.bin_area))

    def sample(self, rng: np.random.Generator) -> tuple[float, float]:
        """Draw a bin by weight, then a uniform point inside its rectangle."""
        idx = int(rng.choice(self.weights.size, p=self.weights))
        x_lo, x_hi, y_lo, y_hi = self.roi.bin_rect(idx)
        return (
            float(rng.uniform(x_lo, x_hi)),
            float(rng.uniform(y_lo, y_hi)),
        )


def fit_count_dist(frames: Sequence[Frame]) -> CountDistribution:
    """Frequencies of the observed per-frame vehicle counts."""
    if not frames:
        raise ValueError("cannot fit a count distribution on an empty dataset")
    observed = np.array(sorted({f.n_vehicles for f in frames}), dtype=int)
    tallies = np.zeros(observed.size, dtype=float)
    lookup = {int(c): i for i, c in enumerate(observed)}
    for f in frames:
        tallies[lookup[f.n_vehicles]] += 1.0
    return CountDistribution(counts=observed, probs=tallies / tallies.sum())


def fit_position_dist(
    frames: Sequence[Frame], roi: RegionOfInterest
) -> PositionDistribution:
    """Per-bin weights proportional to vehicle observations in each bin."""
    if not frames:
        raise ValueError("cannot fit a position distribution on an empty dataset")
    tallies = np.zeros(roi.n_bins, dtype=float)
    for f in frames:
        idx = roi.bin_index(f.positions[:, 0], f.positions[:, 1])
        np.add.at(tallies, np.atleast_1d(idx), 1.0)
    return PositionDistribution(roi=roi, weights=tallies / tallies.sum())
