"""Shared domain types for the motion-pattern mixture model.

A *frame* is one time slice of a traffic scene: the positions and
velocities of every vehicle inside a fixed rectangular region of
interest.  A *motion pattern* is one mixture component: a Gaussian
process mapping position to velocity, described by its kernel
hyperparameters and the set of frames currently assigned to it.  The
mixture state ties the two together with the assignment vector and the
concentration parameter of the nonparametric prior.

Types here are plain data with invariant checks; all algorithms live in
the sibling modules.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RegionOfInterest",
    "Frame",
    "KernelParams",
    "MotionPattern",
    "MixtureState",
    "PriorConfig",
    "stack_frames",
    "validate_state",
]


@dataclass(frozen=True)
class RegionOfInterest:
    """Axis-aligned study rectangle with its position-histogram grid.

    ``n_bins_x`` and ``n_bins_y`` define the grid used by the empirical
    position distribution.  Bins tile the rectangle disjointly and
    exhaustively; a point on a shared edge belongs to the lower-indexed
    bin.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    n_bins_x: int = 20
    n_bins_y: int = 20

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate region: [{self.x_min}, {self.x_max}] x "
                f"[{self.y_min}, {self.y_max}]"
            )
        if self.n_bins_x < 1 or self.n_bins_y < 1:
            raise ValueError("bin counts must be positive")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def n_bins(self) -> int:
        return self.n_bins_x * self.n_bins_y

    @property
    def bin_area(self) -> float:
        return (self.width / self.n_bins_x) * (self.height / self.n_bins_y)

    def contains(self, x: float, y: float) -> bool:
        """Closed-rectangle membership test."""
        return (
            self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max
        )

    def bin_index(self, x, y):
        """Flat bin index (row-major, y outer) for points inside the region.

        Boundary points go to the lower-indexed bin, so the bins
        partition the rectangle exactly.  Accepts scalars or arrays.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.any(x < self.x_min) or np.any(x > self.x_max) or np.any(
            y < self.y_min
        ) or np.any(y > self.y_max):
            raise ValueError("point outside the region of interest")
        ex = np.linspace(self.x_min, self.x_max, self.n_bins_x + 1)
        ey = np.linspace(self.y_min, self.y_max, self.n_bins_y + 1)
        ix = np.clip(np.searchsorted(ex, x, side="left") - 1, 0, self.n_bins_x - 1)
        iy = np.clip(np.searchsorted(ey, y, side="left") - 1, 0, self.n_bins_y - 1)
        out = iy * self.n_bins_x + ix
        return int(out) if out.ndim == 0 else out

    def bin_rect(self, index: int) -> tuple[float, float, float, float]:
        """(x_lo, x_hi, y_lo, y_hi) of one histogram bin."""
        if not 0 <= index < self.n_bins:
            raise ValueError(f"bin index {index} out of range")
        iy, ix = divmod(index, self.n_bins_x)
        dx = self.width / self.n_bins_x
        dy = self.height / self.n_bins_y
        return (
            self.x_min + ix * dx,
            self.x_min + (ix + 1) * dx,
            self.y_min + iy * dy,
            self.y_min + (iy + 1) * dy,
        )


@dataclass(frozen=True)
class Frame:
    """One time slice: every vehicle's position and velocity in the region.

    ``vehicles`` is a sequence of ``(x, y, v_x, v_y)`` tuples.  Positions
    are in the dataset's length unit, velocities in that unit per second.
    """

    frame_id: int
    timestamp: float
    vehicles: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self) -> None:
        if len(self.vehicles) < 1:
            raise ValueError("a frame must contain at least one vehicle")
        object.__setattr__(
            self,
            "vehicles",
            tuple(tuple(float(c) for c in v) for v in self.vehicles),
        )
        for v in self.vehicles:
            if len(v) != 4:
                raise ValueError("each vehicle is a (x, y, v_x, v_y) tuple")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    @cached_property
    def positions(self) -> np.ndarray:
        """(l, 2) array of vehicle positions, index-aligned with ``vehicles``."""
        arr = np.array([(v[0], v[1]) for v in self.vehicles], dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def velocities(self) -> np.ndarray:
        """(l, 2) array of vehicle velocities, index-aligned with ``vehicles``."""
        arr = np.array([(v[2], v[3]) for v in self.vehicles], dtype=float)
        arr.setflags(write=False)
        return arr

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Column views ``(V_x, V_y, X, Y)``, index-aligned with the vehicles."""
        return (
            self.velocities[:, 0],
            self.velocities[:, 1],
            self.positions[:, 0],
            self.positions[:, 1],
        )

    @classmethod
    def from_stacked(
        cls,
        frame_id: int,
        timestamp: float,
        v_x: Sequence[float],
        v_y: Sequence[float],
        x: Sequence[float],
        y: Sequence[float],
    ) -> "Frame":
        """Invert :meth:`stacked`."""
        if not (len(v_x) == len(v_y) == len(x) == len(y)):
            raise ValueError("stacked vectors must share one length")
        return cls(
            frame_id=frame_id,
            timestamp=timestamp,
            vehicles=tuple(zip(x, y, v_x, v_y)),
        )

    def inside(self, roi: RegionOfInterest) -> bool:
        return all(roi.contains(v[0], v[1]) for v in self.vehicles)


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel hyperparameters for one motion pattern.

    ``sigma_sq_x`` / ``sigma_sq_y`` scale the velocity variance per axis,
    ``w_x`` / ``w_y`` are the spatial correlation lengths shared by both
    velocity axes, and ``sigma_n_sq`` is the observation-noise variance.
    """

    sigma_sq_x: float
    sigma_sq_y: float
    w_x: float
    w_y: float
    sigma_n_sq: float

    def __post_init__(self) -> None:
        for name in ("sigma_sq_x", "sigma_sq_y", "w_x", "w_y", "sigma_n_sq"):
            if not getattr(self, name) > 0:
                raise ValueError(f"kernel parameter {name} must be positive")

    def sigma_sq(self, axis: int) -> float:
        return self.sigma_sq_x if axis == 0 else self.sigma_sq_y

    def with_lengths(self, w_x: float, w_y: float) -> "KernelParams":
        return replace(self, w_x=w_x, w_y=w_y)


@dataclass
class MotionPattern:
    """One mixture component: kernel hyperparameters plus its member frames.

    ``prior_mean_x`` / ``prior_mean_y`` are the constant prior mean
    velocities used when conditioning the pattern's Gaussian process.
    """

    pattern_id: int
    member_frames: set[int]
    params: KernelParams
    prior_mean_x: float
    prior_mean_y: float

    @property
    def n_frames(self) -> int:
        return len(self.member_frames)

    def prior_mean(self, axis: int) -> float:
        return self.prior_mean_x if axis == 0 else self.prior_mean_y


@dataclass
class MixtureState:
    """Full sampler state: assignments, live patterns, and concentration.

    ``assignments[i]`` is the id of the pattern that frame ``i`` belongs
    to.  Pattern ids are stable integers that are never reused after a
    pattern is pruned, so ``next_pattern_id`` only grows.
    """

    assignments: np.ndarray
    patterns: dict[int, MotionPattern]
    alpha: float
    next_pattern_id: int = field(default=0)

    def __post_init__(self) -> None:
        self.assignments = np.asarray(self.assignments, dtype=int)
        if self.next_pattern_id <= max(self.patterns, default=0):
            self.next_pattern_id = max(self.patterns, default=0) + 1

    @property
    def n_frames(self) -> int:
        return int(self.assignments.size)

    @property
    def n_patterns(self) -> int:
        return len(self.patterns)

    def live_ids(self) -> list[int]:
        return sorted(self.patterns)

    def counts(self) -> dict[int, int]:
        return {k: p.n_frames for k, p in sorted(self.patterns.items())}


@dataclass(frozen=True)
class PriorConfig:
    """Hyperpriors and run settings for the Gibbs sampler.

    ``a`` and ``b`` are the shape and scale of the gamma prior on the
    kernel length scales.  ``mu0_*`` and ``sigma0_sq_*`` are the
    new-pattern prior mean and variance per velocity axis; left as None
    they are resolved to the dataset mean and variance at fit time.
    ``n_mc`` is the Monte-Carlo sample count for the new-pattern
    likelihood integral.
    """

    a: float = 10.0
    b: float = 1.0
    sigma_n_sq: float = 1.0
    mu0_x: float | None = None
    mu0_y: float | None = None
    sigma0_sq_x: float | None = None
    sigma0_sq_y: float | None = None
    n_mc: int = 50
    n_gibbs: int = 100
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise ValueError("gamma prior parameters a, b must be positive")
        if self.sigma_n_sq <= 0:
            raise ValueError("observation-noise variance must be positive")
        if self.n_mc < 1:
            raise ValueError("n_mc must be at least 1")
        if self.n_gibbs < 0:
            raise ValueError("n_gibbs must be nonnegative")

    def resolved(self, frames: Sequence[Frame]) -> "PriorConfig":
        """Fill data-dependent defaults from the dataset.

        The new-pattern prior mean and variance default to the mean and
        variance of all observed velocities, per axis.
        """
        vel = np.concatenate([f.velocities for f in frames], axis=0)
        mean = vel.mean(axis=0)
        var = vel.var(axis=0)
        # A degenerate axis (constant velocities) still needs a usable prior.
        var = np.maximum(var, 1e-12)
        return replace(
            self,
            mu0_x=self.mu0_x if self.mu0_x is not None else float(mean[0]),
            mu0_y=self.mu0_y if self.mu0_y is not None else float(mean[1]),
            sigma0_sq_x=(
                self.sigma0_sq_x
                if self.sigma0_sq_x is not None
                else float(var[0])
            ),
            sigma0_sq_y=(
                self.sigma0_sq_y
                if self.sigma0_sq_y is not None
                else float(var[1])
            ),
        )


def stack_frames(frames: Iterable[Frame]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate frames into (positions, velocities) arrays of shape (n, 2).

    Frames are stacked in iteration order; vehicles keep their within-frame
    order.
    """
    frames = list(frames)
    if not frames:
        return np.empty((0, 2)), np.empty((0, 2))
    pos = np.concatenate([f.positions for f in frames], axis=0)
    vel = np.concatenate([f.velocities for f in frames], axis=0)
    return pos, vel


def validate_state(state: MixtureState) -> list[str]:
    """Diagnostic invariant check; returns the violations, never mutates.

    An empty list means the bookkeeping is consistent: counts add up to
    the frame total, every assignment references a live pattern, every
    live pattern is non-empty, and membership sets mirror the assignment
    vector.
    """
    problems: list[str] = []
    n = state.n_frames
    total = sum(p.n_frames for p in state.patterns.values())
    if total != n:
        problems.append(
            f"member counts sum to {total}, expected N={n}"
        )
    if state.n_patterns > n:
        problems.append(
            f"{state.n_patterns} live patterns exceed N={n} frames"
        )
    if not state.alpha > 0:
        problems.append(f"alpha={state.alpha} is not positive")
    live = set(state.patterns)
    for i, k in enumerate(state.assignments):
        if int(k) not in live:
            problems.append(
                f"frame {i} assigned to pruned pattern {int(k)}"
            )
        elif i not in state.patterns[int(k)].member_frames:
            problems.append(
                f"frame {i} missing from member set of pattern {int(k)}"
            )
    for k, pat in state.patterns.items():
        if pat.n_frames == 0:
            problems.append(f"pattern {k} is live but empty")
        if pat.pattern_id != k:
            problems.append(
                f"pattern keyed {k} carries id {pat.pattern_id}"
            )
        for i in pat.member_frames:
            if not (0 <= i < n) or int(state.assignments[i]) != k:
                problems.append(
                    f"pattern {k} lists frame {i} not assigned to it"
                )
    if state.next_pattern_id <= max(live, default=-1):
        problems.append(
            "next_pattern_id would reuse a live pattern id"
        )
    return problems
