"""Frame generation and multi-vehicle trajectory roll-out.

A fitted pattern generates frames through the three-step procedure
(count, positions, velocities) and drives trajectory simulation: each
vehicle advances along the pattern's posterior mean velocity field with
an explicit Euler step, terminating when it leaves the region of
interest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .empirical import CountDistribution, PositionDistribution
from .gp import FieldPosterior
from .gibbs import PatternCache, ScoreBreakdown, held_out_scores
from .model import Frame, MixtureState, PriorConfig, RegionOfInterest

__all__ = [
    "Trajectory",
    "generate_frame",
    "simulate_trajectories",
    "classify_frame",
]


@dataclass(frozen=True)
class Trajectory:
    """One vehicle's simulated track at a uniform time step.

    Arrays are index-aligned; ``times`` starts at zero and advances by a
    constant ``dt``.  Every recorded sample lies inside the region the
    roll-out was run on.
    """

    vehicle_id: int
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    vxs: np.ndarray
    vys: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.times)
        for name in ("xs", "ys", "vxs", "vys"):
            if len(getattr(self, name)) != n:
                raise ValueError("trajectory arrays must share one length")
        if n > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0]):
                raise ValueError("timestamps must increase with constant spacing")

    @property
    def n_samples(self) -> int:
        return len(self.times)


def generate_frame(
    posterior: FieldPosterior,
    count_dist: CountDistribution,
    position_dist: PositionDistribution,
    rng: np.random.Generator,
    frame_id: int = 0,
    timestamp: float = 0.0,
) -> Frame:
    """Draw one frame from the generative model of a fitted pattern.

    The vehicle count comes from the empirical count distribution, each
    position from the bin histogram, and the velocities jointly from the
    pattern's GP posterior at those positions (one correlated draw per
    axis).
    """
    l = count_dist.sample(rng)
    positions = np.array([position_dist.sample(rng) for _ in range(l)])
    velocities = posterior.sample(positions, rng)
    return Frame(
        frame_id=frame_id,
        timestamp=timestamp,
        vehicles=tuple(
            (positions[j, 0], positions[j, 1], velocities[j, 0], velocities[j, 1])
            for j in range(l)
        ),
    )


def simulate_trajectories(
    posterior: FieldPosterior,
    initial: Frame,
    dt: float,
    n_steps: int,
    roi: RegionOfInterest,
    scheme: str = "euler",
    mode: str = "mean",
    rng: np.random.Generator | None = None,
) -> list[Trajectory]:
    """Roll every vehicle of ``initial`` forward along the velocity field.

    Each step evaluates the field at the current positions and advances
    ``dt`` times the velocity (``scheme="midpoint"`` re-evaluates at the
    half step).  ``mode="sample"`` follows a sampled field realization per
    step instead of the posterior mean and needs ``rng``.  A vehicle
    whose next position leaves the region stops at its last inside
    sample; vehicles do not interact during roll-out.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if scheme not in ("euler", "midpoint"):
        raise ValueError(f"unknown integration scheme {scheme!r}")
    if mode not in ("mean", "sample"):
        raise ValueError(f"unknown roll-out mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sampled roll-out needs an rng")
    if not initial.inside(roi):
        raise ValueError("initial frame must lie inside the region of interest")

    def field_at(points: np.ndarray) -> np.ndarray:
        if mode == "mean":
            return posterior.mean(points)
        return posterior.sample(points, rng)

    n_vehicles = initial.n_vehicles
    pos = initial.positions.copy()
    vel = field_at(pos)
    samples: list[list[tuple[float, float, float, float, float]]] = [
        [(0.0, pos[j, 0], pos[j, 1], vel[j, 0], vel[j, 1])]
        for j in range(n_vehicles)
    ]
    alive = np.ones(n_vehicles, dtype=bool)
    for step in range(1, n_steps + 1):
        if not alive.any():
            break
        idx = np.nonzero(alive)[0]
        v_now = field_at(pos[idx])
        if scheme == "midpoint":
            half_pos = pos[idx] + 0.5 * dt * v_now
            inside_half = np.array(
                [roi.contains(p[0], p[1]) for p in half_pos], dtype=bool
            )
            v_step = v_now.copy()
            if inside_half.any():
                v_step[inside_half] = field_at(half_pos[inside_half])
        else:
            v_step = v_now
        new_pos = pos[idx] + dt * v_step
        if np.any(~np.isfinite(new_pos)):
            raise ArithmeticError(
                f"non-finite position at step {step}; check the field and dt"
            )
        t = step * dt
        for row, j in enumerate(idx):
            x, y = new_pos[row]
            if not roi.contains(x, y):
                alive[j] = False
                continue
            pos[j] = (x, y)
        survivors = np.nonzero(alive)[0]
        if survivors.size:
            v_rec = field_at(pos[survivors])
            for row, j in enumerate(survivors):
                samples[j].append(
                    (t, pos[j, 0], pos[j, 1], v_rec[row, 0], v_rec[row, 1])
                )
    out = []
    for j in range(n_vehicles):
        arr = np.array(samples[j], dtype=float)
        out.append(
            Trajectory(
                vehicle_id=j,
                times=arr[:, 0],
                xs=arr[:, 1],
                ys=arr[:, 2],
                vxs=arr[:, 3],
                vys=arr[:, 4],
            )
        )
    return out


def classify_frame(
    frame: Frame,
    state: MixtureState,
    frames,
    count_dist: CountDistribution,
    position_dist: PositionDistribution,
    prior: PriorConfig,
    rng: np.random.Generator,
    cache: PatternCache | None = None,
) -> tuple[int, ScoreBreakdown]:
    """MAP pattern assignment for a frame without touching the state.

    Scores every live pattern plus the new-pattern option exactly as the
    sampler would for an unseen frame and returns the winning id together
    with the full score breakdown (``NEW_PATTERN`` when the new-pattern
    option wins).
    """
    scores = held_out_scores(
        frame, state, frames, count_dist, position_dist, prior, rng, cache=cache
    )
    return scores.map_choice(), scores
