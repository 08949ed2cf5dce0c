"""Shared fixtures and independent helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from motionmix import Frame, RegionOfInterest


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index from the pair-counting contingency table.

    Implemented directly from the definition so clustering checks do not
    depend on the code under test.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    assert a.shape == b.shape
    cats_a = {c: i for i, c in enumerate(sorted(set(a.tolist())))}
    cats_b = {c: i for i, c in enumerate(sorted(set(b.tolist())))}
    table = np.zeros((len(cats_a), len(cats_b)), dtype=np.int64)
    for x, y in zip(a, b):
        table[cats_a[x], cats_b[y]] += 1

    def comb2(n):
        return n * (n - 1) // 2

    sum_ij = sum(comb2(int(n)) for n in table.ravel())
    sum_i = sum(comb2(int(n)) for n in table.sum(axis=1))
    sum_j = sum(comb2(int(n)) for n in table.sum(axis=0))
    total = comb2(int(table.sum()))
    expected = sum_i * sum_j / total
    max_index = 0.5 * (sum_i + sum_j)
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)


def frames_from_field(
    velocity,
    n_frames: int,
    roi: RegionOfInterest,
    rng: np.random.Generator,
    vehicles=(2, 4),
    noise_sd: float = 0.0,
    start_id: int = 0,
) -> list[Frame]:
    """Frames with positions uniform in the region and field velocities."""
    frames = []
    for i in range(n_frames):
        l = int(rng.integers(vehicles[0], vehicles[1] + 1))
        pos = np.column_stack(
            [
                rng.uniform(roi.x_min, roi.x_max, size=l),
                rng.uniform(roi.y_min, roi.y_max, size=l),
            ]
        )
        vel = np.atleast_2d(velocity(pos))
        if noise_sd > 0:
            vel = vel + noise_sd * rng.standard_normal(vel.shape)
        frames.append(
            Frame(
                frame_id=start_id + i,
                timestamp=(start_id + i) * 0.5,
                vehicles=tuple(
                    (pos[j, 0], pos[j, 1], vel[j, 0], vel[j, 1]) for j in range(l)
                ),
            )
        )
    return frames


def const_velocity(vx: float, vy: float):
    def velocity(points):
        points = np.atleast_2d(points)
        return np.tile([float(vx), float(vy)], (points.shape[0], 1))

    return velocity


@pytest.fixture
def unit_roi() -> RegionOfInterest:
    return RegionOfInterest(0.0, 100.0, 0.0, 100.0, 4, 4)
