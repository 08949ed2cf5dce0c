"""Synthetic trajectory data from planted analytic velocity fields.

The generator integrates vehicles along known fields and emits a
trajectory CSV (positions only, so the ingestion path has to derive
velocities) together with a ground-truth labels sidecar mapping each
extracted frame to the field that produced it.  Time is divided into
segments; each segment spawns fresh vehicles and moves them along one
field, cycling through the planted fields round-robin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import RegionOfInterest

__all__ = [
    "AnalyticField",
    "constant_field",
    "rotation_field",
    "shear_field",
    "standard_fields",
    "SynthSpec",
    "generate_trajectories",
    "write_synthetic_csv",
]


@dataclass(frozen=True)
class AnalyticField:
    """A named closed-form velocity field ``(x, y) -> (v_x, v_y)``."""

    name: str
    velocity: Callable[[np.ndarray], np.ndarray]


def constant_field(vx: float, vy: float, name: str = "constant") -> AnalyticField:
    def vel(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.tile([vx, vy], (points.shape[0], 1)).astype(float)

    return AnalyticField(name=name, velocity=vel)


def rotation_field(
    cx: float, cy: float, omega: float, name: str = "rotation"
) -> AnalyticField:
    """Rigid rotation about ``(cx, cy)`` at angular rate ``omega`` (rad/s)."""

    def vel(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.column_stack(
            [-omega * (points[:, 1] - cy), omega * (points[:, 0] - cx)]
        )

    return AnalyticField(name=name, velocity=vel)


def shear_field(
    cy: float, rate: float, base_vx: float = 0.0, name: str = "shear"
) -> AnalyticField:
    """Horizontal flow whose speed grows linearly with distance from ``cy``."""

    def vel(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.column_stack(
            [base_vx + rate * (points[:, 1] - cy), np.zeros(points.shape[0])]
        )

    return AnalyticField(name=name, velocity=vel)


def standard_fields(kind: str, roi: RegionOfInterest) -> list[AnalyticField]:
    """Planted field sets by name.

    ``three-field`` is the clustering benchmark: eastbound flow,
    northbound flow, and a rotation about the region center, mutually far
    apart in velocity space almost everywhere.
    """
    cx = 0.5 * (roi.x_min + roi.x_max)
    cy = 0.5 * (roi.y_min + roi.y_max)
    speed = 8.0
    if kind == "constant":
        return [constant_field(speed, 0.0, name="east")]
    if kind == "rotation":
        return [rotation_field(cx, cy, omega=2.0 * speed / max(roi.width, roi.height))]
    if kind == "shear":
        return [shear_field(cy, rate=2.0 * speed / roi.height)]
    if kind == "three-field":
        return [
            constant_field(speed, 0.0, name="east"),
            constant_field(0.0, speed, name="north"),
            rotation_field(
                cx, cy, omega=2.0 * speed / max(roi.width, roi.height), name="spin"
            ),
        ]
    raise ValueError(f"unknown synthetic field kind {kind!r}")


@dataclass(frozen=True)
class SynthSpec:
    """Settings for one synthetic dataset.

    ``n_frames`` extracted frames at spacing ``dt`` come out of
    ``n_frames / frames_per_segment`` segments; ``substeps`` raw samples
    are written per frame interval so derived velocities are accurate.
    """

    roi: RegionOfInterest
    n_frames: int
    dt: float = 0.5
    frames_per_segment: int = 10
    substeps: int = 5
    vehicles_min: int = 2
    vehicles_max: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ValueError("n_frames must be positive")
        if self.n_frames % self.frames_per_segment:
            raise ValueError("n_frames must be a multiple of frames_per_segment")
        if not (1 <= self.vehicles_min <= self.vehicles_max):
            raise ValueError("bad vehicle count range")


def _spawn_positions(
    field: AnalyticField,
    spec: SynthSpec,
    count: int,
    horizon: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Start positions whose forward integration stays inside the region.

    Rejection-samples uniform starts, checking a coarse forward preview;
    falls back to the region center if a start is hard to find.
    """
    roi = spec.roi
    out = np.empty((count, 2))
    for j in range(count):
        placed = False
        for _ in range(200):
            p = np.array(
                [
                    rng.uniform(roi.x_min, roi.x_max),
                    rng.uniform(roi.y_min, roi.y_max),
                ]
            )
            q = p.copy()
            ok = True
            preview_dt = horizon / 20.0
            for _ in range(20):
                q = q + preview_dt * field.velocity(q)[0]
                if not roi.contains(q[0], q[1]):
                    ok = False
                    break
            if ok:
                out[j] = p
                placed = True
                break
        if not placed:
            out[j] = (0.5 * (roi.x_min + roi.x_max), 0.5 * (roi.y_min + roi.y_max))
    return out


def generate_trajectories(
    fields: Sequence[AnalyticField], spec: SynthSpec
) -> tuple[list[tuple[str, float, float, float]], list[tuple[int, int, str]]]:
    """Integrate vehicles along the planted fields.

    Returns ``(rows, labels)`` where rows are ``(vehicle_id, t, x, y)``
    samples at the fine substep resolution and labels map each frame
    index (one per ``dt`` tick) to ``(frame_index, field_index, field_name)``.
    """
    rng = np.random.default_rng(spec.seed)
    rows: list[tuple[str, float, float, float]] = []
    labels: list[tuple[int, int, str]] = []
    fine_dt = spec.dt / spec.substeps
    seg_duration = spec.frames_per_segment * spec.dt
    n_segments = spec.n_frames // spec.frames_per_segment
    vehicle_counter = 0
    for seg in range(n_segments):
        field_idx = seg % len(fields)
        field = fields[field_idx]
        t_start = seg * seg_duration
        count = int(rng.integers(spec.vehicles_min, spec.vehicles_max + 1))
        pos = _spawn_positions(field, spec, count, seg_duration, rng)
        ids = [str(vehicle_counter + j) for j in range(count)]
        vehicle_counter += count
        n_samples = spec.frames_per_segment * spec.substeps
        for s in range(n_samples):
            t = t_start + s * fine_dt
            # Samples in the trailing half-tick of the segment would snap
            # onto the next segment's first tick and pollute its frame;
            # keep only samples whose nearest tick this segment owns.
            own_tick = int(np.floor(s * fine_dt / spec.dt + 0.5))
            if own_tick <= spec.frames_per_segment - 1:
                for j in range(count):
                    rows.append((ids[j], t, float(pos[j, 0]), float(pos[j, 1])))
            vel = field.velocity(pos)
            pos = pos + fine_dt * vel
            # Runaway vehicles park at the boundary so every tick keeps
            # its full vehicle complement inside the region.
            pos[:, 0] = np.clip(pos[:, 0], spec.roi.x_min, spec.roi.x_max)
            pos[:, 1] = np.clip(pos[:, 1], spec.roi.y_min, spec.roi.y_max)
        for f in range(spec.frames_per_segment):
            frame_index = seg * spec.frames_per_segment + f
            labels.append((frame_index, field_idx, field.name))
    return rows, labels


def write_synthetic_csv(
    fields: Sequence[AnalyticField],
    spec: SynthSpec,
    data_path,
    labels_path=None,
) -> tuple[int, int]:
    """Write the trajectory CSV and optional ground-truth labels sidecar.

    Returns ``(n_rows, n_frames)``.  The CSV has columns
    ``vehicle_id,timestamp,x,y``; the sidecar has
    ``frame_id,field_index,field_name``.
    """
    rows, labels = generate_trajectories(fields, spec)
    with open(data_path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["vehicle_id", "timestamp", "x", "y"])
        for vid, t, x, y in rows:
            writer.writerow([vid, repr(t), repr(x), repr(y)])
    if labels_path is not None:
        with open(labels_path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame_id", "field_index", "field_name"])
            for frame_index, field_idx, name in labels:
                writer.writerow([frame_index, field_idx, name])
    return len(rows), len(labels)
