"""Trajectory ingestion, frame extraction, and model/export serialization.

Input is delimited text with one row per vehicle observation; the column
names, delimiter, and units are configuration so that different dataset
conventions ingest through one path.  Velocities missing from the input
are derived by central finite differences on each vehicle's raw track.

The model file is a versioned JSON document (see ``docs/model.schema.md``)
holding everything needed to classify and simulate later: the mixture
state, the training frames, both empirical distributions, the region,
and the prior configuration.  Numbers are serialized at full precision,
so a load/save round trip is exact.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .empirical import CountDistribution, PositionDistribution
from .gp import VectorField
from .model import (
    Frame,
    KernelParams,
    MixtureState,
    MotionPattern,
    PriorConfig,
    RegionOfInterest,
)
from .simulate import Trajectory

__all__ = [
    "ConfigError",
    "IngestionError",
    "ModelFormatError",
    "ColumnMapping",
    "UnitConfig",
    "TrajectoryRecord",
    "ParseReport",
    "ExtractionReport",
    "ModelBundle",
    "parse_trajectory_csv",
    "parse_frame_csv",
    "extract_frames",
    "save_model",
    "load_model",
    "export_field",
    "read_field",
    "export_trajectories",
    "export_proportions",
    "export_trace",
]

SCHEMA_NAME = "motionmix-model"
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Bad run configuration: missing columns, malformed settings."""


class IngestionError(RuntimeError):
    """Input data could not be ingested (too many bad rows, empty data)."""


class ModelFormatError(RuntimeError):
    """Model file is missing sections, corrupt, or of an unknown version."""


@dataclass(frozen=True)
class ColumnMapping:
    """Names of the input columns; velocity columns are optional."""

    vehicle_id: str = "vehicle_id"
    timestamp: str = "timestamp"
    x: str = "x"
    y: str = "y"
    vx: str | None = None
    vy: str | None = None


@dataclass(frozen=True)
class UnitConfig:
    """Multiplicative conversions applied at parse time.

    ``position_scale`` converts positions into the working length unit
    (0.3048 for feet to meters), ``time_scale`` converts timestamps into
    seconds (0.001 for epoch milliseconds).  Velocities default to
    ``position_scale / time_scale`` when velocity columns are present.
    """

    position_scale: float = 1.0
    time_scale: float = 1.0
    velocity_scale: float | None = None

    def velocity_factor(self) -> float:
        if self.velocity_scale is not None:
            return self.velocity_scale
        return self.position_scale / self.time_scale


@dataclass(frozen=True)
class TrajectoryRecord:
    """One vehicle observation after parsing and unit normalization."""

    vehicle_id: str
    timestamp: float
    x: float
    y: float
    vx: float | None = None
    vy: float | None = None


@dataclass(frozen=True)
class ParseReport:
    n_rows: int
    n_parsed: int
    n_bad: int


@dataclass(frozen=True)
class ExtractionReport:
    """Accounting of what happened to every input record."""

    n_records: int
    n_emitted: int
    n_superseded: int
    n_outside_roi: int
    n_no_velocity: int
    n_duplicate_time: int
    n_frames: int

    def balanced(self) -> bool:
        return (
            self.n_emitted
            + self.n_superseded
            + self.n_outside_roi
            + self.n_no_velocity
            + self.n_duplicate_time
            == self.n_records
        )


def parse_trajectory_csv(
    path,
    mapping: ColumnMapping = ColumnMapping(),
    units: UnitConfig = UnitConfig(),
    delimiter: str = ",",
    max_bad_ratio: float = 0.01,
) -> tuple[list[TrajectoryRecord], ParseReport]:
    """Read a delimited trajectory file into unit-normalized records.

    Rows that fail to parse are counted, not fatal, until their share
    exceeds ``max_bad_ratio``.  A mapped column absent from the header is
    a :class:`ConfigError`.
    """
    records: list[TrajectoryRecord] = []
    n_rows = 0
    n_bad = 0
    vf = units.velocity_factor()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        needed = [mapping.vehicle_id, mapping.timestamp, mapping.x, mapping.y]
        needed += [c for c in (mapping.vx, mapping.vy) if c is not None]
        for col in needed:
            if col not in header:
                raise ConfigError(
                    f"mapped column {col!r} not in header {header}"
                )
        for row in reader:
            n_rows += 1
            try:
                vx = vy = None
                if mapping.vx is not None and mapping.vy is not None:
                    vx = float(row[mapping.vx]) * vf
                    vy = float(row[mapping.vy]) * vf
                records.append(
                    TrajectoryRecord(
                        vehicle_id=str(row[mapping.vehicle_id]).strip(),
                        timestamp=float(row[mapping.timestamp]) * units.time_scale,
                        x=float(row[mapping.x]) * units.position_scale,
                        y=float(row[mapping.y]) * units.position_scale,
                        vx=vx,
                        vy=vy,
                    )
                )
            except (TypeError, ValueError, KeyError):
                n_bad += 1
    if n_rows == 0:
        raise IngestionError(f"no data rows in {path}")
    if n_bad / n_rows > max_bad_ratio:
        raise IngestionError(
            f"{n_bad} of {n_rows} rows failed to parse "
            f"(limit {max_bad_ratio:.1%})"
        )
    return records, ParseReport(n_rows=n_rows, n_parsed=len(records), n_bad=n_bad)


def parse_frame_csv(path, frame_id: int = 0, timestamp: float = 0.0) -> Frame:
    """Read a single-frame CSV with columns ``x,y,vx,vy`` (one vehicle per row)."""
    vehicles = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("x", "y", "vx", "vy"):
            if col not in (reader.fieldnames or []):
                raise ConfigError(f"frame file needs column {col!r}")
        for row in reader:
            vehicles.append(
                (float(row["x"]), float(row["y"]), float(row["vx"]), float(row["vy"]))
            )
    if not vehicles:
        raise IngestionError(f"no vehicles in frame file {path}")
    return Frame(frame_id=frame_id, timestamp=timestamp, vehicles=tuple(vehicles))


def _derive_velocities(
    track: list[TrajectoryRecord],
) -> list[tuple[TrajectoryRecord, float, float]]:
    """Central-difference velocities along one vehicle's raw track.

    One-sided differences at the track ends; records that already carry
    velocities keep them.
    """
    out = []
    n = len(track)
    for j, rec in enumerate(track):
        if rec.vx is not None and rec.vy is not None:
            out.append((rec, rec.vx, rec.vy))
            continue
        if n == 1:
            continue
        lo = max(0, j - 1)
        hi = min(n - 1, j + 1)
        dt = track[hi].timestamp - track[lo].timestamp
        vx = (track[hi].x - track[lo].x) / dt
        vy = (track[hi].y - track[lo].y) / dt
        out.append((rec, vx, vy))
    return out


def extract_frames(
    records: Sequence[TrajectoryRecord],
    roi: RegionOfInterest,
    dt: float,
) -> tuple[list[Frame], ExtractionReport]:
    """Snap records to a uniform time grid and assemble frames.

    Every record snaps to its nearest grid tick (spacing ``dt``, origin
    at the earliest timestamp); when a vehicle has several records near
    one tick only the closest survives.  Vehicles outside the region and
    zero-vehicle ticks are dropped.  Frames come back ordered by time
    with ``frame_id`` numbering their position in the output.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not records:
        raise IngestionError("no records to extract frames from")

    tracks: dict[str, list[TrajectoryRecord]] = {}
    for rec in records:
        tracks.setdefault(rec.vehicle_id, []).append(rec)

    n_no_velocity = 0
    n_duplicate_time = 0
    with_vel: dict[str, list[tuple[TrajectoryRecord, float, float]]] = {}
    for vid, track in tracks.items():
        track.sort(key=lambda r: r.timestamp)
        cleaned = []
        last_t = None
        for rec in track:
            if last_t is not None and rec.timestamp <= last_t:
                n_duplicate_time += 1
                continue
            cleaned.append(rec)
            last_t = rec.timestamp
        derived = _derive_velocities(cleaned)
        n_no_velocity += len(cleaned) - len(derived)
        with_vel[vid] = derived

    t0 = min(r.timestamp for r in records)
    # best record per (vehicle, tick): closest to the tick, earlier wins ties
    chosen: dict[tuple[str, int], tuple[float, float, TrajectoryRecord, float, float]] = {}
    n_superseded = 0
    for vid, track in with_vel.items():
        for rec, vx, vy in track:
            k = int(np.floor((rec.timestamp - t0) / dt + 0.5))
            tick_t = t0 + k * dt
            dist = abs(rec.timestamp - tick_t)
            key = (vid, k)
            incumbent = chosen.get(key)
            if incumbent is None:
                chosen[key] = (dist, rec.timestamp, rec, vx, vy)
            elif (dist, rec.timestamp) < (incumbent[0], incumbent[1]):
                chosen[key] = (dist, rec.timestamp, rec, vx, vy)
                n_superseded += 1
            else:
                n_superseded += 1

    by_tick: dict[int, list[tuple[str, TrajectoryRecord, float, float]]] = {}
    n_outside = 0
    for (vid, k), (_, _, rec, vx, vy) in chosen.items():
        if not roi.contains(rec.x, rec.y):
            n_outside += 1
            continue
        by_tick.setdefault(k, []).append((vid, rec, vx, vy))

    frames: list[Frame] = []
    n_emitted = 0
    for k in sorted(by_tick):
        group = sorted(by_tick[k], key=lambda item: item[0])
        vehicles = tuple((rec.x, rec.y, vx, vy) for _, rec, vx, vy in group)
        frames.append(
            Frame(frame_id=len(frames), timestamp=t0 + k * dt, vehicles=vehicles)
        )
        n_emitted += len(vehicles)

    report = ExtractionReport(
        n_records=len(records),
        n_emitted=n_emitted,
        n_superseded=n_superseded,
        n_outside_roi=n_outside,
        n_no_velocity=n_no_velocity,
        n_duplicate_time=n_duplicate_time,
        n_frames=len(frames),
    )
    return frames, report


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

@dataclass
class ModelBundle:
    """Everything a fitted model needs to classify and simulate."""

    state: MixtureState
    frames: list[Frame]
    count_dist: CountDistribution
    position_dist: PositionDistribution
    roi: RegionOfInterest
    prior: PriorConfig
    meta: dict = field(default_factory=dict)


def _roi_to_dict(roi: RegionOfInterest) -> dict:
    return {
        "x_min": roi.x_min,
        "x_max": roi.x_max,
        "y_min": roi.y_min,
        "y_max": roi.y_max,
        "n_bins_x": roi.n_bins_x,
        "n_bins_y": roi.n_bins_y,
    }


def _prior_to_dict(prior: PriorConfig) -> dict:
    return {
        "a": prior.a,
        "b": prior.b,
        "sigma_n_sq": prior.sigma_n_sq,
        "mu0_x": prior.mu0_x,
        "mu0_y": prior.mu0_y,
        "sigma0_sq_x": prior.sigma0_sq_x,
        "sigma0_sq_y": prior.sigma0_sq_y,
        "n_mc": prior.n_mc,
        "n_gibbs": prior.n_gibbs,
        "rng_seed": prior.rng_seed,
    }


def save_model(bundle: ModelBundle, path) -> None:
    """Write the versioned JSON model document."""
    state = bundle.state
    doc = {
        "schema": {"name": SCHEMA_NAME, "version": SCHEMA_VERSION},
        "roi": _roi_to_dict(bundle.roi),
        "prior": _prior_to_dict(bundle.prior),
        "alpha": state.alpha,
        "next_pattern_id": state.next_pattern_id,
        "assignments": [int(z) for z in state.assignments],
        "patterns": [
            {
                "pattern_id": k,
                "member_frames": sorted(p.member_frames),
                "params": {
                    "sigma_sq_x": p.params.sigma_sq_x,
                    "sigma_sq_y": p.params.sigma_sq_y,
                    "w_x": p.params.w_x,
                    "w_y": p.params.w_y,
                    "sigma_n_sq": p.params.sigma_n_sq,
                },
                "prior_mean_x": p.prior_mean_x,
                "prior_mean_y": p.prior_mean_y,
            }
            for k, p in sorted(state.patterns.items())
        ],
        "count_dist": {
            "counts": [int(c) for c in bundle.count_dist.counts],
            "probs": [float(p) for p in bundle.count_dist.probs],
        },
        "position_weights": [float(w) for w in bundle.position_dist.weights],
        "frames": [
            {
                "frame_id": f.frame_id,
                "timestamp": f.timestamp,
                "vehicles": [list(v) for v in f.vehicles],
            }
            for f in bundle.frames
        ],
        "meta": bundle.meta,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _require(doc: dict, key: str, context: str = "") -> object:
    if key not in doc:
        where = f"{context}.{key}" if context else key
        raise ModelFormatError(f"missing section: {where}")
    return doc[key]


def load_model(path) -> ModelBundle:
    """Read a model document back; inverse of :func:`save_model`."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a valid model file: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("not a valid model file: top level is not an object")
    schema = _require(doc, "schema")
    if schema.get("name") != SCHEMA_NAME:
        raise ModelFormatError(
            f"unknown schema name {schema.get('name')!r}, expected {SCHEMA_NAME!r}"
        )
    if schema.get("version") != SCHEMA_VERSION:
        raise ModelFormatError(
            f"unsupported schema version {schema.get('version')!r}, "
            f"this build reads version {SCHEMA_VERSION}"
        )
    roi_d = _require(doc, "roi")
    roi = RegionOfInterest(**roi_d)
    prior = PriorConfig(**_require(doc, "prior"))
    patterns = {}
    for pd in _require(doc, "patterns"):
        params = KernelParams(**_require(pd, "params", "patterns[]"))
        patterns[int(pd["pattern_id"])] = MotionPattern(
            pattern_id=int(pd["pattern_id"]),
            member_frames=set(int(i) for i in pd["member_frames"]),
            params=params,
            prior_mean_x=float(pd["prior_mean_x"]),
            prior_mean_y=float(pd["prior_mean_y"]),
        )
    state = MixtureState(
        assignments=np.array(_require(doc, "assignments"), dtype=int),
        patterns=patterns,
        alpha=float(_require(doc, "alpha")),
        next_pattern_id=int(_require(doc, "next_pattern_id")),
    )
    cd = _require(doc, "count_dist")
    count_dist = CountDistribution(
        counts=np.array(_require(cd, "counts", "count_dist"), dtype=int),
        probs=np.array(_require(cd, "probs", "count_dist"), dtype=float),
    )
    position_dist = PositionDistribution(
        roi=roi, weights=np.array(_require(doc, "position_weights"), dtype=float)
    )
    frames = [
        Frame(
            frame_id=int(fd["frame_id"]),
            timestamp=float(fd["timestamp"]),
            vehicles=tuple(tuple(v) for v in fd["vehicles"]),
        )
        for fd in _require(doc, "frames")
    ]
    return ModelBundle(
        state=state,
        frames=frames,
        count_dist=count_dist,
        position_dist=position_dist,
        roi=roi,
        prior=prior,
        meta=doc.get("meta", {}),
    )


# ---------------------------------------------------------------------------
# Delimited exports
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    """Shortest exact decimal representation; round-trips float64."""
    return repr(float(value))


def export_field(fld: VectorField, path) -> None:
    """Write a field grid as CSV, row-major with x varying fastest."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,mean_vx,mean_vy,var_vx,var_vy\n")
        for iy in range(len(fld.ys)):
            for ix in range(len(fld.xs)):
                fh.write(
                    ",".join(
                        [
                            _fmt(fld.xs[ix]),
                            _fmt(fld.ys[iy]),
                            _fmt(fld.mean_x[iy, ix]),
                            _fmt(fld.mean_y[iy, ix]),
                            _fmt(fld.var_x[iy, ix]),
                            _fmt(fld.var_y[iy, ix]),
                        ]
                    )
                    + "\n"
                )


def read_field(path) -> VectorField:
    """Read a field CSV written by :func:`export_field`."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                tuple(
                    float(row[c])
                    for c in ("x", "y", "mean_vx", "mean_vy", "var_vx", "var_vy")
                )
            )
    if not rows:
        raise ValueError(f"no field rows in {path}")
    xs = sorted({r[0] for r in rows})
    ys = sorted({r[1] for r in rows})
    nx, ny = len(xs), len(ys)
    if nx * ny != len(rows):
        raise ValueError("field file does not describe a complete grid")
    x_index = {v: i for i, v in enumerate(xs)}
    y_index = {v: i for i, v in enumerate(ys)}
    grids = [np.empty((ny, nx)) for _ in range(4)]
    for x, y, mvx, mvy, vvx, vvy in rows:
        iy, ix = y_index[y], x_index[x]
        for g, val in zip(grids, (mvx, mvy, vvx, vvy)):
            g[iy, ix] = val
    return VectorField(
        xs=np.array(xs),
        ys=np.array(ys),
        mean_x=grids[0],
        mean_y=grids[1],
        var_x=grids[2],
        var_y=grids[3],
    )


def export_trajectories(trajectories: Iterable[Trajectory], path) -> None:
    """Write roll-outs as CSV ordered by vehicle id then time."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("vehicle_id,t,x,y,vx,vy\n")
        for traj in sorted(trajectories, key=lambda t: t.vehicle_id):
            for j in range(traj.n_samples):
                fh.write(
                    f"{traj.vehicle_id},"
                    + ",".join(
                        _fmt(a[j])
                        for a in (traj.times, traj.xs, traj.ys, traj.vxs, traj.vys)
                    )
                    + "\n"
                )


def export_proportions(state: MixtureState, path) -> None:
    """Mixture proportions sorted descending (ties by ascending id)."""
    n = state.n_frames
    rows = sorted(
        ((k, p.n_frames) for k, p in state.patterns.items()),
        key=lambda item: (-item[1], item[0]),
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("pattern_id,n_frames,proportion\n")
        for k, n_k in rows:
            fh.write(f"{k},{n_k},{_fmt(n_k / n)}\n")


def export_trace(trace, path) -> None:
    """Write per-iteration sampler diagnostics as CSV."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,n_patterns,alpha,total_log_likelihood,seconds,counts\n")
        for rec in trace.records:
            counts = ";".join(f"{k}:{v}" for k, v in sorted(rec.counts.items()))
            fh.write(
                f"{rec.iteration},{rec.n_patterns},{_fmt(rec.alpha)},"
                f"{_fmt(rec.total_log_likelihood)},{_fmt(rec.seconds)},{counts}\n"
            )
