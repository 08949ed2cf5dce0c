"""Command-line front end: fit, simulate, export-field, synth, inspect.

All randomness flows from a single seed; a run directory always receives
a manifest with the fully resolved configuration, so any run can be
reproduced exactly.  Diagnostics go to stderr, data products to files.

Exit codes: 0 success, 2 configuration problems (including unreadable
model files and unknown pattern ids), 3 ingestion problems, 4 numerical
failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import (
    ColumnMapping,
    ConfigError,
    IngestionError,
    ModelBundle,
    ModelFormatError,
    UnitConfig,
)
from .empirical import fit_count_dist, fit_position_dist
from .gibbs import NEW_PATTERN, PatternCache, derive_stream, run_gibbs
from .gp import ConditioningError, mean_velocity_field
from .model import PriorConfig, RegionOfInterest
from .simulate import classify_frame, generate_frame, simulate_trajectories
from .synthetic import SynthSpec, standard_fields, write_synthetic_csv

EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_NUMERIC = 4

# RNG purpose tags for CLI-side draws (the sampler owns tags 0-6).
_TAG_CLASSIFY = 16
_TAG_GENERATE = 17
_TAG_ROLLOUT = 18


@dataclasses.dataclass
class RunConfig:
    """Resolved settings for one run; serialized into every manifest."""

    roi: RegionOfInterest
    dt: float = 0.5
    prior: PriorConfig = dataclasses.field(default_factory=PriorConfig)
    columns: ColumnMapping = dataclasses.field(default_factory=ColumnMapping)
    units: UnitConfig = dataclasses.field(default_factory=UnitConfig)
    delimiter: str = ","
    max_frames: int = 1000
    workers: int = 1
    assignment_mode: str = "map"
    train_cap: int = 2000

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            roi = RegionOfInterest(**doc["roi"])
            prior = PriorConfig(**doc.get("prior", {}))
            columns = ColumnMapping(**doc.get("columns", {}))
            units = UnitConfig(**doc.get("units", {}))
            return cls(
                roi=roi,
                dt=float(doc.get("dt", 0.5)),
                prior=prior,
                columns=columns,
                units=units,
                delimiter=doc.get("delimiter", ","),
                max_frames=int(doc.get("max_frames", 1000)),
                workers=int(doc.get("workers", 1)),
                assignment_mode=doc.get("assignment_mode", "map"),
                train_cap=int(doc.get("train_cap", 2000)),
            )
        except KeyError as exc:
            raise ConfigError(f"config is missing required section {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from exc


def _load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(doc)


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    prior = config.prior
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["rng_seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        updates["n_gibbs"] = args.iterations
    if getattr(args, "n_mc", None) is not None:
        updates["n_mc"] = args.n_mc
    if updates:
        prior = dataclasses.replace(prior, **updates)
    return dataclasses.replace(
        config,
        prior=prior,
        dt=args.dt if getattr(args, "dt", None) is not None else config.dt,
        workers=args.workers if getattr(args, "workers", None) is not None else config.workers,
        max_frames=(
            args.max_frames
            if getattr(args, "max_frames", None) is not None
            else config.max_frames
        ),
        assignment_mode=(
            args.assignment_mode
            if getattr(args, "assignment_mode", None) is not None
            else config.assignment_mode
        ),
    )


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("motionmix")
    except Exception:
        return "unknown"


def _write_manifest(out_dir: Path, command: str, config: RunConfig, extra: dict) -> None:
    doc = {
        "command": command,
        "package_version": _package_version(),
        "config": config.to_dict(),
        **extra,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _downsample(frames: list, cap: int) -> list:
    """Uniformly thin the frame sequence to at most ``cap`` frames."""
    if len(frames) <= cap:
        return frames
    idx = np.unique(np.round(np.linspace(0, len(frames) - 1, cap)).astype(int))
    return [frames[i] for i in idx]


def _load_bundle(path: str) -> ModelBundle:
    try:
        return dataio.load_model(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"model file not found: {path}") from exc
    except (ModelFormatError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc


def _pattern_posterior(bundle: ModelBundle, pattern_id: int, train_cap: int = 2000):
    cache = PatternCache(bundle.frames, bundle.prior.rng_seed, train_cap=train_cap)
    return cache.entry(bundle.state.patterns[pattern_id]).posterior


def _check_pattern_id(bundle: ModelBundle, pattern_id: int) -> None:
    if pattern_id not in bundle.state.patterns:
        valid = ", ".join(str(k) for k in bundle.state.live_ids())
        raise ConfigError(
            f"unknown pattern id {pattern_id}; valid ids: {valid}"
        )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args: argparse.Namespace) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    input_path = Path(args.input)
    if not input_path.exists():
        raise IngestionError(f"input file not found: {input_path}")

    records, parse_report = dataio.parse_trajectory_csv(
        input_path,
        mapping=config.columns,
        units=config.units,
        delimiter=config.delimiter,
    )
    frames, extract_report = dataio.extract_frames(records, config.roi, config.dt)
    if not frames:
        raise IngestionError("no frames inside the region of interest")
    frames = _downsample(frames, config.max_frames)
    print(
        f"ingested {parse_report.n_parsed} records "
        f"({parse_report.n_bad} bad rows), {len(frames)} frames",
        file=sys.stderr,
    )

    count_dist = fit_count_dist(frames)
    position_dist = fit_position_dist(frames, config.roi)
    state, trace = run_gibbs(
        frames,
        config.prior,
        config.roi,
        dists=(count_dist, position_dist),
        n_workers=config.workers,
        assignment_mode=config.assignment_mode,
        train_cap=config.train_cap,
        progress=lambda line: print(line, file=sys.stderr),
    )
    resolved_prior = config.prior.resolved(frames)
    bundle = ModelBundle(
        state=state,
        frames=frames,
        count_dist=count_dist,
        position_dist=position_dist,
        roi=config.roi,
        prior=resolved_prior,
        meta={"input": str(input_path), "n_input_records": parse_report.n_parsed},
    )
    dataio.save_model(bundle, out_dir / "model.json")
    dataio.export_trace(trace, out_dir / "trace.csv")
    dataio.export_proportions(state, out_dir / "proportions.csv")
    _write_manifest(
        out_dir,
        "fit",
        config,
        {
            "input": str(input_path),
            "parse_report": dataclasses.asdict(parse_report),
            "extraction_report": dataclasses.asdict(extract_report),
            "n_frames_fit": len(frames),
            "n_patterns": state.n_patterns,
        },
    )
    print(
        f"fit complete: K={state.n_patterns} alpha={state.alpha:.4g} "
        f"-> {out_dir}",
        file=sys.stderr,
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    bundle = _load_bundle(args.model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else bundle.prior.rng_seed
    classification: dict = {}

    if args.generate:
        if args.pattern is not None:
            _check_pattern_id(bundle, args.pattern)
            pattern_id = args.pattern
        else:
            pattern_id = max(
                bundle.state.patterns,
                key=lambda k: (bundle.state.patterns[k].n_frames, -k),
            )
        posterior = _pattern_posterior(bundle, pattern_id)
        frame = generate_frame(
            posterior,
            bundle.count_dist,
            bundle.position_dist,
            derive_stream(seed, _TAG_GENERATE),
        )
        classification = {"mode": "generate", "pattern_id": pattern_id}
    else:
        if args.frame is None:
            raise ConfigError("simulate needs --frame FILE or --generate")
        frame = dataio.parse_frame_csv(args.frame)
        if args.pattern is not None:
            _check_pattern_id(bundle, args.pattern)
            pattern_id = args.pattern
            classification = {"mode": "forced", "pattern_id": pattern_id}
        else:
            chosen, scores = classify_frame(
                frame,
                bundle.state,
                bundle.frames,
                bundle.count_dist,
                bundle.position_dist,
                bundle.prior,
                derive_stream(seed, _TAG_CLASSIFY),
            )
            if chosen == NEW_PATTERN:
                # The mixture cannot explain the frame; fall back to the
                # closest existing pattern for the roll-out but say so.
                existing = scores.log_posterior[:-1]
                chosen = scores.pattern_ids[int(np.argmax(existing))]
                classification["new_pattern_preferred"] = True
            pattern_id = chosen
            classification.update(
                {
                    "mode": "classified",
                    "pattern_id": pattern_id,
                    "scores": {
                        str(k): float(s)
                        for k, s in zip(scores.pattern_ids, scores.log_posterior)
                    },
                }
            )
        posterior = _pattern_posterior(bundle, pattern_id)

    trajectories = simulate_trajectories(
        posterior,
        frame,
        dt=args.dt,
        n_steps=args.steps,
        roi=bundle.roi,
        scheme=args.scheme,
        mode=args.rollout,
        rng=derive_stream(seed, _TAG_ROLLOUT) if args.rollout == "sample" else None,
    )
    dataio.export_trajectories(trajectories, out_dir / "trajectories.csv")
    with open(out_dir / "classification.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(classification, fh, indent=1)
        fh.write("\n")
    print(
        f"simulated {len(trajectories)} vehicles for {args.steps} steps "
        f"under pattern {classification.get('pattern_id')} -> {out_dir}",
        file=sys.stderr,
    )
    return 0


def cmd_export_field(args: argparse.Namespace) -> int:
    bundle = _load_bundle(args.model)
    _check_pattern_id(bundle, args.pattern)
    posterior = _pattern_posterior(bundle, args.pattern)
    fld = mean_velocity_field(posterior, bundle.roi, args.nx, args.ny)
    dataio.export_field(fld, args.output)
    print(
        f"exported {args.nx}x{args.ny} field of pattern {args.pattern} "
        f"-> {args.output}",
        file=sys.stderr,
    )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    roi = RegionOfInterest(
        x_min=0.0,
        x_max=args.extent,
        y_min=0.0,
        y_max=args.extent,
        n_bins_x=20,
        n_bins_y=20,
    )
    spec = SynthSpec(
        roi=roi,
        n_frames=args.frames,
        dt=args.dt,
        vehicles_min=args.vehicles_min,
        vehicles_max=args.vehicles_max,
        seed=args.seed if args.seed is not None else 0,
    )
    fields = standard_fields(args.kind, roi)
    n_rows, n_frames = write_synthetic_csv(
        fields, spec, args.output, labels_path=args.labels
    )
    if args.emit_config is not None:
        config = RunConfig(roi=roi, dt=args.dt)
        with open(args.emit_config, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(config.to_dict(), fh, indent=1)
            fh.write("\n")
    print(
        f"wrote {n_rows} samples over {n_frames} frames ({args.kind}) "
        f"-> {args.output}",
        file=sys.stderr,
    )
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    bundle = _load_bundle(args.model)
    state = bundle.state
    n = state.n_frames
    print(f"model: {args.model}")
    print(f"frames: {n}")
    print(f"patterns: {state.n_patterns}")
    print(f"alpha: {state.alpha!r}")
    print(f"seed: {bundle.prior.rng_seed}")
    print("pattern  frames  proportion  w_x        w_y")
    rows = sorted(
        state.patterns.values(), key=lambda p: (-p.n_frames, p.pattern_id)
    )
    for p in rows:
        print(
            f"{p.pattern_id:>7}  {p.n_frames:>6}  {p.n_frames / n:<10.6f}"
            f"  {p.params.w_x:<9.4f}  {p.params.w_y:<9.4f}"
        )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionmix",
        description="Learn and simulate motion-pattern mixtures from "
        "multi-vehicle trajectory data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the mixture on a trajectory CSV")
    fit.add_argument("--input", required=True, help="trajectory CSV path")
    fit.add_argument("--config", required=True, help="run config JSON path")
    fit.add_argument("--out-dir", required=True, help="output directory")
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--iterations", type=int, default=None)
    fit.add_argument("--n-mc", type=int, default=None)
    fit.add_argument("--dt", type=float, default=None)
    fit.add_argument("--workers", type=int, default=None)
    fit.add_argument("--max-frames", type=int, default=None)
    fit.add_argument(
        "--assignment-mode", choices=("map", "sample"), default=None
    )
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="classify or generate, then roll out")
    sim.add_argument("--model", required=True)
    sim.add_argument("--frame", default=None, help="test frame CSV (x,y,vx,vy)")
    sim.add_argument(
        "--generate", action="store_true", help="draw the frame from the model"
    )
    sim.add_argument("--pattern", type=int, default=None)
    sim.add_argument("--dt", type=float, default=0.5)
    sim.add_argument("--steps", type=int, default=20)
    sim.add_argument("--scheme", choices=("euler", "midpoint"), default="euler")
    sim.add_argument("--rollout", choices=("mean", "sample"), default="mean")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out-dir", required=True)
    sim.set_defaults(func=cmd_simulate)

    exp = sub.add_parser("export-field", help="export a pattern's mean field grid")
    exp.add_argument("--model", required=True)
    exp.add_argument("--pattern", type=int, required=True)
    exp.add_argument("--nx", type=int, default=20)
    exp.add_argument("--ny", type=int, default=20)
    exp.add_argument("--output", required=True)
    exp.set_defaults(func=cmd_export_field)

    synth = sub.add_parser("synth", help="emit synthetic trajectories from planted fields")
    synth.add_argument(
        "--kind",
        choices=("constant", "rotation", "shear", "three-field"),
        default="three-field",
    )
    synth.add_argument("--frames", type=int, default=150)
    synth.add_argument("--dt", type=float, default=0.5)
    synth.add_argument("--extent", type=float, default=100.0)
    synth.add_argument("--vehicles-min", type=int, default=2)
    synth.add_argument("--vehicles-max", type=int, default=4)
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--output", required=True)
    synth.add_argument("--labels", default=None, help="ground-truth sidecar path")
    synth.add_argument("--emit-config", default=None, help="write a matching fit config")
    synth.set_defaults(func=cmd_synth)

    ins = sub.add_parser("inspect", help="print a fitted model summary")
    ins.add_argument("--model", required=True)
    ins.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (ConditioningError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
