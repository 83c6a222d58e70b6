"""Command-line interface for scenario generation, training, tracking,
evaluation, ablation sweeps, and the built-in oracle selftest.

All subcommands exit 0 on success; failures emit a single machine-readable
JSON line ``{"error": ...}`` on stderr and exit nonzero. The output directory
can be overridden with the BEVTRACK_OUTPUT_DIR environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as bio
from .association import Tracker
from .branches import save_params
from .experiments import (
    METRIC_COLUMNS,
    ExperimentSpec,
    config_hash,
    default_scenario,
    default_spec,
    run_experiment,
    sweep,
    train_for_scenario,
)
from .metrics import EvalConfig, evaluate_detection, evaluate_tracking
from .selftest import run_selftest
from .simulator import ScenarioConfig, generate_scenario

ENV_OUTPUT_DIR = "BEVTRACK_OUTPUT_DIR"


def _out_dir(args_out: Optional[str], default: str) -> Path:
    target = args_out or os.environ.get(ENV_OUTPUT_DIR) or default
    path = Path(target)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_spec(path: Optional[str]) -> ExperimentSpec:
    if path is None:
        return default_spec()
    return ExperimentSpec.load(path)


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = (
        ScenarioConfig.load(args.config) if args.config else default_scenario()
    )
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = _out_dir(args.out, "simulate_out")
    gt, frames = generate_scenario(cfg)
    cfg.save(out / "scenario.json")
    bio.dump_ground_truth(out / "gt.csv", gt, out / "gt_features.bin")
    bio.dump_detections(out / "detections.csv", frames, out / "det_features.bin")
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    spec = _load_spec(args.config)
    seed = args.seed if args.seed is not None else spec.seeds[0]
    out = _out_dir(args.out, "train_out")
    scenario = replace(spec.scenario, seed=seed)
    gt, frames = generate_scenario(scenario)
    params = train_for_scenario(spec, seed, gt, frames)
    save_params(params, out / "params_manifest.json", out / "params.bin")
    print(f"wrote checkpoint for seed {seed} to {out}")
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    spec = _load_spec(args.config)
    out = _out_dir(args.out, "track_out")
    result = run_experiment(spec, out_dir=out)
    if args.dump_costs:
        _dump_costs(spec, out)
    print(f"config {result.spec_hash}: mean IDF1 {result.mean('idf1'):.2f}, "
          f"mean MOTA {result.mean('mota'):.2f} -> {out}")
    return 0


def _dump_costs(spec: ExperimentSpec, out: Path) -> None:
    """Re-run the first seed recording per-frame cost matrices."""
    from .experiments import needs_training

    seed = spec.seeds[0]
    scenario = replace(spec.scenario, seed=seed)
    gt, frames = generate_scenario(scenario)
    params = (
        train_for_scenario(spec, seed, gt, frames)
        if needs_training(spec.tracker)
        else None
    )
    tracker_cfg = replace(
        spec.tracker, frame_rate=scenario.frame_rate, loc_noise=scenario.loc_noise
    )
    tracker = Tracker(tracker_cfg, params, record_costs=True)
    for frame in frames:
        tracker.step(frame)
    costs_dir = out / "costs"
    costs_dir.mkdir(exist_ok=True)
    for t, costs in tracker.cost_history:
        for name, matrix in (
            ("tmc", costs.tmc), ("tac", costs.tac), ("combined", costs.combined)
        ):
            np.savetxt(
                costs_dir / f"frame{t:04d}_{name}.csv",
                matrix,
                delimiter=",",
                fmt="%.6f",
            )


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = EvalConfig(
        tracking_gate=args.tracking_gate, detection_gate=args.detection_gate
    )
    gt_rows = bio.read_points_csv(args.gt)
    num_frames = max(r.frame for r in gt_rows) + 1
    gt_frames = bio.points_by_frame(gt_rows, num_frames)

    header = ["input", "metric_set"] + METRIC_COLUMNS
    lines = [header]

    def add(label: str, kind: str, report) -> None:
        row = [label, kind]
        for col in METRIC_COLUMNS:
            value = getattr(report, col)
            row.append(f"{value:.4f}" if isinstance(value, float) else str(value))
        lines.append(row)

    if args.tracks:
        rows = bio.read_points_csv(args.tracks)
        add(args.tracks, "tracking",
            evaluate_tracking(gt_frames, bio.points_by_frame(rows, num_frames), cfg))
    if args.detections:
        rows = bio.read_points_csv(args.detections)
        add(args.detections, "detection",
            evaluate_detection(gt_frames, bio.points_by_frame(rows, num_frames), cfg))
    if not args.tracks and not args.detections:
        raise ValueError("provide --tracks and/or --detections")

    writer = csv.writer(sys.stdout)
    writer.writerows(lines)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(lines)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = _load_spec(args.config)
    out = _out_dir(args.out, "sweep_out")
    values: list = args.values.split(",")
    if args.axis == "K":
        values = [int(v) for v in values]
    elif args.axis == "alpha":
        values = [float(v) for v in values]
    sweep(spec, args.axis, values, out_dir=out, plot=args.plot)
    print(f"wrote sweep over {args.axis} ({len(values)} values) to {out}")
    return 0


def cmd_selftest(_: argparse.Namespace) -> int:
    return run_selftest()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevtrack",
        description="BEV multi-camera trajectory association experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--config", help="scenario JSON (default: built-in desk scenario)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the motion/appearance branches")
    p.add_argument("--config", help="experiment spec JSON (default: built-in)")
    p.add_argument("--seed", type=int, help="run seed (default: first spec seed)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the full experiment for a spec")
    p.add_argument("--config", help="experiment spec JSON (default: built-in)")
    p.add_argument("--out", help="output directory")
    p.add_argument(
        "--dump-costs",
        action="store_true",
        help="also dump per-frame TMC/TAC/combined matrices for the first seed",
    )
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="evaluate track/detection CSVs against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth CSV")
    p.add_argument("--tracks", help="tracks CSV (tracking metrics)")
    p.add_argument("--detections", help="detections CSV (detection metrics)")
    p.add_argument("--tracking-gate", type=float, default=1.0)
    p.add_argument("--detection-gate", type=float, default=0.5)
    p.add_argument("--out", help="also write the metric rows to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run an ablation sweep")
    p.add_argument("--config", help="experiment spec JSON (default: built-in)")
    p.add_argument(
        "--axis",
        required=True,
        choices=["K", "alpha", "cost_mode", "motion_mode", "appearance_mode", "pooling"],
    )
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--out", help="output directory")
    p.add_argument("--plot", action="store_true", help="emit sweep.svg")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("selftest", help="run the built-in oracle suites")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single machine-readable error line
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
