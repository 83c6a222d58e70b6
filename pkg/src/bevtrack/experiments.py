"""Experiment orchestration: runs, ablation sweeps, CSV reports.

Every run is fully determined by its spec: scenario generation, branch
training, tracking, and evaluation all derive their randomness from spec
fields, and metric CSVs are formatted with fixed precision so re-running a
spec reproduces them byte for byte. Wall-clock throughput (a non-reproducible
quantity) goes to runtime.txt, never into the CSVs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import branches
from .association import (
    APPEARANCE_EMA,
    APPEARANCE_FROZEN,
    APPEARANCE_TAC,
    COST_FUSED,
    MOTION_ATTENTION,
    Tracker,
    TrackerConfig,
)
from .branches import BranchParams, TokenSet, TrainingBatch, init_params, train
from .geometry import BevGrid, FeatureGrid, OccupancyMap, aggregate_max, aggregate_mean
from .geometry import extract_peaks, project_ground_to_pixel, render_smoothed_targets
from .io import PointRow, write_points_csv
from .metrics import EvalConfig, MetricReport, evaluate_detection, evaluate_tracking
from .simulator import (
    DetectionFrame,
    GroundTruth,
    ScenarioConfig,
    camera_ring,
    generate_scenario,
)

GAUSS_KERNEL_RADIUS = 8  # cells

METRIC_COLUMNS = [
    "idf1", "mota", "motp", "mt_pct", "ml_pct",
    "moda", "modp", "recall", "precision",
    "fp", "fn", "idsw", "gt", "tp",
]

SWEEP_AXES = ("K", "alpha", "cost_mode", "motion_mode", "appearance_mode", "pooling")


@dataclass(frozen=True)
class TrainingSettings:
    steps: int = 200
    learning_rate: float = 0.1
    lr_min: float = 0.0
    grad_accum: int = 1
    dropout: float = 0.0  # disables finite-difference gradient checks when on
    seed: int = 0
    num_heads: int = 4
    num_blocks: int = 1
    ff_dim: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "lr_min": self.lr_min,
            "grad_accum": self.grad_accum,
            "dropout": self.dropout,
            "seed": self.seed,
            "num_heads": self.num_heads,
            "num_blocks": self.num_blocks,
            "ff_dim": self.ff_dim,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingSettings":
        return cls(**data)


def tracker_to_dict(cfg: TrackerConfig) -> dict:
    return {
        "K": cfg.window,
        "alpha": cfg.alpha,
        "gate": cfg.gate,
        "detection_threshold": cfg.detection_threshold,
        "max_age": cfg.max_age,
        "motion_mode": cfg.motion_mode,
        "appearance_mode": cfg.appearance_mode,
        "cost_mode": cfg.cost_mode,
    }


def tracker_from_dict(data: dict) -> TrackerConfig:
    return TrackerConfig(
        window=data["K"],
        alpha=data.get("alpha", 0.98),
        gate=data.get("gate", 0.1),
        detection_threshold=data.get("detection_threshold", 0.4),
        max_age=data.get("max_age"),
        motion_mode=data.get("motion_mode", MOTION_ATTENTION),
        appearance_mode=data.get("appearance_mode", APPEARANCE_TAC),
        cost_mode=data.get("cost_mode", COST_FUSED),
    )


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioConfig
    tracker: TrackerConfig
    training: TrainingSettings
    seeds: tuple[int, ...]
    output_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("seeds must be non-empty")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "tracker": tracker_to_dict(self.tracker),
            "training": self.training.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        return cls(
            scenario=ScenarioConfig.from_dict(data["scenario"]),
            tracker=tracker_from_dict(data["tracker"]),
            training=TrainingSettings.from_dict(data.get("training", {})),
            seeds=tuple(data["seeds"]),
            output_dir=data.get("output_dir"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def config_hash(spec: ExperimentSpec) -> str:
    canonical = json.dumps(spec.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Scenario presets


def desk_grid(cells: int = 200) -> BevGrid:
    return BevGrid(width_cells=cells, height_cells=cells, cell_size=0.1)


def default_scenario(seed: int = 0) -> ScenarioConfig:
    grid = desk_grid(160)
    return ScenarioConfig(
        grid=grid,
        cameras=camera_ring(grid),
        num_pedestrians=20,
        num_frames=100,
        frame_rate=2.0,
        speed_range=(0.3, 0.8),
        turn_noise=0.05,
        miss_prob=0.1,
        clutter_rate=1.0,
        loc_noise=0.05,
        embed_noise=0.1,
        seed=seed,
    )


def zero_noise_scenario(seed: int = 0, num_pedestrians: int = 10, num_frames: int = 50) -> ScenarioConfig:
    grid = desk_grid(120)
    return ScenarioConfig(
        grid=grid,
        cameras=camera_ring(grid),
        num_pedestrians=num_pedestrians,
        num_frames=num_frames,
        frame_rate=2.0,
        miss_prob=0.0,
        clutter_rate=0.0,
        loc_noise=0.0,
        embed_noise=0.0,
        seed=seed,
    )


def noisy_scenario(seed: int = 0) -> ScenarioConfig:
    """Degraded-detector suite: misses, clutter, feature and position noise.

    Walkers are slow with gentle heading drift so per-identity motion stays
    learnable over the scenario, mirroring feature maps that encode position.
    """
    grid = desk_grid(200)
    return ScenarioConfig(
        grid=grid,
        cameras=camera_ring(grid),
        num_pedestrians=15,
        num_frames=100,
        frame_rate=2.0,
        speed_range=(0.2, 0.6),
        turn_noise=0.03,
        miss_prob=0.2,
        clutter_rate=2.0,
        loc_noise=0.1,
        embed_noise=0.2,
        seed=seed,
    )


def default_spec(seeds: Sequence[int] = (0,), output_dir: Optional[str] = None) -> ExperimentSpec:
    return ExperimentSpec(
        scenario=default_scenario(),
        tracker=TrackerConfig(),
        training=TrainingSettings(),
        seeds=tuple(seeds),
        output_dir=output_dir,
    )


# ---------------------------------------------------------------------------
# Training data from a scenario


def _clamp_to_grid(grid: BevGrid, point: np.ndarray) -> np.ndarray:
    ex, ey = grid.extent
    eps = 1e-9
    return np.array(
        [min(max(point[0], 0.0), ex - eps), min(max(point[1], 0.0), ey - eps)]
    )


def render_detection_map(grid: BevGrid, frame: DetectionFrame) -> OccupancyMap:
    points = [_clamp_to_grid(grid, det.location) for det in frame.detections]
    return render_smoothed_targets(grid, points, GAUSS_KERNEL_RADIUS)


def render_truth_map(grid: BevGrid, gt: GroundTruth, t: int) -> OccupancyMap:
    points = [point for _, point in gt.frames[t]]
    return render_smoothed_targets(grid, points, GAUSS_KERNEL_RADIUS)


def make_training_batches(
    cfg: ScenarioConfig,
    gt: GroundTruth,
    frames: Sequence[DetectionFrame],
    window: int,
    rng: np.random.Generator,
) -> list[TrainingBatch]:
    """Build full-window batches from non-overlapping K+1 frame windows.

    Tokens carry identity embeddings re-noised per window (the stand-in for
    re-extracted detector features); offsets come from the ground truth. The
    detection loss compares occupancy maps rendered from noisy detections
    against ground-truth renders and is constant in the branch parameters.
    """
    n = cfg.num_pedestrians
    positions = np.zeros((gt.num_frames, n, 2))
    for t, frame in enumerate(gt.frames):
        for ped_id, point in frame:
            positions[t, ped_id] = point

    batches: list[TrainingBatch] = []
    for t in range(window, gt.num_frames, window + 1):
        raw, peds, lags = [], [], []
        for lag in range(window + 1):
            noise = rng.normal(0.0, cfg.embed_noise, size=(n, cfg.embed_dim))
            feats = gt.embeddings + noise
            feats /= np.linalg.norm(feats, axis=1, keepdims=True)
            for ped in range(n):
                raw.append(feats[ped])
                peds.append(ped)
                lags.append(lag)
        offsets = np.stack(
            [positions[t] - positions[t - lag] for lag in range(1, window + 1)], axis=1
        )
        l_det = branches.loss_det(
            [render_detection_map(cfg.grid, frames[t - lag]) for lag in range(window + 1)],
            [render_truth_map(cfg.grid, gt, t - lag) for lag in range(window + 1)],
        )
        batches.append(
            TrainingBatch(TokenSet.build(raw, peds, lags), offsets, l_det)
        )
    return batches


def needs_training(tracker: TrackerConfig) -> bool:
    return tracker.motion_mode == MOTION_ATTENTION or tracker.appearance_mode in (
        APPEARANCE_TAC,
        APPEARANCE_FROZEN,
    )


def train_for_scenario(
    spec: ExperimentSpec, run_seed: int, gt: GroundTruth, frames: Sequence[DetectionFrame]
) -> BranchParams:
    cfg = spec.scenario
    ts = spec.training
    seed_seq = np.random.SeedSequence([ts.seed, run_seed])
    init_seed, batch_seed = (int(s) for s in seed_seq.generate_state(2))
    params = init_params(
        embed_dim=cfg.embed_dim,
        num_heads=ts.num_heads,
        num_blocks=ts.num_blocks,
        ff_dim=ts.ff_dim,
        seed=init_seed,
    )
    batches = make_training_batches(
        cfg, gt, frames, spec.tracker.window, np.random.default_rng(batch_seed)
    )
    trained, _ = train(
        params,
        batches,
        steps=ts.steps,
        learning_rate=ts.learning_rate,
        lr_min=ts.lr_min,
        grad_accum=ts.grad_accum,
        dropout_rate=ts.dropout,
        dropout_seed=init_seed,
    )
    return trained


# ---------------------------------------------------------------------------
# Running


@dataclass(frozen=True)
class SeedResult:
    seed: int
    report: MetricReport
    track_rows: tuple[PointRow, ...]
    fps: float


@dataclass(frozen=True)
class ExperimentResult:
    spec_hash: str
    per_seed: tuple[SeedResult, ...]

    def mean(self, metric: str) -> float:
        return float(np.mean([getattr(r.report, metric) for r in self.per_seed]))

    def std(self, metric: str) -> float:
        values = [getattr(r.report, metric) for r in self.per_seed]
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def run_single(spec: ExperimentSpec, run_seed: int,
               trained: Optional[BranchParams] = None) -> SeedResult:
    scenario = replace(spec.scenario, seed=run_seed)
    gt, frames = generate_scenario(scenario)
    params = trained
    if params is None and needs_training(spec.tracker):
        params = train_for_scenario(spec, run_seed, gt, frames)

    tracker_cfg = replace(
        spec.tracker, frame_rate=scenario.frame_rate, loc_noise=scenario.loc_noise
    )
    tracker = Tracker(tracker_cfg, params)
    start = time.perf_counter()
    for frame in frames:
        tracker.step(frame)
    elapsed = time.perf_counter() - start
    fps = len(frames) / elapsed if elapsed > 0 else float("inf")

    rows = tuple(PointRow(*row) for row in tracker.output_rows)
    gt_frames = [list(frame) for frame in gt.frames]
    hyp_frames: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(len(frames))]
    for row in rows:
        hyp_frames[row.frame].append((row.track_id, np.array([row.x, row.y])))
    det_frames = [
        [(0, det.location) for det in frame.detections] for frame in frames
    ]

    eval_cfg = EvalConfig()
    tracking = evaluate_tracking(gt_frames, hyp_frames, eval_cfg)
    detection = evaluate_detection(gt_frames, det_frames, eval_cfg)
    report = replace(
        tracking,
        moda=detection.moda,
        modp=detection.modp,
        recall=detection.recall,
        precision=detection.precision,
    )
    return SeedResult(run_seed, report, rows, fps)


def _metric_row(report: MetricReport) -> list[str]:
    row = []
    for col in METRIC_COLUMNS:
        value = getattr(report, col)
        row.append(f"{value:.4f}" if isinstance(value, float) else str(value))
    return row


def write_metrics_csv(
    path: str | Path,
    spec_hash: str,
    results: Sequence[SeedResult],
    label: str = "run",
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "seed", "config"] + METRIC_COLUMNS)
        for res in results:
            writer.writerow([label, res.seed, spec_hash] + _metric_row(res.report))
        for agg in ("mean", "std"):
            row: list[str] = [label, agg, spec_hash]
            for col in METRIC_COLUMNS:
                values = [float(getattr(r.report, col)) for r in results]
                stat = (
                    np.mean(values)
                    if agg == "mean"
                    else (np.std(values, ddof=1) if len(values) > 1 else 0.0)
                )
                row.append(f"{stat:.4f}")
            writer.writerow(row)


def run_experiment(
    spec: ExperimentSpec, out_dir: Optional[str | Path] = None
) -> ExperimentResult:
    """Run every seed of the spec; optionally write CSVs and runtime report.

    Per-seed outputs are flushed as they complete, so results for finished
    seeds survive a failure in a later one.
    """
    spec_hash = config_hash(spec)
    target = out_dir if out_dir is not None else spec.output_dir
    if target is not None:
        target = Path(target)
        target.mkdir(parents=True, exist_ok=True)
    results: list[SeedResult] = []
    try:
        for seed in spec.seeds:
            res = run_single(spec, seed)
            results.append(res)
            if target is not None:
                write_points_csv(target / f"tracks_seed{res.seed}.csv", res.track_rows)
    finally:
        if target is not None and results:
            write_metrics_csv(target / "metrics.csv", spec_hash, results)
            lines = [
                f"seed={res.seed} frames={spec.scenario.num_frames} fps={res.fps:.2f}"
                for res in results
            ]
            (target / "runtime.txt").write_text("\n".join(lines) + "\n")
    return ExperimentResult(spec_hash, tuple(results))


# ---------------------------------------------------------------------------
# Pooling ablation: synthetic multi-camera detection pipeline


def split_camera_pair(grid: BevGrid, focal_px: float = 1200.0):
    """Two cameras covering complementary halves of the grid.

    Every interior point is seen by at least one camera but most by exactly
    one, which is the regime where max- and mean-pooled aggregation differ.
    """
    from .geometry import look_at_camera

    ex, ey = grid.extent
    cam_a = look_at_camera(
        np.array([ex / 2.0, -0.5 * ey, ey]),
        np.array([ex / 2.0, 0.25 * ey, 0.0]),
        focal_px,
        (480, 1280),
    )
    cam_b = look_at_camera(
        np.array([ex / 2.0, 1.5 * ey, ey]),
        np.array([ex / 2.0, 0.75 * ey, 0.0]),
        focal_px,
        (480, 1280),
    )
    return (cam_a, cam_b)


def _render_scaled_bumps(
    grid: BevGrid, points: Sequence[np.ndarray], gains: Sequence[float]
) -> np.ndarray:
    values = np.zeros((grid.width_cells, grid.height_cells))
    for point, gain in zip(points, gains):
        bump = render_smoothed_targets(grid, [point], GAUSS_KERNEL_RADIUS).values
        np.maximum(values, gain * bump, out=values)
    return values


def synthetic_detection_run(
    cfg: ScenarioConfig,
    pooling: str,
    detection_threshold: float = 0.4,
    max_frames: Optional[int] = 20,
) -> MetricReport:
    """Detect via per-camera occupancy grids aggregated by max or mean.

    Each camera renders the pedestrians it sees as Gaussian bumps scaled by a
    per-observation view quality in [0.5, 1]; unseen pedestrians contribute
    nothing in that view. Peaks of the aggregated map above the threshold
    become detections, scored against ground truth at the detection gate.
    """
    if pooling not in ("max", "mean"):
        raise ValueError("pooling must be 'max' or 'mean'")
    if not cfg.cameras:
        raise ValueError("pooling pipeline needs at least one camera")
    gt, _ = generate_scenario(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    aggregate = aggregate_max if pooling == "max" else aggregate_mean

    frame_count = gt.num_frames if max_frames is None else min(max_frames, gt.num_frames)
    gt_frames = []
    det_frames = []
    for t in range(frame_count):
        points = [point for _, point in gt.frames[t]]
        grids = []
        for cam in cfg.cameras:
            visible = [p for p in points if project_ground_to_pixel(cam, p) is not None]
            gains = rng.uniform(0.5, 1.0, size=len(visible))
            values = _render_scaled_bumps(cfg.grid, visible, gains)
            grids.append(FeatureGrid(cfg.grid, 1, values[None]))
        merged = aggregate(grids)
        occupancy = OccupancyMap(cfg.grid, merged.values[0])
        peaks = extract_peaks(occupancy, detection_threshold)
        gt_frames.append(list(gt.frames[t]))
        det_frames.append([(0, point) for point, _ in peaks])
    return evaluate_detection(gt_frames, det_frames, EvalConfig())


# ---------------------------------------------------------------------------
# Sweeps


def _apply_axis(spec: ExperimentSpec, axis: str, value) -> ExperimentSpec:
    if axis == "K":
        return replace(spec, tracker=replace(spec.tracker, window=int(value)))
    if axis == "alpha":
        return replace(spec, tracker=replace(spec.tracker, alpha=float(value)))
    if axis in ("cost_mode", "motion_mode", "appearance_mode"):
        return replace(spec, tracker=replace(spec.tracker, **{axis: str(value)}))
    raise ValueError(f"unknown sweep axis {axis!r}")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: str
    seed: str  # seed number, or "mean"/"std"
    config: str
    report: MetricReport


def sweep(
    base: ExperimentSpec,
    axis: str,
    values: Sequence,
    out_dir: Optional[str | Path] = None,
    plot: bool = False,
) -> list[SweepRow]:
    """Run the spec once per axis value per seed, plus aggregate rows.

    Trained parameters are cached per (seed, K) and reused across values that
    do not affect training. Writes sweep.csv (and sweep.svg when plotting)
    under out_dir.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    if not values:
        raise ValueError("sweep needs at least one axis value")

    rows: list[SweepRow] = []
    cache: dict[tuple[int, int], BranchParams] = {}
    for value in values:
        reports: list[MetricReport] = []
        if axis == "pooling":
            spec_hash = config_hash(base) + f"-pool_{value}"
            for seed in base.seeds:
                scenario = replace(base.scenario, seed=seed)
                report = synthetic_detection_run(
                    scenario, str(value), base.tracker.detection_threshold
                )
                reports.append(report)
                rows.append(SweepRow(axis, str(value), str(seed), spec_hash, report))
        else:
            spec = _apply_axis(base, axis, value)
            spec_hash = config_hash(spec)
            for seed in base.seeds:
                key = (seed, spec.tracker.window)
                trained = cache.get(key)
                if trained is None and needs_training(spec.tracker):
                    scenario = replace(spec.scenario, seed=seed)
                    gt, frames = generate_scenario(scenario)
                    trained = train_for_scenario(spec, seed, gt, frames)
                    cache[key] = trained
                res = run_single(spec, seed, trained=trained)
                reports.append(res.report)
                rows.append(SweepRow(axis, str(value), str(seed), spec_hash, res.report))
        for agg in ("mean", "std"):
            values_by_col = {
                col: [float(getattr(r, col)) for r in reports] for col in METRIC_COLUMNS
            }
            agg_report = MetricReport(
                **{
                    col: (
                        float(np.mean(vals))
                        if agg == "mean"
                        else (float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0)
                    )
                    for col, vals in values_by_col.items()
                }
            )
            rows.append(SweepRow(axis, str(value), agg, spec_hash, agg_report))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_sweep_csv(out_dir / "sweep.csv", rows)
        if plot:
            _plot_sweep(out_dir / "sweep.svg", axis, rows)
    return rows


def _write_sweep_csv(path: Path, rows: Sequence[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "seed", "config"] + METRIC_COLUMNS)
        for row in rows:
            cells = [row.axis, row.value, row.seed, row.config]
            for col in METRIC_COLUMNS:
                val = getattr(row.report, col)
                cells.append(f"{float(val):.4f}")
            writer.writerow(cells)


def _plot_sweep(path: Path, axis: str, rows: Sequence[SweepRow]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metric = "moda" if axis == "pooling" else "idf1"
    means = [(r.value, getattr(r.report, metric)) for r in rows if r.seed == "mean"]
    stds = {r.value: getattr(r.report, metric) for r in rows if r.seed == "std"}
    labels = [v for v, _ in means]
    y = [m for _, m in means]
    err = [stds.get(v, 0.0) for v in labels]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(range(len(labels)), y, yerr=err, marker="o", capsize=3)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_xlabel(axis)
    ax.set_ylabel(metric.upper())
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
