"""File formats shared by the simulator, tracker, and experiment runner.

* Point dumps (ground truth, detections, tracks): CSV with header
  ``frame,id,x_m,y_m,conf`` where id is -1 for clutter. Feature vectors, when
  present, live in a sidecar binary of little-endian float32, one row per CSV
  data row in the same order.
* Branch parameter checkpoints: little-endian float64 binary plus a JSON
  manifest listing tensor names and shapes (see branches.save_params).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .simulator import Detection, DetectionFrame, GroundTruth

POINTS_HEADER = ["frame", "id", "x_m", "y_m", "conf"]


@dataclass(frozen=True)
class PointRow:
    frame: int
    track_id: int
    x: float
    y: float
    conf: float


def write_points_csv(path: str | Path, rows: Iterable[PointRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POINTS_HEADER)
        for row in rows:
            writer.writerow(
                [row.frame, row.track_id, f"{row.x:.6f}", f"{row.y:.6f}", f"{row.conf:.6f}"]
            )


def read_points_csv(path: str | Path) -> list[PointRow]:
    rows: list[PointRow] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != POINTS_HEADER:
            raise ValueError(f"unexpected header {header!r} in {path}")
        for rec in reader:
            rows.append(
                PointRow(int(rec[0]), int(rec[1]), float(rec[2]), float(rec[3]), float(rec[4]))
            )
    return rows


def write_features_bin(path: str | Path, features: Sequence[np.ndarray]) -> None:
    if features:
        stacked = np.vstack([np.asarray(f, dtype=np.float32) for f in features])
    else:
        stacked = np.zeros((0, 0), dtype=np.float32)
    stacked.astype("<f4").tofile(path)


def read_features_bin(path: str | Path, embed_dim: int) -> np.ndarray:
    flat = np.fromfile(path, dtype="<f4")
    if embed_dim <= 0 or flat.size % embed_dim:
        raise ValueError(f"feature file size {flat.size} not divisible by {embed_dim}")
    return flat.reshape(-1, embed_dim).astype(np.float64)


def dump_detections(
    csv_path: str | Path, frames: Sequence[DetectionFrame], bin_path: Optional[str | Path] = None
) -> None:
    rows = []
    feats = []
    for frame in frames:
        for det in frame.detections:
            tid = -1 if det.truth_id is None else det.truth_id
            rows.append(
                PointRow(frame.timestamp, tid, float(det.location[0]), float(det.location[1]), det.confidence)
            )
            feats.append(det.feature)
    write_points_csv(csv_path, rows)
    if bin_path is not None:
        write_features_bin(bin_path, feats)


def load_detections(
    csv_path: str | Path, bin_path: str | Path, embed_dim: int
) -> list[DetectionFrame]:
    rows = read_points_csv(csv_path)
    feats = read_features_bin(bin_path, embed_dim)
    if len(rows) != feats.shape[0]:
        raise ValueError("CSV rows and feature rows are misaligned")
    by_frame: dict[int, list[Detection]] = {}
    for row, feat in zip(rows, feats):
        det = Detection(
            location=np.array([row.x, row.y]),
            confidence=row.conf,
            feature=feat,
            truth_id=None if row.track_id == -1 else row.track_id,
        )
        by_frame.setdefault(row.frame, []).append(det)
    return [
        DetectionFrame(t, tuple(by_frame[t])) for t in sorted(by_frame)
    ]


def dump_ground_truth(
    csv_path: str | Path, gt: GroundTruth, bin_path: Optional[str | Path] = None
) -> None:
    rows = []
    feats = []
    for t, frame in enumerate(gt.frames):
        for ped_id, point in frame:
            rows.append(PointRow(t, ped_id, float(point[0]), float(point[1]), 1.0))
            feats.append(gt.embeddings[ped_id])
    write_points_csv(csv_path, rows)
    if bin_path is not None:
        write_features_bin(bin_path, feats)


def points_by_frame(
    rows: Sequence[PointRow], num_frames: Optional[int] = None
) -> list[list[tuple[int, np.ndarray]]]:
    """Group CSV rows into per-frame (id, point) lists, frames 0..max."""
    last = max((r.frame for r in rows), default=-1)
    count = num_frames if num_frames is not None else last + 1
    if last >= count:
        raise ValueError(f"row frame {last} outside expected range {count}")
    frames: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(count)]
    for row in rows:
        frames[row.frame].append((row.track_id, np.array([row.x, row.y])))
    return frames
