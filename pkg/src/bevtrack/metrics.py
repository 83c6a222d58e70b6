"""Tracking and detection metrics with distance-gated matching.

Tracking follows the CLEAR protocol: per-frame minimum-distance matching with
match continuity (a ground-truth/hypothesis pair matched at the previous
frame is kept while still within the gate), identity switches counted against
each ground-truth identity's last known match, plus identity-level IDF1 via a
global bipartite matching over whole-sequence co-occurrence counts. The gate
is strict: a pair at exactly the gate distance does not match.

Scores are percentages. MOTP is reported as a similarity (100 * mean of
1 - distance/gate over matched pairs), so higher is better for every
"-P" metric. Ratios with a zero denominator score 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

Frame = Sequence[tuple[int, np.ndarray]]  # (identity, position) per frame

_INFEASIBLE = 1e9


@dataclass(frozen=True)
class EvalConfig:
    tracking_gate: float = 1.0  # meters
    detection_gate: float = 0.5

    def __post_init__(self) -> None:
        if self.tracking_gate <= 0 or self.detection_gate <= 0:
            raise ValueError("gates must be positive")


@dataclass(frozen=True)
class MetricReport:
    idf1: float = 0.0
    mota: float = 0.0
    motp: float = 0.0
    mt_pct: float = 0.0
    ml_pct: float = 0.0
    moda: float = 0.0
    modp: float = 0.0
    recall: float = 0.0
    precision: float = 0.0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    gt: int = 0
    tp: int = 0


def _check_alignment(gt_frames: Sequence[Frame], other: Sequence[Frame]) -> None:
    if len(gt_frames) != len(other):
        raise ValueError(
            f"frame misalignment: {len(gt_frames)} ground-truth vs {len(other)} frames"
        )


def _gated_matching(
    gt_points: np.ndarray, hyp_points: np.ndarray, gate: float
) -> list[tuple[int, int, float]]:
    """Minimum-distance matching; only pairs strictly inside the gate."""
    if len(gt_points) == 0 or len(hyp_points) == 0:
        return []
    dists = np.linalg.norm(gt_points[:, None, :] - hyp_points[None, :, :], axis=-1)
    costs = np.where(dists < gate, dists, _INFEASIBLE)
    rows, cols = linear_sum_assignment(costs)
    return [
        (int(r), int(c), float(dists[r, c]))
        for r, c in zip(rows, cols)
        if dists[r, c] < gate
    ]


def _ratio(num: float, den: float) -> float:
    return 100.0 * num / den if den > 0 else 0.0


def evaluate_tracking(
    gt_frames: Sequence[Frame], hyp_frames: Sequence[Frame], cfg: EvalConfig
) -> MetricReport:
    """Score identity-labelled tracks against ground truth, frame-aligned."""
    _check_alignment(gt_frames, hyp_frames)
    gate = cfg.tracking_gate

    total_gt = sum(len(f) for f in gt_frames)
    total_hyp = sum(len(f) for f in hyp_frames)
    fp = fn = idsw = tp = 0
    dist_sum = 0.0
    continuity: dict[int, int] = {}  # gt id -> hyp id matched at previous frame
    last_match: dict[int, int] = {}  # gt id -> last ever matched hyp id
    gt_presence: dict[int, int] = {}
    gt_matched_frames: dict[int, int] = {}
    overlap: dict[tuple[int, int], int] = {}

    for gt_frame, hyp_frame in zip(gt_frames, hyp_frames):
        gt_ids = [int(i) for i, _ in gt_frame]
        hyp_ids = [int(i) for i, _ in hyp_frame]
        gt_pts = np.array([p for _, p in gt_frame]).reshape(len(gt_ids), 2)
        hyp_pts = np.array([p for _, p in hyp_frame]).reshape(len(hyp_ids), 2)
        for g in gt_ids:
            gt_presence[g] = gt_presence.get(g, 0) + 1

        # Keep continuing pairs while still inside the gate.
        pairs: list[tuple[int, int, float]] = []
        used_g: set[int] = set()
        used_h: set[int] = set()
        hyp_pos = {h: k for k, h in enumerate(hyp_ids)}
        for gi, g in enumerate(gt_ids):
            h = continuity.get(g)
            if h is None or h not in hyp_pos:
                continue
            hi = hyp_pos[h]
            d = float(np.linalg.norm(gt_pts[gi] - hyp_pts[hi]))
            if d < gate:
                pairs.append((gi, hi, d))
                used_g.add(gi)
                used_h.add(hi)

        free_g = [gi for gi in range(len(gt_ids)) if gi not in used_g]
        free_h = [hi for hi in range(len(hyp_ids)) if hi not in used_h]
        for gi, hi, d in _gated_matching(
            gt_pts[free_g].reshape(len(free_g), 2),
            hyp_pts[free_h].reshape(len(free_h), 2),
            gate,
        ):
            pairs.append((free_g[gi], free_h[hi], d))

        continuity = {}
        for gi, hi, d in pairs:
            g, h = gt_ids[gi], hyp_ids[hi]
            if g in last_match and last_match[g] != h:
                idsw += 1
            last_match[g] = h
            continuity[g] = h
            tp += 1
            dist_sum += d
            gt_matched_frames[g] = gt_matched_frames.get(g, 0) + 1
            overlap[(g, h)] = overlap.get((g, h), 0) + 1

        fn += len(gt_ids) - len(pairs)
        fp += len(hyp_ids) - len(pairs)

    mota = 100.0 * (1.0 - (fp + fn + idsw) / total_gt) if total_gt else 0.0
    motp = 100.0 * (1.0 - (dist_sum / tp) / gate) if tp else 0.0

    # IDF1: optimal 1-1 identity mapping maximizing total co-occurrence.
    gt_index = {g: i for i, g in enumerate(sorted(gt_presence))}
    hyp_index = {h: i for i, h in enumerate(sorted({int(h) for f in hyp_frames for h, _ in f}))}
    idtp = 0
    if gt_index and hyp_index:
        gain = np.zeros((len(gt_index), len(hyp_index)))
        for (g, h), count in overlap.items():
            gain[gt_index[g], hyp_index[h]] = count
        rows, cols = linear_sum_assignment(-gain)
        idtp = int(gain[rows, cols].sum())
    idf1 = _ratio(2 * idtp, total_gt + total_hyp)

    mt = ml = 0
    for g, present in gt_presence.items():
        ratio = gt_matched_frames.get(g, 0) / present
        if ratio >= 0.8:
            mt += 1
        if ratio <= 0.2:
            ml += 1
    mt_pct = _ratio(mt, len(gt_presence))
    ml_pct = _ratio(ml, len(gt_presence))

    return MetricReport(
        idf1=idf1,
        mota=mota,
        motp=motp,
        mt_pct=mt_pct,
        ml_pct=ml_pct,
        fp=fp,
        fn=fn,
        idsw=idsw,
        gt=total_gt,
        tp=tp,
    )


def evaluate_detection(
    gt_frames: Sequence[Frame], det_frames: Sequence[Frame], cfg: EvalConfig
) -> MetricReport:
    """Score per-frame detections against ground truth (identities ignored)."""
    _check_alignment(gt_frames, det_frames)
    gate = cfg.detection_gate

    total_gt = sum(len(f) for f in gt_frames)
    fp = fn = tp = 0
    dist_sum = 0.0
    for gt_frame, det_frame in zip(gt_frames, det_frames):
        gt_pts = np.array([p for _, p in gt_frame]).reshape(len(gt_frame), 2)
        det_pts = np.array([p for _, p in det_frame]).reshape(len(det_frame), 2)
        pairs = _gated_matching(gt_pts, det_pts, gate)
        tp += len(pairs)
        dist_sum += sum(d for _, _, d in pairs)
        fn += len(gt_frame) - len(pairs)
        fp += len(det_frame) - len(pairs)

    moda = 100.0 * (1.0 - (fp + fn) / total_gt) if total_gt else 0.0
    modp = 100.0 * (1.0 - (dist_sum / tp) / gate) if tp else 0.0
    return MetricReport(
        moda=moda,
        modp=modp,
        recall=_ratio(tp, total_gt),
        precision=_ratio(tp, tp + fp),
        fp=fp,
        fn=fn,
        gt=total_gt,
        tp=tp,
    )
