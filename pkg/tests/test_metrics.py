"""Metric tests against hand-computed micro-sequences and invariances."""

import numpy as np
import pytest

from bevtrack.metrics import EvalConfig, evaluate_detection, evaluate_tracking


def pt(x, y):
    return np.array([float(x), float(y)])


def straight_gt(num_ids=2, frames=3, spacing=5.0):
    return [
        [(i, pt(i * spacing, t)) for i in range(num_ids)] for t in range(frames)
    ]


class TestTrackingMicroSequences:
    def test_perfect_tracker(self):
        gt = straight_gt()
        hyp = [[(i + 100, p) for i, p in frame] for frame in gt]
        report = evaluate_tracking(gt, hyp, EvalConfig())
        assert report.mota == 100.0
        assert report.idf1 == 100.0
        assert report.motp == 100.0
        assert report.mt_pct == 100.0
        assert report.ml_pct == 0.0
        assert report.idsw == 0

    def test_all_miss(self):
        gt = straight_gt()
        hyp = [[] for _ in gt]
        report = evaluate_tracking(gt, hyp, EvalConfig())
        assert report.mota == 0.0  # 100 * (1 - GT/GT)
        assert report.idf1 == 0.0
        assert report.ml_pct == 100.0
        assert report.fn == 6

    def test_single_id_switch(self):
        # Two identities over three frames; at the last frame identity A's
        # hypothesis id changes. Hand accounting: FP=0 FN=0 IDSW=1 GT=6.
        gt = straight_gt()
        hyp = [
            [(1, pt(0, 0)), (2, pt(5, 0))],
            [(1, pt(0, 1)), (2, pt(5, 1))],
            [(3, pt(0, 2)), (2, pt(5, 2))],
        ]
        report = evaluate_tracking(gt, hyp, EvalConfig())
        assert report.fp == 0
        assert report.fn == 0
        assert report.idsw == 1
        assert abs(report.mota - 100.0 * (1.0 - 1.0 / 6.0)) < 1e-9
        # IDF1: best mapping A->1, B->2 gives IDTP=5 of 6 gt and 6 hyp points
        assert abs(report.idf1 - 100.0 * 2 * 5 / 12.0) < 1e-9
        assert report.mt_pct == 100.0

    def test_switch_after_gap_counts(self):
        gt = [[(0, pt(0, t))] for t in range(3)]
        hyp = [[(7, pt(0, 0))], [], [(8, pt(0, 2))]]
        report = evaluate_tracking(gt, hyp, EvalConfig())
        assert report.idsw == 1
        assert report.fn == 1

    def test_match_continuity_preferred(self):
        # Two hypotheses near one ground truth: the one matched previously
        # stays matched even though the other is now slightly closer.
        gt = [[(0, pt(0, 0))], [(0, pt(0, 0))]]
        hyp = [
            [(1, pt(0.3, 0))],
            [(1, pt(0.3, 0)), (2, pt(0.1, 0))],
        ]
        report = evaluate_tracking(gt, hyp, EvalConfig())
        assert report.idsw == 0
        assert report.fp == 1  # the interloper goes unmatched

    def test_gate_is_strict(self):
        gt = [[(0, pt(0, 0))]]
        hyp = [[(5, pt(1.0, 0))]]  # displaced by exactly the gate
        report = evaluate_tracking(gt, hyp, EvalConfig(tracking_gate=1.0))
        assert report.tp == 0
        assert report.fn == 1
        assert report.fp == 1

    def test_id_relabeling_invariance(self):
        rng = np.random.default_rng(0)
        gt = [
            [(i, pt(3 * i + rng.uniform(-0.2, 0.2), t)) for i in range(4)]
            for t in range(6)
        ]
        hyp = [
            [(i, pt(3 * i + rng.uniform(-0.4, 0.4), t)) for i in range(4)]
            for t in range(6)
        ]
        base = evaluate_tracking(gt, hyp, EvalConfig())
        relabeled = [[(i + 55, p) for i, p in frame] for frame in hyp]
        again = evaluate_tracking(gt, relabeled, EvalConfig())
        assert base == again

    def test_mota_decreases_with_injected_switches(self):
        gt = [[(0, pt(0, t)), (1, pt(8, t))] for t in range(10)]

        def hyp_with_switches(count):
            frames = []
            for t in range(10):
                a, b = (10, 11) if t >= 10 - count and (10 - t) % 2 else (10, 11)
                # swap labels in the last `count` frames alternately
                if t >= 10 - count and (t - (10 - count)) % 2 == 0:
                    a, b = 11, 10
                frames.append([(a, pt(0, t)), (b, pt(8, t))])
            return frames

        motas = []
        for count in (0, 2, 4):
            report = evaluate_tracking(gt, hyp_with_switches(count), EvalConfig())
            motas.append(report.mota)
        assert motas[0] >= motas[1] >= motas[2]
        assert motas[0] > motas[2]

    def test_frame_misalignment_error(self):
        gt = straight_gt()
        with pytest.raises(ValueError):
            evaluate_tracking(gt, gt[:2], EvalConfig())


class TestDetectionMetrics:
    def test_perfect(self):
        gt = straight_gt()
        dets = [[(0, p) for _, p in frame] for frame in gt]
        report = evaluate_detection(gt, dets, EvalConfig())
        assert report.moda == 100.0
        assert report.recall == 100.0
        assert report.precision == 100.0
        assert report.modp == 100.0

    def test_clutter_accounting(self):
        # GT: 10 points in one frame; detections: those 10 plus 5 clutter.
        gt = [[(i, pt(i * 3, 0)) for i in range(10)]]
        clutter = [(99, pt(i * 3 + 1.5, 20)) for i in range(5)]
        dets = [[(0, p) for _, p in gt[0]] + clutter]
        report = evaluate_detection(gt, dets, EvalConfig())
        assert abs(report.precision - 100.0 * 10 / 15) < 1e-9
        assert report.recall == 100.0
        assert abs(report.moda - 100.0 * (1.0 - 5.0 / 10.0)) < 1e-9

    def test_boundary_displacement_counts_fn_and_fp(self):
        gt = [[(0, pt(0, 0))]]
        dets = [[(0, pt(0.5, 0))]]  # exactly the detection gate
        report = evaluate_detection(gt, dets, EvalConfig(detection_gate=0.5))
        assert report.tp == 0
        assert report.fn == 1
        assert report.fp == 1
        inside = [[(0, pt(0.499, 0))]]
        report = evaluate_detection(gt, inside, EvalConfig(detection_gate=0.5))
        assert report.tp == 1

    def test_modp_distance_scaling(self):
        gt = [[(0, pt(0, 0))]]
        dets = [[(0, pt(0.25, 0))]]
        report = evaluate_detection(gt, dets, EvalConfig(detection_gate=0.5))
        assert abs(report.modp - 100.0 * (1.0 - 0.25 / 0.5)) < 1e-9

    def test_empty_inputs(self):
        gt = [[(0, pt(0, 0))], [(0, pt(0, 1))]]
        report = evaluate_detection(gt, [[], []], EvalConfig())
        assert report.recall == 0.0
        assert report.precision == 0.0
        assert report.moda == 0.0
