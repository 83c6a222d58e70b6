"""Built-in oracle suites for the `selftest` CLI subcommand.

Each check recomputes expected values through an independent route (exhaustive
permutations, naive loops, finite differences, closed forms) and compares the
library against it. Prints one PASS/FAIL line per check.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import branches
from .association import fuse, hungarian, trajectory_appearance_cost, trajectory_motion_cost
from .geometry import look_at_camera, pixel_to_ground, project_ground_to_pixel
from .kalman import KalmanConfig, kf_init, kf_predict, kf_update
from .metrics import EvalConfig, evaluate_tracking


def _brute_force_min(costs: np.ndarray) -> float:
    n_rows, n_cols = costs.shape
    n = max(n_rows, n_cols)
    padded = np.zeros((n, n))
    padded[:n_rows, :n_cols] = costs
    return min(
        sum(padded[r, perm[r]] for r in range(n))
        for perm in itertools.permutations(range(n))
    )


def check_hungarian(trials: int = 200) -> bool:
    rng = np.random.default_rng(7)
    for _ in range(trials):
        shape = rng.integers(1, 7, size=2)
        costs = rng.integers(-2, 3, size=shape).astype(float)
        pairs = hungarian(costs, gate=np.inf)
        total = sum(costs[r, c] for r, c in pairs)
        # With an infinite gate every row or column gets matched; compare
        # against the exhaustive minimum over zero-padded square matrices.
        if abs(total - _brute_force_min(costs)) > 1e-12:
            return False
    return True


def check_cost_formulas(trials: int = 20) -> bool:
    rng = np.random.default_rng(11)
    for _ in range(trials):
        n, m, k = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 5)
        cur = rng.normal(size=(n, 2))
        est = rng.normal(size=(m, k, 2))
        got = trajectory_motion_cost(cur, est)
        want = np.zeros((n, m))
        for i in range(n):
            for j in range(m):
                want[i, j] = sum(
                    math.dist(cur[i], est[j, kk]) for kk in range(k)
                )
        if np.max(np.abs(got - want)) > 1e-10:
            return False

        e = 8
        cf = rng.normal(size=(n, e))
        pf = rng.normal(size=(m, k, e))
        present = rng.uniform(size=(m, k)) < 0.8
        got = trajectory_appearance_cost(cf, pf, present)
        want = np.zeros((n, m))
        for i in range(n):
            for kk in range(k):
                cols = [j for j in range(m) if present[j, kk]]
                if not cols:
                    continue
                exps = [math.exp(float(cf[i] @ pf[j, kk])) for j in cols]
                z = sum(exps)
                for j, ex in zip(cols, exps):
                    want[i, j] -= ex / z
        if np.max(np.abs(got - want)) > 1e-10:
            return False

        alpha = float(rng.uniform())
        a = rng.normal(size=(n, m))
        b = rng.normal(size=(n, m))
        fused = fuse(a, b, alpha).combined
        if np.max(np.abs(fused - ((1 - alpha) * a + alpha * b))) > 1e-12:
            return False
    return True


def check_geometry_roundtrip(trials: int = 100) -> bool:
    rng = np.random.default_rng(13)
    for _ in range(trials):
        eye = np.array(
            [rng.uniform(-10, 22), rng.uniform(-10, 22), rng.uniform(3, 12)]
        )
        target = np.array([rng.uniform(2, 10), rng.uniform(2, 10), 0.0])
        cam = look_at_camera(eye, target, focal_px=400.0, image_size=(480, 640))
        point = target[:2] + rng.uniform(-1.0, 1.0, size=2)
        pixel = project_ground_to_pixel(cam, point)
        if pixel is None:
            continue
        if np.max(np.abs(pixel_to_ground(cam, pixel) - point)) > 1e-9:
            return False
    return True


def check_gradients() -> bool:
    rng = np.random.default_rng(17)
    params = branches.init_params(embed_dim=8, num_heads=2, num_blocks=1, seed=3)
    n, k = 2, 2
    raw = [rng.normal(size=8) for _ in range(n * (k + 1))]
    peds = [p for _ in range(k + 1) for p in range(n)]
    lags = [lag for lag in range(k + 1) for _ in range(n)]
    tokens = branches.TokenSet.build(raw, peds, lags)
    batch = branches.TrainingBatch(tokens, rng.normal(size=(n, k, 2)), l_det=0.25)
    _, grads = branches.forward_backward(params, batch)

    tensors = params.tensors()
    step = 1e-5
    for name, tensor in tensors.items():
        flat = tensor.reshape(-1)
        for idx in rng.choice(flat.size, size=min(3, flat.size), replace=False):
            original = flat[idx]
            flat[idx] = original + step
            up = branches.forward_backward(params, batch)[0].l_all
            flat[idx] = original - step
            down = branches.forward_backward(params, batch)[0].l_all
            flat[idx] = original
            fd = (up - down) / (2 * step)
            analytic = grads[name].reshape(-1)[idx]
            if abs(analytic - fd) > 1e-4 * max(1.0, abs(fd)):
                return False
    return True


def check_kalman() -> bool:
    cfg = KalmanConfig.for_scenario(frame_rate=2.0, loc_noise=0.0)
    track = kf_init(np.array([0.0, 0.0]), 0)
    track = kf_update(track, np.array([0.5, 1.0]), 1, cfg)
    track = kf_update(track, np.array([1.0, 2.0]), 2, cfg)
    predicted, _ = kf_predict(track, 3, cfg)
    return bool(np.max(np.abs(predicted - np.array([2.5, 5.0]))) < 1e-9)


def check_metrics() -> bool:
    a = np.array
    gt = [
        [(0, a([0.0, 0.0])), (1, a([5.0, 0.0]))],
        [(0, a([0.0, 1.0])), (1, a([5.0, 1.0]))],
        [(0, a([0.0, 2.0])), (1, a([5.0, 2.0]))],
    ]
    hyp = [
        [(10, a([0.0, 0.0])), (20, a([5.0, 0.0]))],
        [(10, a([0.0, 1.0])), (20, a([5.0, 1.0]))],
        [(30, a([0.0, 2.0])), (20, a([5.0, 2.0]))],
    ]
    report = evaluate_tracking(gt, hyp, EvalConfig())
    return (
        report.idsw == 1
        and report.fp == 0
        and report.fn == 0
        and abs(report.mota - 100.0 * (1 - 1 / 6)) < 1e-9
    )


CHECKS = [
    ("hungarian_vs_bruteforce", check_hungarian),
    ("cost_formula_oracles", check_cost_formulas),
    ("geometry_roundtrip", check_geometry_roundtrip),
    ("gradient_finite_difference", check_gradients),
    ("kalman_exactness", check_kalman),
    ("metrics_micro_sequence", check_metrics),
]


def run_selftest() -> int:
    failures = 0
    for name, check in CHECKS:
        ok = check()
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        if not ok:
            failures += 1
    return 0 if failures == 0 else 1
