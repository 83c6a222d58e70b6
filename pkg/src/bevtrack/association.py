"""Trajectory association: motion/appearance costs, gated assignment, lifecycle.

Each trajectory keeps a window of K+1 slots (newest last); a slot is either an
observation (location + raw feature) or None when the pedestrian could not be
located at that frame. During association at frame t the newest K slots act
as lags 1..K. The combined cost between current detection i and trajectory j
is (1 - alpha) * motion_cost + alpha * appearance_cost, where

* the trajectory motion cost (TMC) sums, over lags, the distance between the
  detected location and the location extrapolated from that lag; empty slots
  fall back to the Kalman estimate of the current position;
* the trajectory appearance cost (TAC) sums, over lags, the softmax
  probability that i matches j among the trajectories located at that lag,
  negated so that lower is better. Empty slots contribute probability 0 and
  are excluded from the softmax denominator.

Assignment is a minimum-cost rectangular matching (padded square Hungarian)
with deterministic tie-breaking, post-gated: only pairs strictly below the
gate survive; rejected detections become new trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .branches import (
    BranchParams,
    TokenSet,
    appearance_branch_forward,
    motion_branch_forward,
)
from .kalman import KalmanConfig, KalmanTrack, kf_init, kf_predict, kf_update
from .simulator import DetectionFrame

MOTION_ATTENTION = "attention"
MOTION_KALMAN = "kalman"
APPEARANCE_TAC = "tac"
APPEARANCE_EMA = "ema"
APPEARANCE_FROZEN = "frozen"
COST_FUSED = "fused"
COST_TMC_ONLY = "tmc_only"
COST_TAC_ONLY = "tac_only"


@dataclass
class TrackerConfig:
    window: int = 7  # K, number of past lags used for association
    alpha: float = 0.98
    gate: float = 0.1
    detection_threshold: float = 0.4
    max_age: Optional[int] = None  # defaults to K
    motion_mode: str = MOTION_ATTENTION
    appearance_mode: str = APPEARANCE_TAC
    cost_mode: str = COST_FUSED
    frame_rate: float = 2.0
    loc_noise: float = 0.0
    ema_momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window (K) must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.motion_mode not in (MOTION_ATTENTION, MOTION_KALMAN):
            raise ValueError(f"unknown motion_mode {self.motion_mode!r}")
        if self.appearance_mode not in (APPEARANCE_TAC, APPEARANCE_EMA, APPEARANCE_FROZEN):
            raise ValueError(f"unknown appearance_mode {self.appearance_mode!r}")
        if self.cost_mode not in (COST_FUSED, COST_TMC_ONLY, COST_TAC_ONLY):
            raise ValueError(f"unknown cost_mode {self.cost_mode!r}")

    @property
    def effective_max_age(self) -> int:
        # Death after K consecutive misses unless explicitly pinned.
        return self.max_age if self.max_age is not None else self.window

    @property
    def effective_alpha(self) -> float:
        if self.cost_mode == COST_TMC_ONLY:
            return 0.0
        if self.cost_mode == COST_TAC_ONLY:
            return 1.0
        return self.alpha


@dataclass
class TrajectorySlot:
    location: np.ndarray  # (2,)
    feature: np.ndarray  # (E,) raw detection feature
    appearance: Optional[np.ndarray] = None  # branch output, frozen mode only


@dataclass
class Trajectory:
    id: int
    window: list[Optional[TrajectorySlot]]  # length K+1, newest last
    kalman: KalmanTrack
    ema_feature: np.ndarray
    age: int = 1
    misses: int = 0

    def past_slots(self, k_lags: int) -> list[Optional[TrajectorySlot]]:
        """Slots for lags 1..K (newest first); the oldest slot falls outside."""
        return self.window[-1 : -1 - k_lags : -1]


@dataclass(frozen=True)
class CostMatrix:
    tmc: np.ndarray
    tac: np.ndarray
    combined: np.ndarray
    alpha: float


@dataclass(frozen=True)
class AssociationResult:
    matches: tuple[tuple[int, int], ...]  # (current detection index, trajectory id)
    births: tuple[int, ...]  # current detection indices
    deaths: tuple[int, ...]  # trajectory ids


def trajectory_motion_cost(
    current: np.ndarray, estimates: np.ndarray
) -> np.ndarray:
    """TMC matrix: entry (i, j) sums distances to per-lag estimated locations.

    current: (N, 2) detected locations; estimates: (M, K, 2) estimated current
    locations of trajectory j derived from lag k (motion-extrapolated or
    Kalman-filled).
    """
    if current.ndim != 2 or estimates.ndim != 3:
        raise ValueError("expected current (N,2) and estimates (M,K,2)")
    deltas = current[:, None, None, :] - estimates[None, :, :, :]
    return np.linalg.norm(deltas, axis=-1).sum(axis=-1)


def trajectory_appearance_cost(
    current_features: np.ndarray,
    past_features: np.ndarray,
    present: np.ndarray,
) -> np.ndarray:
    """TAC matrix: entry (i, j) = -sum_k Pr(j | i) at lag k.

    past_features: (M, K, E) appearance features per trajectory and lag;
    present: (M, K) bool mask of located slots. At each lag the softmax runs
    over the located trajectories only; absent slots contribute 0.
    """
    n, e = current_features.shape
    m, k_lags = present.shape
    cost = np.zeros((n, m))
    for k in range(k_lags):
        cols = np.nonzero(present[:, k])[0]
        if len(cols) == 0:
            continue
        logits = current_features @ past_features[cols, k].T  # (N, |cols|)
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        cost[:, cols] -= probs
    return cost


def fuse(tmc: np.ndarray, tac: np.ndarray, alpha: float) -> CostMatrix:
    """Affine combination (1 - alpha) * TMC + alpha * TAC."""
    if tmc.shape != tac.shape:
        raise ValueError("cost matrices must share a shape")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    combined = (1.0 - alpha) * tmc + alpha * tac
    return CostMatrix(tmc, tac, combined, alpha)


def _solve_square(costs: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(costs)
    return float(costs[rows, cols].sum())


def hungarian(costs: np.ndarray, gate: float) -> list[tuple[int, int]]:
    """Gated minimum-cost assignment on a rectangular matrix.

    The matrix is padded square with dummy entries at the gate level, solved
    exactly, then refined to the lexicographically smallest optimal
    assignment (lowest row, then column, among equal-cost optima). Matched
    pairs are kept only when their original cost is strictly below the gate.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    n_rows, n_cols = costs.shape
    if n_rows == 0 or n_cols == 0:
        return []
    if not np.all(np.isfinite(costs)):
        raise ValueError("cost matrix entries must be finite")
    n = max(n_rows, n_cols)
    # Padding is single-sided (dummy rows or dummy columns, never both), so
    # every permutation pays the dummy value the same number of times and its
    # level cannot change the optimal real assignment; use 0 for an
    # unbounded gate to keep the solver finite.
    dummy = gate if np.isfinite(gate) else 0.0
    padded = np.full((n, n), dummy, dtype=np.float64)
    padded[:n_rows, :n_cols] = costs

    optimum = _solve_square(padded)
    tol = 1e-9
    assigned_cols: list[int] = []
    free_cols = list(range(n))
    remaining = padded
    for row in range(n):
        for idx, col in enumerate(free_cols):
            fixed = remaining[0, idx]
            sub = np.delete(remaining[1:], idx, axis=1)
            rest = _solve_square(sub) if sub.size else 0.0
            if abs(fixed + rest - optimum) <= tol:
                assigned_cols.append(col)
                free_cols.pop(idx)
                remaining = sub
                optimum -= fixed
                break
        else:  # numerical safety net; should be unreachable
            raise RuntimeError("assignment refinement failed to fix a row")

    return [
        (row, col)
        for row, col in enumerate(assigned_cols)
        if row < n_rows and col < n_cols and costs[row, col] < gate
    ]


def ema_aggregate(
    prev_feature: np.ndarray, new_feature: np.ndarray, momentum: float
) -> np.ndarray:
    """Exponential-moving-average feature fusion, renormalized to unit length."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError("momentum must be in [0, 1]")
    mixed = momentum * prev_feature + (1.0 - momentum) * new_feature
    norm = np.linalg.norm(mixed)
    if norm < 1e-12:
        raise ValueError("EMA collapse: mixed feature has zero norm")
    return mixed / norm


class Tracker:
    """Sliding-window tracker over detection frames.

    Mutable single-scenario state: one Tracker per scenario, stepped
    frame-by-frame in order. Emits per-frame output rows
    (frame, id, x, y, conf) for matched and newly born trajectories.
    """

    def __init__(
        self,
        cfg: TrackerConfig,
        params: Optional[BranchParams] = None,
        record_costs: bool = False,
    ):
        if cfg.motion_mode == MOTION_ATTENTION or cfg.appearance_mode in (
            APPEARANCE_TAC,
            APPEARANCE_FROZEN,
        ):
            if params is None:
                raise ValueError("configured modes need branch parameters")
        self.cfg = cfg
        self.params = params
        self.kf_cfg = KalmanConfig.for_scenario(cfg.frame_rate, cfg.loc_noise)
        self.trajectories: list[Trajectory] = []
        self.next_id = 0
        self.output_rows: list[tuple[int, int, float, float, float]] = []
        self.last_costs: Optional[CostMatrix] = None
        self.record_costs = record_costs
        self.cost_history: list[tuple[int, CostMatrix]] = []

    # -- cost assembly ------------------------------------------------------

    def _estimates(
        self,
        trajectories: Sequence[Trajectory],
        timestep: int,
        motions: Optional[dict[tuple[int, int], np.ndarray]],
    ) -> np.ndarray:
        """Estimated current location per (trajectory, lag), (M, K, 2)."""
        k_lags = self.cfg.window
        est = np.zeros((len(trajectories), k_lags, 2))
        for j, traj in enumerate(trajectories):
            steps = timestep - traj.kalman.last_update_timestep
            kf_pos, _ = kf_predict(traj.kalman, max(steps, 1), self.kf_cfg)
            slots = traj.past_slots(k_lags)
            for k_idx, slot in enumerate(slots):
                if slot is None or self.cfg.motion_mode == MOTION_KALMAN:
                    est[j, k_idx] = kf_pos
                else:
                    if motions is None or (j, k_idx + 1) not in motions:
                        raise ValueError(
                            f"missing motion for trajectory {traj.id} lag {k_idx + 1}"
                        )
                    est[j, k_idx] = slot.location + motions[(j, k_idx + 1)]
        return est

    def _build_tokens(
        self, locations: np.ndarray, features: np.ndarray, trajectories: Sequence[Trajectory]
    ) -> tuple[TokenSet, dict[tuple[int, int], int]]:
        """Current detections (lag 0) plus located past slots (lags 1..K).

        Pedestrian indices enumerate detections then trajectories so the
        branches see a consistent token identity space; returns a map from
        (trajectory index, lag) to token row.
        """
        raw: list[np.ndarray] = [features[i] for i in range(len(features))]
        peds = list(range(len(features)))
        lags = [0] * len(features)
        slot_token: dict[tuple[int, int], int] = {}
        for j, traj in enumerate(trajectories):
            for k_idx, slot in enumerate(traj.past_slots(self.cfg.window)):
                if slot is None:
                    continue
                slot_token[(j, k_idx + 1)] = len(raw)
                raw.append(slot.feature)
                peds.append(len(features) + j)
                lags.append(k_idx + 1)
        return TokenSet.build(raw, peds, lags), slot_token

    def _appearance_cost(
        self,
        features: np.ndarray,
        trajectories: Sequence[Trajectory],
        tokens: TokenSet,
        slot_token: dict[tuple[int, int], int],
    ) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """TAC-like matrix per appearance mode, plus current-frame appearance
        features to store on matched trajectories (frozen mode)."""
        k_lags = self.cfg.window
        n, m = len(features), len(trajectories)
        mode = self.cfg.appearance_mode

        if mode == APPEARANCE_EMA:
            if m == 0:
                return np.zeros((n, 0)), None
            logits = features @ np.stack([t.ema_feature for t in trajectories]).T
            logits -= logits.max(axis=1, keepdims=True)
            probs = np.exp(logits)
            probs /= probs.sum(axis=1, keepdims=True)
            return -probs, None

        if mode == APPEARANCE_TAC:
            transformed = appearance_branch_forward(self.params, tokens)
            current = transformed[: len(features)]
            past = np.zeros((m, k_lags, features.shape[1]))
            present = np.zeros((m, k_lags), dtype=bool)
            for (j, lag), row in slot_token.items():
                past[j, lag - 1] = transformed[row]
                present[j, lag - 1] = True
            return trajectory_appearance_cost(current, past, present), current

        # Frozen mode: transform current detections only (keys = the current
        # frame), reuse appearance features stored when each slot was current.
        current_tokens = TokenSet.build(
            [features[i] for i in range(n)], list(range(n)), [0] * n
        )
        current = appearance_branch_forward(self.params, current_tokens)
        e = features.shape[1]
        past = np.zeros((m, k_lags, e))
        present = np.zeros((m, k_lags), dtype=bool)
        for j, traj in enumerate(trajectories):
            for k_idx, slot in enumerate(traj.past_slots(k_lags)):
                if slot is not None and slot.appearance is not None:
                    past[j, k_idx] = slot.appearance
                    present[j, k_idx] = True
        return trajectory_appearance_cost(current, past, present), current

    # -- lifecycle ----------------------------------------------------------

    def _spawn(self, location: np.ndarray, feature: np.ndarray,
               appearance: Optional[np.ndarray], timestep: int) -> Trajectory:
        slot = TrajectorySlot(location.copy(), feature.copy(),
                              None if appearance is None else appearance.copy())
        window: list[Optional[TrajectorySlot]] = [None] * self.cfg.window + [slot]
        traj = Trajectory(
            id=self.next_id,
            window=window,
            kalman=kf_init(location, timestep),
            ema_feature=feature / np.linalg.norm(feature),
        )
        self.next_id += 1
        return traj

    def step(self, frame: DetectionFrame) -> AssociationResult:
        """Associate one detection frame and update the trajectory set."""
        cfg = self.cfg
        t = frame.timestamp
        kept = [d for d in frame.detections if d.confidence >= cfg.detection_threshold]
        n = len(kept)
        locations = np.array([d.location for d in kept]).reshape(n, 2)
        features = (
            np.stack([d.feature for d in kept]) if n else np.zeros((0, 1))
        )

        trajectories = self.trajectories
        matches: list[tuple[int, int]] = []
        matched_rows: set[int] = set()
        matched_traj: set[int] = set()
        current_appearance: Optional[np.ndarray] = None

        if n and trajectories:
            tokens, slot_token = self._build_tokens(locations, features, trajectories)
            motions: Optional[dict[tuple[int, int], np.ndarray]] = None
            if cfg.motion_mode == MOTION_ATTENTION:
                predicted = motion_branch_forward(self.params, tokens)
                motions = {key: predicted[row] for key, row in slot_token.items()}
            tmc = trajectory_motion_cost(
                locations, self._estimates(trajectories, t, motions)
            )
            tac, current_appearance = self._appearance_cost(
                features, trajectories, tokens, slot_token
            )
            costs = fuse(tmc, tac, cfg.effective_alpha)
            # Range invariants: TMC is a sum of distances, TAC a negated sum
            # of per-lag probabilities. Violations mean corrupted inputs.
            if np.any(costs.tmc < 0.0):
                raise RuntimeError("motion cost went negative")
            if np.any(costs.tac > 1e-9) or np.any(costs.tac < -cfg.window - 1e-9):
                raise RuntimeError("appearance cost left [-K, 0]")
            self.last_costs = costs
            if self.record_costs:
                self.cost_history.append((t, costs))
            for i, j in hungarian(costs.combined, cfg.gate):
                matches.append((i, trajectories[j].id))
                matched_rows.add(i)
                matched_traj.add(j)
                slot = TrajectorySlot(
                    locations[i].copy(),
                    features[i].copy(),
                    None
                    if current_appearance is None
                    else current_appearance[i].copy(),
                )
                traj = trajectories[j]
                traj.window.pop(0)
                traj.window.append(slot)
                traj.kalman = kf_update(traj.kalman, locations[i], t, self.kf_cfg)
                traj.misses = 0
                traj.ema_feature = ema_aggregate(
                    traj.ema_feature, features[i], cfg.ema_momentum
                )
        elif cfg.appearance_mode == APPEARANCE_FROZEN and n and self.params is not None:
            current_tokens = TokenSet.build(
                [features[i] for i in range(n)], list(range(n)), [0] * n
            )
            current_appearance = appearance_branch_forward(self.params, current_tokens)

        births: list[int] = []
        deaths: list[int] = []
        survivors: list[Trajectory] = []
        for j, traj in enumerate(trajectories):
            if j in matched_traj:
                traj.age += 1
                survivors.append(traj)
                continue
            traj.window.pop(0)
            traj.window.append(None)
            traj.misses += 1
            traj.age += 1
            if traj.misses > cfg.effective_max_age:
                deaths.append(traj.id)
            else:
                survivors.append(traj)

        for i in range(n):
            if i in matched_rows:
                continue
            appearance = (
                current_appearance[i] if current_appearance is not None else None
            )
            traj = self._spawn(locations[i], features[i], appearance, t)
            survivors.append(traj)
            births.append(i)

        self.trajectories = survivors

        id_of = {i: tid for i, tid in matches}
        born = {i: tr.id for i, tr in zip(births, survivors[-len(births):] if births else [])}
        for i, det in enumerate(kept):
            if i in id_of:
                tid = id_of[i]
            elif i in born:
                tid = born[i]
            else:
                continue
            self.output_rows.append(
                (t, tid, float(det.location[0]), float(det.location[1]), det.confidence)
            )

        return AssociationResult(tuple(matches), tuple(births), tuple(deaths))
