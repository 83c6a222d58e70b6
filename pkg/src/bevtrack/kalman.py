"""Constant-velocity Kalman filter on the 2D ground plane.

Used to estimate current positions for trajectory slots with no located
observation, and as the ablation motion predictor. Tracks are values: every
operation returns a new track and never mutates its input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Filter defaults, tuned to the simulator; exposed via KalmanConfig.
# Process noise drives velocity only: position noise would leak into the
# innovation and spoil exact recovery of noiseless constant-velocity motion.
INIT_COVARIANCE_DIAG = (1.0, 1.0, 10.0, 10.0)
PROCESS_NOISE_DIAG = (0.0, 0.0, 0.1, 0.1)
MEASUREMENT_NOISE_FLOOR = 0.01  # m^2, for scenarios with localisation noise
NOISELESS_MEASUREMENT_NOISE = 1e-12  # keeps covariance PD, error ~1e-12 m

_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class KalmanConfig:
    dt: float = 0.5
    process_noise_diag: tuple[float, float, float, float] = PROCESS_NOISE_DIAG
    measurement_noise: float = MEASUREMENT_NOISE_FLOOR

    @classmethod
    def for_scenario(cls, frame_rate: float, loc_noise: float) -> "KalmanConfig":
        noise = (
            max(loc_noise**2, MEASUREMENT_NOISE_FLOOR)
            if loc_noise > 0
            else NOISELESS_MEASUREMENT_NOISE
        )
        return cls(dt=1.0 / frame_rate, measurement_noise=noise)


@dataclass(frozen=True)
class KalmanTrack:
    """State (x, y, vx, vy) with covariance; timestep of the last update."""

    state: np.ndarray
    covariance: np.ndarray
    last_update_timestep: int

    def __post_init__(self) -> None:
        if np.max(np.abs(self.covariance - self.covariance.T)) > 1e-9:
            raise ValueError("covariance must be symmetric")
        if np.any(np.diag(self.covariance) <= 0):
            raise ValueError("covariance diagonal must be positive")

    @property
    def position(self) -> np.ndarray:
        return self.state[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[2:]


def kf_init(observation: np.ndarray, timestep: int) -> KalmanTrack:
    """New track at the first observation with zero velocity."""
    state = np.array([observation[0], observation[1], 0.0, 0.0], dtype=np.float64)
    return KalmanTrack(state, np.diag(INIT_COVARIANCE_DIAG).astype(np.float64), timestep)


def _transition(dt: float) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = dt
    f[1, 3] = dt
    return f


def kf_predict(
    track: KalmanTrack, steps: int, cfg: KalmanConfig
) -> tuple[np.ndarray, KalmanTrack]:
    """Propagate `steps` frames ahead; returns (predicted position, track)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    f = _transition(cfg.dt)
    q = np.diag(cfg.process_noise_diag) * cfg.dt
    state = track.state.copy()
    cov = track.covariance.copy()
    for _ in range(steps):
        state = f @ state
        cov = f @ cov @ f.T + q
    cov = 0.5 * (cov + cov.T)
    out = KalmanTrack(state, cov, track.last_update_timestep)
    return out.position.copy(), out


def kf_update(
    track: KalmanTrack, observation: np.ndarray, timestep: int, cfg: KalmanConfig
) -> KalmanTrack:
    """Measurement update at `timestep`, propagating the state there first."""
    obs = np.asarray(observation, dtype=np.float64)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation must be finite")
    if timestep < track.last_update_timestep:
        raise ValueError("observation predates the last update")
    steps = timestep - track.last_update_timestep
    if steps > 0:
        _, track = kf_predict(track, steps, cfg)
    r = np.eye(2) * cfg.measurement_noise
    innovation = obs - _H @ track.state
    s = _H @ track.covariance @ _H.T + r
    gain = track.covariance @ _H.T @ np.linalg.inv(s)
    state = track.state + gain @ innovation
    cov = (np.eye(4) - gain @ _H) @ track.covariance
    cov = 0.5 * (cov + cov.T)
    return KalmanTrack(state, cov, timestep)
