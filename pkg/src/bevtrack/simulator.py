"""Synthetic multi-camera BEV tracking scenarios.

Stands in for the detection backbone: produces ground-truth trajectories with
per-identity unit appearance embeddings, plus noisy per-frame detections
(misses, localization noise, feature noise, Poisson clutter). Generation is
fully deterministic given the config seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import BevGrid, CameraModel, look_at_camera, project_ground_to_pixel

# Pedestrians seen by fewer than this many cameras miss more often.
MIN_VISIBLE_CAMERAS = 2
OCCLUDED_MISS_SCALE = 1.5


@dataclass(frozen=True)
class ScenarioConfig:
    grid: BevGrid
    cameras: tuple[CameraModel, ...]
    num_pedestrians: int
    num_frames: int
    frame_rate: float = 2.0
    speed_range: tuple[float, float] = (0.5, 1.5)
    turn_noise: float = 0.15
    embed_dim: int = 64
    embed_noise: float = 0.0
    miss_prob: float = 0.0
    clutter_rate: float = 0.0
    loc_noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_pedestrians < 1 or self.num_frames < 1 or self.embed_dim < 1:
            raise ValueError("dimensions must be positive")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ValueError("miss_prob must be in [0, 1]")
        if self.clutter_rate < 0 or self.loc_noise < 0 or self.embed_noise < 0:
            raise ValueError("noise rates must be non-negative")
        if not 0 < self.speed_range[0] <= self.speed_range[1]:
            raise ValueError("speed_range must satisfy 0 < lo <= hi")

    def to_dict(self) -> dict:
        return {
            "grid": {
                "width_cells": self.grid.width_cells,
                "height_cells": self.grid.height_cells,
                "cell_size": self.grid.cell_size,
            },
            "cameras": [cam.to_dict() for cam in self.cameras],
            "num_pedestrians": self.num_pedestrians,
            "num_frames": self.num_frames,
            "frame_rate": self.frame_rate,
            "speed_range": list(self.speed_range),
            "turn_noise": self.turn_noise,
            "embed_dim": self.embed_dim,
            "embed_noise": self.embed_noise,
            "miss_prob": self.miss_prob,
            "clutter_rate": self.clutter_rate,
            "loc_noise": self.loc_noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        return cls(
            grid=BevGrid(**data["grid"]),
            cameras=tuple(CameraModel.from_dict(c) for c in data.get("cameras", [])),
            num_pedestrians=data["num_pedestrians"],
            num_frames=data["num_frames"],
            frame_rate=data.get("frame_rate", 2.0),
            speed_range=tuple(data.get("speed_range", (0.5, 1.5))),
            turn_noise=data.get("turn_noise", 0.15),
            embed_dim=data.get("embed_dim", 64),
            embed_noise=data.get("embed_noise", 0.0),
            miss_prob=data.get("miss_prob", 0.0),
            clutter_rate=data.get("clutter_rate", 0.0),
            loc_noise=data.get("loc_noise", 0.0),
            seed=data.get("seed", 0),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Detection:
    location: np.ndarray  # (2,) meters
    confidence: float
    feature: np.ndarray  # (E,)
    truth_id: Optional[int]  # None exactly for clutter


@dataclass(frozen=True)
class DetectionFrame:
    timestamp: int
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class GroundTruth:
    """Per-frame (id, position) lists plus canonical unit embeddings per id."""

    frames: tuple[tuple[tuple[int, np.ndarray], ...], ...]
    embeddings: np.ndarray  # (N, E), unit rows

    @property
    def num_frames(self) -> int:
        return len(self.frames)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def occlusion_visibility(cfg: ScenarioConfig, point: np.ndarray) -> int:
    """Number of configured cameras that see the ground point."""
    return sum(
        1 for cam in cfg.cameras if project_ground_to_pixel(cam, point) is not None
    )


def _reflect(value: float, heading_cos: float, lo: float, hi: float) -> tuple[float, float]:
    # Mirror at borders until inside; flips the matching velocity component.
    while value < lo or value > hi:
        if value < lo:
            value = 2 * lo - value
        else:
            value = 2 * hi - value
        heading_cos = -heading_cos
    return value, heading_cos


def generate_scenario(
    cfg: ScenarioConfig,
) -> tuple[GroundTruth, list[DetectionFrame]]:
    """Simulate trajectories and noisy detections for every frame.

    Pedestrians follow piecewise constant-velocity motion with per-frame
    heading perturbation, reflecting at grid borders. Detections miss with
    probability miss_prob (scaled by 1.5 when visible in fewer than 2
    cameras), carry Gaussian localisation and feature noise, and are joined
    by Poisson clutter with random unit features. Output order within each
    frame is shuffled.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.num_pedestrians
    ext_x, ext_y = cfg.grid.extent
    dt = 1.0 / cfg.frame_rate

    # Keep spawn points off the exact border so the first frame is in-extent.
    margin = min(0.05 * min(ext_x, ext_y), 0.5)
    pos = np.column_stack(
        [
            rng.uniform(margin, ext_x - margin, size=n),
            rng.uniform(margin, ext_y - margin, size=n),
        ]
    )
    heading = rng.uniform(0.0, 2.0 * np.pi, size=n)
    speed = rng.uniform(cfg.speed_range[0], cfg.speed_range[1], size=n)
    embeddings = rng.normal(size=(n, cfg.embed_dim))
    embeddings /= np.linalg.norm(embeddings, axis=1, keepdims=True)

    gt_frames: list[tuple[tuple[int, np.ndarray], ...]] = []
    det_frames: list[DetectionFrame] = []

    for t in range(cfg.num_frames):
        if t > 0:
            heading = heading + rng.normal(0.0, cfg.turn_noise, size=n)
            vx = np.cos(heading) * speed
            vy = np.sin(heading) * speed
            for i in range(n):
                x, cx = _reflect(pos[i, 0] + vx[i] * dt, np.cos(heading[i]), 0.0, ext_x)
                y, cy = _reflect(pos[i, 1] + vy[i] * dt, np.sin(heading[i]), 0.0, ext_y)
                pos[i] = (x, y)
                heading[i] = np.arctan2(cy, cx)

        gt_frames.append(tuple((i, pos[i].copy()) for i in range(n)))

        detections: list[Detection] = []
        miss_draw = rng.uniform(size=n)
        for i in range(n):
            p_miss = cfg.miss_prob
            if occlusion_visibility(cfg, pos[i]) < MIN_VISIBLE_CAMERAS:
                p_miss = min(p_miss * OCCLUDED_MISS_SCALE, 1.0)
            if miss_draw[i] < p_miss:
                continue
            loc = pos[i] + rng.normal(0.0, cfg.loc_noise, size=2)
            if cfg.embed_noise > 0:
                feat = _unit(
                    embeddings[i] + rng.normal(0.0, cfg.embed_noise, size=cfg.embed_dim)
                )
            else:
                feat = embeddings[i].copy()  # bitwise-exact canonical embedding
            conf = rng.uniform(0.8, 1.0)
            detections.append(Detection(loc, float(conf), feat, i))

        for _ in range(rng.poisson(cfg.clutter_rate)):
            loc = np.array([rng.uniform(0.0, ext_x), rng.uniform(0.0, ext_y)])
            feat = _unit(rng.normal(size=cfg.embed_dim))
            conf = rng.uniform(0.4, 0.9)
            detections.append(Detection(loc, float(conf), feat, None))

        order = rng.permutation(len(detections))
        det_frames.append(
            DetectionFrame(t, tuple(detections[k] for k in order))
        )

    return GroundTruth(tuple(gt_frames), embeddings), det_frames


def camera_ring(
    grid: BevGrid,
    count: int = 4,
    height: float = 6.0,
    setback: float = 4.0,
    focal_px: float = 300.0,
    image_size: tuple[int, int] = (480, 640),
) -> tuple[CameraModel, ...]:
    """Evenly spaced elevated cameras around the grid, aimed at its center.

    With the defaults the four frusta jointly cover a desk-scale grid so
    every interior point is seen by at least two cameras.
    """
    ext_x, ext_y = grid.extent
    center = np.array([ext_x / 2.0, ext_y / 2.0, 0.0])
    radius = 0.5 * float(np.hypot(ext_x, ext_y)) + setback
    cameras = []
    for k in range(count):
        angle = 2.0 * np.pi * k / count + np.pi / count
        eye = center + np.array(
            [radius * np.cos(angle), radius * np.sin(angle), height]
        )
        cameras.append(look_at_camera(eye, center, focal_px, image_size))
    return tuple(cameras)
