"""Ground-plane geometry: BEV grids, pinhole cameras, occupancy maps.

Conventions used throughout the package:

* World frame: right-handed, z up, ground plane at z = 0. BEV positions are
  (x, y) in meters with the origin at the grid corner; cell (i, j) covers
  [i*cell, (i+1)*cell) x [j*cell, (j+1)*cell) and its center sits at
  ((i + 0.5)*cell, (j + 0.5)*cell).
* Camera frame: x right, y down, z forward (optical axis). A world point X_w
  maps to camera coordinates via R @ X_w + T and to pixels via the intrinsic
  matrix; image coordinates are (u, v) with u along width and v along height.
* The 3x4 projection is A @ [R|T]; dropping its third column (the z column)
  gives the invertible 3x3 ground-plane projection used to move between
  pixels and (x, y, z=0) points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

ROTATION_TOL = 1e-9
SINGULAR_DET_TOL = 1e-12


class SingularProjectionError(ValueError):
    """Raised when the ground-plane projection cannot be inverted."""


@dataclass(frozen=True)
class BevGrid:
    """Regular square-celled grid over the ground plane."""

    width_cells: int
    height_cells: int
    cell_size: float

    def __post_init__(self) -> None:
        if self.width_cells < 1 or self.height_cells < 1:
            raise ValueError("grid must have at least one cell per axis")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    @property
    def extent(self) -> tuple[float, float]:
        """World extent (x, y) in meters."""
        return (self.width_cells * self.cell_size, self.height_cells * self.cell_size)

    def contains(self, point: np.ndarray) -> bool:
        x, y = float(point[0]), float(point[1])
        ex, ey = self.extent
        return 0.0 <= x < ex and 0.0 <= y < ey

    def cell_of(self, point: np.ndarray) -> tuple[int, int]:
        if not self.contains(point):
            raise ValueError(f"point {point!r} outside grid extent {self.extent}")
        i = min(int(point[0] / self.cell_size), self.width_cells - 1)
        j = min(int(point[1] / self.cell_size), self.height_cells - 1)
        return i, j

    def cell_center(self, i: int, j: int) -> np.ndarray:
        return np.array(
            [(i + 0.5) * self.cell_size, (j + 0.5) * self.cell_size], dtype=np.float64
        )


class CameraModel:
    """Calibrated pinhole camera with derived ground-plane projection."""

    def __init__(
        self,
        intrinsics: np.ndarray,
        rotation: np.ndarray,
        translation: np.ndarray,
        image_size: tuple[int, int],
    ) -> None:
        self.intrinsics = np.asarray(intrinsics, dtype=np.float64).reshape(3, 3)
        self.rotation = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(translation, dtype=np.float64).reshape(3)
        self.image_size = (int(image_size[0]), int(image_size[1]))  # (H, W)

        err = np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3)))
        if err > ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal (max error {err:.3e})")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must have determinant +1")

        extrinsics = np.hstack([self.rotation, self.translation[:, None]])
        self.projection = self.intrinsics @ extrinsics  # 3x4
        # Ground-plane (z=0) form: drop the z column.
        self.ground_projection = self.projection[:, [0, 1, 3]]  # 3x3

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.ravel().tolist(),
            "rotation": self.rotation.ravel().tolist(),
            "translation": self.translation.tolist(),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        return cls(
            intrinsics=np.array(data["intrinsics"], dtype=np.float64).reshape(3, 3),
            rotation=np.array(data["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.array(data["translation"], dtype=np.float64),
            image_size=tuple(data["image_size"]),
        )


def save_cameras(cameras: Sequence[CameraModel], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([cam.to_dict() for cam in cameras], indent=2) + "\n"
    )


def load_cameras(path: str | Path) -> list[CameraModel]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [CameraModel.from_dict(item) for item in data]


def look_at_camera(
    eye: np.ndarray,
    target: np.ndarray,
    focal_px: float,
    image_size: tuple[int, int],
) -> CameraModel:
    """Build a camera at `eye` pointing toward `target` (both world 3-vectors).

    The image y axis points down in the world (standard vision convention),
    so the world up direction (0, 0, 1) must not be parallel to the view axis.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    forward /= norm
    up_world = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up_world)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        raise ValueError("view axis parallel to world up; pick a tilted view")
    right /= rnorm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    translation = -rotation @ eye
    h, w = image_size
    intrinsics = np.array(
        [[focal_px, 0.0, w / 2.0], [0.0, focal_px, h / 2.0], [0.0, 0.0, 1.0]]
    )
    return CameraModel(intrinsics, rotation, translation, image_size)


def project_ground_to_pixel(
    cam: CameraModel, ground_point: np.ndarray
) -> Optional[np.ndarray]:
    """Project a ground-plane point (x, y) to pixels (u, v).

    Returns None when the point is behind the camera (non-positive projective
    depth) or falls outside the image bounds; absence encodes out-of-view.
    """
    homog = cam.ground_projection @ np.array(
        [ground_point[0], ground_point[1], 1.0], dtype=np.float64
    )
    gamma = homog[2]
    if gamma <= 0.0:
        return None
    uv = homog[:2] / gamma
    h, w = cam.image_size
    if not (0.0 <= uv[0] < w and 0.0 <= uv[1] < h):
        return None
    return uv


def pixel_to_ground(cam: CameraModel, pixel: np.ndarray) -> np.ndarray:
    """Back-project a pixel (u, v) to the ground plane (x, y)."""
    p0 = cam.ground_projection
    if abs(np.linalg.det(p0)) < SINGULAR_DET_TOL:
        raise SingularProjectionError(
            "ground projection is singular (camera lies in the ground plane?)"
        )
    xyw = np.linalg.solve(p0, np.array([pixel[0], pixel[1], 1.0], dtype=np.float64))
    return xyw[:2] / xyw[2]


@dataclass
class OccupancyMap:
    """Scalar field over a BEV grid; values indexed [x_cell, y_cell]."""

    grid: BevGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.grid.width_cells, self.grid.height_cells)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != grid {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("occupancy values must be finite")


@dataclass
class FeatureGrid:
    """Channelled scalar field over a BEV grid; values indexed [e, x, y]."""

    grid: BevGrid
    channels: int
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.channels, self.grid.width_cells, self.grid.height_cells)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")


def _check_same_shape(grids: Sequence[FeatureGrid]) -> None:
    if not grids:
        raise ValueError("need at least one feature grid")
    first = grids[0]
    for g in grids[1:]:
        if g.values.shape != first.values.shape or g.grid != first.grid:
            raise ValueError("feature grids disagree in shape")


def aggregate_max(grids: Sequence[FeatureGrid]) -> FeatureGrid:
    """Elementwise max over cameras, out(e,x,y) = max_s in_s(e,x,y)."""
    _check_same_shape(grids)
    stacked = np.stack([g.values for g in grids])
    return FeatureGrid(grids[0].grid, grids[0].channels, stacked.max(axis=0))


def aggregate_mean(grids: Sequence[FeatureGrid]) -> FeatureGrid:
    """Elementwise mean over cameras."""
    _check_same_shape(grids)
    stacked = np.stack([g.values for g in grids])
    return FeatureGrid(grids[0].grid, grids[0].channels, stacked.mean(axis=0))


def render_smoothed_targets(
    grid: BevGrid,
    points: Sequence[np.ndarray],
    kernel_radius_cells: int = 8,
) -> OccupancyMap:
    """Render points as truncated Gaussian bumps, combined by elementwise max.

    Each point contributes a bump with peak 1.0 at its cell; sigma is
    radius/3 so the kernel decays to ~1% at the truncation boundary. Max
    combination keeps every peak at exactly 1.0 under overlap.
    """
    if kernel_radius_cells < 1:
        raise ValueError("kernel_radius_cells must be >= 1")
    radius = int(kernel_radius_cells)
    sigma = radius / 3.0

    offsets = np.arange(-radius, radius + 1)
    di, dj = np.meshgrid(offsets, offsets, indexing="ij")
    dist2 = di.astype(np.float64) ** 2 + dj.astype(np.float64) ** 2
    kernel = np.exp(-dist2 / (2.0 * sigma**2))
    kernel[dist2 > radius**2] = 0.0

    values = np.zeros((grid.width_cells, grid.height_cells), dtype=np.float64)
    for point in points:
        ci, cj = grid.cell_of(point)  # raises for out-of-extent points
        i_lo, i_hi = max(ci - radius, 0), min(ci + radius, grid.width_cells - 1)
        j_lo, j_hi = max(cj - radius, 0), min(cj + radius, grid.height_cells - 1)
        sub = kernel[
            i_lo - ci + radius : i_hi - ci + radius + 1,
            j_lo - cj + radius : j_hi - cj + radius + 1,
        ]
        region = values[i_lo : i_hi + 1, j_lo : j_hi + 1]
        np.maximum(region, sub, out=region)
    return OccupancyMap(grid, values)


def extract_peaks(
    occupancy: OccupancyMap, detection_threshold: float
) -> list[tuple[np.ndarray, float]]:
    """Extract local maxima of the occupancy map above a threshold.

    A cell is a peak when it equals the maximum of its 3x3 neighborhood and
    strictly exceeds the threshold; among tied cells inside one 3x3 window
    only the lexicographically smallest index survives. Returns
    (cell-center world point, confidence) pairs in index order.
    """
    if not 0.0 <= detection_threshold <= 1.0:
        raise ValueError("detection_threshold must be in [0, 1]")
    v = occupancy.values
    nx, ny = v.shape
    padded = np.full((nx + 2, ny + 2), -np.inf)
    padded[1:-1, 1:-1] = v
    windows = np.stack(
        [
            padded[1 + di : 1 + di + nx, 1 + dj : 1 + dj + ny]
            for di in (-1, 0, 1)
            for dj in (-1, 0, 1)
        ]
    )
    neighborhood_max = windows.max(axis=0)
    is_peak = (v >= neighborhood_max) & (v > detection_threshold)
    # Break plateau ties toward the smallest (i, j): drop a candidate when an
    # earlier cell in its own 3x3 window attains the same value.
    peaks: list[tuple[np.ndarray, float]] = []
    for i, j in zip(*np.nonzero(is_peak)):
        tied_earlier = False
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ni, nj = i + di, j + dj
                if (ni, nj) >= (i, j):
                    continue
                if 0 <= ni < nx and 0 <= nj < ny and v[ni, nj] == v[i, j]:
                    tied_earlier = True
                    break
            if tied_earlier:
                break
        if not tied_earlier:
            peaks.append((occupancy.grid.cell_center(i, j), float(v[i, j])))
    return peaks
