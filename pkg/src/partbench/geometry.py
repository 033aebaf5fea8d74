"""SE(2) poses on the pixel grid.

World coordinates are measured in pixels: x runs along image columns and y
along image rows, so the pixel at (row, col) sits at the world point
(col, row). Rotations are counter-clockwise in the (x, y) frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FRAME_SIZE = 90


def wrap_angle(theta: float) -> float:
    """Normalize an angle to the interval (-pi, pi]."""
    t = math.fmod(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    elif t > math.pi:
        t -= 2.0 * math.pi
    return t


@dataclass(frozen=True)
class Pose2:
    """Planar rigid transform: rotate by theta, then translate by (x, y)."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def compose(self, other: "Pose2") -> "Pose2":
        """Return self composed with other (other is applied first)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 2) array, or a single (2,) point, of world coordinates."""
        pts = np.asarray(points, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        return pts @ rot.T + np.array([self.x, self.y])

    def delta_from(self, earlier: "Pose2") -> "Pose2":
        """World-frame delta D such that self = D compose earlier."""
        return self.compose(earlier.inverse())

    def is_identity(self, tol: float = 1e-9) -> bool:
        return abs(self.x) <= tol and abs(self.y) <= tol and abs(self.theta) <= tol

    @staticmethod
    def translation(dx: float, dy: float) -> "Pose2":
        return Pose2(dx, dy, 0.0)

    @staticmethod
    def rotation_about(point, angle: float) -> "Pose2":
        """Rotation by angle about a fixed world point."""
        px, py = float(point[0]), float(point[1])
        c, s = math.cos(angle), math.sin(angle)
        return Pose2(px - c * px + s * py, py - s * px - c * py, angle)


def pixel_to_world(pixel) -> np.ndarray:
    """(row, col) pixel index to (x, y) world coordinates."""
    return np.array([float(pixel[1]), float(pixel[0])])


_GRID_CACHE: dict[int, np.ndarray] = {}


def grid_points(size: int = FRAME_SIZE) -> np.ndarray:
    """World coordinates of every pixel center, shape (size*size, 2), row-major."""
    if size not in _GRID_CACHE:
        ys, xs = np.mgrid[0:size, 0:size]
        pts = np.stack([xs, ys], axis=-1).reshape(-1, 2).astype(float)
        pts.flags.writeable = False
        _GRID_CACHE[size] = pts
    return _GRID_CACHE[size]


def mask_points(mask: np.ndarray) -> np.ndarray:
    """World coordinates of the on-pixels of a boolean mask, shape (N, 2)."""
    rows, cols = np.nonzero(mask)
    return np.stack([cols, rows], axis=-1).astype(float)
