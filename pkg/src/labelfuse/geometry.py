"""Pinhole camera model: projection, unprojection, depth-based visibility.

Conventions: camera x right, y down, z forward; poses are camera-to-world;
depth maps store z in meters with 0 marking invalid pixels. Label lookups
round to the nearest integer pixel (labels are categorical, interpolation
would be meaningless).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Intrinsics",
    "Pose",
    "Frame",
    "DEFAULT_VISIBILITY_TOLERANCE",
    "project",
    "unproject",
    "visible",
    "project_points",
    "visible_points",
    "load_intrinsics",
    "save_intrinsics",
    "load_pose",
    "save_pose",
]

DEFAULT_VISIBILITY_TOLERANCE = 0.05  # meters; consumer RGB-D noise scale
_MIN_Z = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


class Pose:
    """Camera-to-world rigid transform."""

    def __init__(self, rotation: np.ndarray, translation: np.ndarray):
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64).reshape(3)
        if rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal (tolerance 1e-6)")
        if np.linalg.det(rotation) < 0:
            raise ValueError("rotation must have determinant +1")
        self.rotation = rotation
        self.translation = translation

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise ValueError("pose matrix must be 4x4")
        if not np.allclose(matrix[3], [0, 0, 0, 1], atol=1e-6):
            raise ValueError("pose matrix last row must be [0 0 0 1]")
        return cls(matrix[:3, :3], matrix[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def to_world(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def compose(self, other: "Pose") -> "Pose":
        """self after other: maps other's camera frame through self."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


@dataclass
class Frame:
    """One posed RGB-D frame: intrinsics, camera-to-world pose, depth map."""

    index: int
    intrinsics: Intrinsics
    pose: Pose
    depth: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"depth is {self.depth.shape}, intrinsics say "
                f"{(self.intrinsics.height, self.intrinsics.width)}")
        if not np.isfinite(self.depth).all() or (self.depth < 0).any():
            raise ValueError("depth values must be finite and >= 0")


def _round_pixel(x: np.ndarray | float):
    # round half up, symmetric with the [0, width) bound convention
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def project(point, frame: Frame):
    """World point -> continuous (u, v, z), or None if behind or outside."""
    cam = frame.pose.to_camera(np.asarray(point, dtype=np.float64).reshape(3))
    x, y, z = cam
    if z <= _MIN_Z:
        return None
    intr = frame.intrinsics
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    ui, vi = int(_round_pixel(u)), int(_round_pixel(v))
    if not (0 <= ui < intr.width and 0 <= vi < intr.height):
        return None
    return float(u), float(v), float(z)


def unproject(u: float, v: float, depth: float, frame: Frame) -> np.ndarray:
    """Pixel + depth -> world point."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    intr = frame.intrinsics
    cam = np.array([
        (u - intr.cx) * depth / intr.fx,
        (v - intr.cy) * depth / intr.fy,
        depth,
    ])
    return frame.pose.to_world(cam)


def visible(point, frame: Frame, tolerance: float = DEFAULT_VISIBILITY_TOLERANCE):
    """Integer pixel where the point is visible, or None.

    A point is visible when it projects into the image, the depth map holds a
    valid value at the rounded pixel, and the projected depth agrees with the
    stored depth within ``tolerance`` meters.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    proj = project(point, frame)
    if proj is None:
        return None
    u, v, z = proj
    ui, vi = int(_round_pixel(u)), int(_round_pixel(v))
    d = frame.depth[vi, ui]
    if d <= 0 or abs(z - d) > tolerance:
        return None
    return ui, vi


# --- vectorized variants ------------------------------------------------------

def project_points(points: np.ndarray, frame: Frame):
    """Batched projection: (N,3) world points -> (u, v, z, valid) arrays.

    ``u``/``v`` are rounded integer pixels (clipped to 0 for invalid rows);
    ``valid`` marks rows with positive depth and in-bounds pixels.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = frame.pose.to_camera(points)
    z = cam[:, 2]
    intr = frame.intrinsics
    ok = z > _MIN_Z
    safe_z = np.where(ok, z, 1.0)
    u = _round_pixel(intr.fx * cam[:, 0] / safe_z + intr.cx)
    v = _round_pixel(intr.fy * cam[:, 1] / safe_z + intr.cy)
    ok &= (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    u = np.where(ok, u, 0)
    v = np.where(ok, v, 0)
    return u, v, z, ok


def visible_points(points: np.ndarray, frame: Frame,
                   tolerance: float = DEFAULT_VISIBILITY_TOLERANCE):
    """Batched visibility: (u, v, visible_mask) for (N,3) world points."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    u, v, z, ok = project_points(points, frame)
    depth = frame.depth[v, u]
    ok &= (depth > 0) & (np.abs(z - depth) <= tolerance)
    return u, v, ok


def unproject_frame(frame: Frame):
    """Unproject every valid-depth pixel of a frame.

    Returns (points (M,3) world, flat pixel indices (M,)).
    """
    intr = frame.intrinsics
    depth = frame.depth
    valid = depth > 0
    vs, us = np.nonzero(valid)
    d = depth[vs, us]
    cam = np.stack([
        (us - intr.cx) * d / intr.fx,
        (vs - intr.cy) * d / intr.fy,
        d,
    ], axis=1)
    return frame.pose.to_world(cam), vs * intr.width + us


# --- file formats -------------------------------------------------------------

def load_intrinsics(path: str | Path) -> Intrinsics:
    """Single line: ``fx fy cx cy width height``."""
    tokens = Path(path).read_text().split()
    if len(tokens) != 6:
        raise ValueError(f"{path}: expected 'fx fy cx cy width height'")
    fx, fy, cx, cy = (float(t) for t in tokens[:4])
    width, height = int(tokens[4]), int(tokens[5])
    return Intrinsics(fx, fy, cx, cy, width, height)


def save_intrinsics(intr: Intrinsics, path: str | Path) -> None:
    Path(path).write_text(
        f"{intr.fx:.17g} {intr.fy:.17g} {intr.cx:.17g} {intr.cy:.17g} "
        f"{intr.width} {intr.height}\n")


def load_pose(path: str | Path) -> Pose:
    """4x4 whitespace-separated camera-to-world matrix, row-major."""
    values = [float(t) for t in Path(path).read_text().split()]
    if len(values) != 16:
        raise ValueError(f"{path}: expected 16 numbers (4x4 row-major)")
    return Pose.from_matrix(np.array(values).reshape(4, 4))


def save_pose(pose: Pose, path: str | Path) -> None:
    rows = [" ".join(f"{x:.17g}" for x in row) for row in pose.matrix()]
    Path(path).write_text("\n".join(rows) + "\n")
