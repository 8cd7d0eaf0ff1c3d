"""3D lifting: per-point majority votes over visible pixels, and a sparse
semantic voxel field that re-renders multi-view-consistent 2D labels.

The voxel field is a deterministic agreement structure: every labeled pixel
with valid depth unprojects into a voxel histogram, rendering reads back the
per-voxel majority. Grids built over disjoint frame sets merge associatively,
which is also the parallel-reduction contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Frame, unproject_frame, visible_points
from .spaces import LabelMap, UNKNOWN_ID

__all__ = [
    "LabeledPointCloud",
    "SemanticVoxelGrid",
    "lift_points",
    "build_voxel_field",
    "merge_grids",
    "render_labels",
    "write_voxel_dump",
]

_COORD_BITS = 21
_COORD_BIAS = 1 << (_COORD_BITS - 1)


@dataclass
class LabeledPointCloud:
    points: np.ndarray
    labels: np.ndarray
    space_id: str
    histogram_counts: np.ndarray | None = None  # (N, K) vote diagnostics
    histogram_classes: np.ndarray | None = None  # (K,) class id per column

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels).reshape(-1)
        if len(self.points) != len(self.labels):
            raise ValueError(
                f"{len(self.points)} points but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.points)


def _check_maps(frames: list[Frame], labels: list[LabelMap]) -> str:
    if len(frames) != len(labels):
        raise ValueError(f"{len(frames)} frames but {len(labels)} label maps")
    if not frames:
        raise ValueError("need at least one frame")
    space = labels[0].space_id
    for frame, label in zip(frames, labels):
        if label.space_id != space:
            raise ValueError(
                f"label maps mix spaces '{space}' and '{label.space_id}'")
        if label.shape != frame.depth.shape:
            raise ValueError(
                f"frame {frame.index}: labels are {label.shape}, depth is {frame.depth.shape}")
    return space


def lift_points(points: np.ndarray, frames: list[Frame], labels: list[LabelMap],
                tolerance: float = 0.05, keep_histograms: bool = False,
                occlusion_check: bool = True) -> LabeledPointCloud:
    """Majority-vote point labels over every frame where a point is visible.

    Unknown pixels cast no vote; ties break to the smallest class id; points
    gathering no votes stay unknown. ``occlusion_check=False`` accepts every
    in-bounds projection regardless of depth agreement (ablation switch).
    """
    space = _check_maps(frames, labels)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    class_ids = np.unique(np.concatenate([np.unique(m.values) for m in labels]))
    class_ids = class_ids[class_ids != UNKNOWN_ID]
    counts = np.zeros((n, len(class_ids)), dtype=np.uint16)
    col_of = np.zeros(int(class_ids.max()) + 1 if len(class_ids) else 1, dtype=np.int64)
    col_of[class_ids] = np.arange(len(class_ids))
    for frame, label in zip(frames, labels):
        if occlusion_check:
            u, v, ok = visible_points(points, frame, tolerance)
        else:
            from .geometry import project_points
            u, v, _, ok = project_points(points, frame)
        votes = label.values[v, u]
        ok = ok & (votes != UNKNOWN_ID)
        rows = np.flatnonzero(ok)
        if len(rows):
            counts[rows, col_of[votes[rows]]] += 1
    if len(class_ids):
        best = counts.argmax(axis=1)  # first max = smallest class id on ties
        labels_out = np.where(counts.max(axis=1) > 0, class_ids[best], UNKNOWN_ID)
    else:
        labels_out = np.zeros(n, dtype=np.int64)
    return LabeledPointCloud(
        points, labels_out.astype(np.uint16), space,
        counts if keep_histograms else None,
        class_ids.astype(np.int64) if keep_histograms else None)


class SemanticVoxelGrid:
    """Sparse voxel -> class histogram map. Immutable once built."""

    def __init__(self, voxel_size: float, origin, space_id: str,
                 keys: np.ndarray | None = None, counts: np.ndarray | None = None,
                 class_ids: np.ndarray | None = None):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.voxel_size = float(voxel_size)
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.space_id = space_id
        self._keys = np.zeros(0, dtype=np.int64) if keys is None else keys
        self._counts = np.zeros((0, 0), dtype=np.int64) if counts is None else counts
        self._class_ids = np.zeros(0, dtype=np.int64) if class_ids is None else class_ids
        self._cell_labels: np.ndarray | None = None

    @classmethod
    def empty(cls, voxel_size: float, origin, space_id: str) -> "SemanticVoxelGrid":
        return cls(voxel_size, origin, space_id)

    @property
    def n_cells(self) -> int:
        return len(self._keys)

    @property
    def class_ids(self) -> np.ndarray:
        return self._class_ids

    def voxel_coords(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.floor((points - self.origin) / self.voxel_size).astype(np.int64)

    def _pack(self, coords: np.ndarray) -> np.ndarray:
        shifted = coords + _COORD_BIAS
        if (shifted < 0).any() or (shifted >= (1 << _COORD_BITS)).any():
            raise ValueError("voxel coordinates exceed the packable range")
        return (shifted[:, 0] << (2 * _COORD_BITS)) | (shifted[:, 1] << _COORD_BITS) | shifted[:, 2]

    def _unpack(self, keys: np.ndarray) -> np.ndarray:
        mask = (1 << _COORD_BITS) - 1
        x = (keys >> (2 * _COORD_BITS)) & mask
        y = (keys >> _COORD_BITS) & mask
        z = keys & mask
        return np.stack([x, y, z], axis=1) - _COORD_BIAS

    def histogram(self, coord) -> dict[int, int]:
        """Class histogram of one cell, empty dict if the cell is unoccupied."""
        key = self._pack(np.asarray(coord, dtype=np.int64).reshape(1, 3))[0]
        i = np.searchsorted(self._keys, key)
        if i >= len(self._keys) or self._keys[i] != key:
            return {}
        row = self._counts[i]
        return {int(c): int(n) for c, n in zip(self._class_ids, row) if n > 0}

    def cells(self):
        """Iterate (coord triple, histogram dict) in key order."""
        coords = self._unpack(self._keys)
        for i in range(len(self._keys)):
            row = self._counts[i]
            yield tuple(int(x) for x in coords[i]), {
                int(c): int(n) for c, n in zip(self._class_ids, row) if n > 0}

    def total_count(self) -> int:
        return int(self._counts.sum())

    def cell_labels(self) -> np.ndarray:
        """Per-cell majority class (ties -> smallest id), aligned with keys."""
        if self._cell_labels is None:
            if self.n_cells == 0:
                self._cell_labels = np.zeros(0, dtype=np.int64)
            else:
                best = self._counts.argmax(axis=1)
                self._cell_labels = self._class_ids[best]
        return self._cell_labels

    def _compatible(self, other: "SemanticVoxelGrid") -> None:
        if self.voxel_size != other.voxel_size:
            raise ValueError(
                f"voxel_size mismatch: {self.voxel_size} vs {other.voxel_size}")
        if not np.array_equal(self.origin, other.origin):
            raise ValueError(f"origin mismatch: {self.origin} vs {other.origin}")
        if self.space_id != other.space_id:
            raise ValueError(f"space mismatch: {self.space_id} vs {other.space_id}")

    def merge(self, other: "SemanticVoxelGrid") -> "SemanticVoxelGrid":
        """Cellwise histogram addition; commutative and associative."""
        self._compatible(other)
        class_ids = np.union1d(self._class_ids, other._class_ids)
        keys = np.concatenate([self._keys, other._keys])
        uniq, inverse = np.unique(keys, return_inverse=True)
        counts = np.zeros((len(uniq), len(class_ids)), dtype=np.int64)
        offset = 0
        for grid in (self, other):
            if grid.n_cells:
                cols = np.searchsorted(class_ids, grid._class_ids)
                rows = inverse[offset:offset + grid.n_cells]
                np.add.at(counts, (rows[:, None], cols[None, :]), grid._counts)
            offset += grid.n_cells
        return SemanticVoxelGrid(self.voxel_size, self.origin, self.space_id,
                                 uniq, counts, class_ids)


def merge_grids(a: SemanticVoxelGrid, b: SemanticVoxelGrid) -> SemanticVoxelGrid:
    return a.merge(b)


def build_voxel_field(frames: list[Frame], labels: list[LabelMap], voxel_size: float = 0.05,
                      origin: np.ndarray | None = None) -> SemanticVoxelGrid:
    """Accumulate every labeled valid-depth pixel into voxel histograms.

    The origin defaults to the componentwise minimum of all unprojected
    points (first pass); pass an explicit origin to make grids built over
    different frame subsets mergeable.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    space = _check_maps(frames, labels)
    if origin is None:
        lo = np.full(3, np.inf)
        for frame, label in zip(frames, labels):
            pts, flat = unproject_frame(frame)
            keep = label.values.reshape(-1)[flat] != UNKNOWN_ID
            if keep.any():
                lo = np.minimum(lo, pts[keep].min(axis=0))
        if not np.isfinite(lo).all():
            return SemanticVoxelGrid.empty(voxel_size, np.zeros(3), space)
        origin = lo
    grid = SemanticVoxelGrid.empty(voxel_size, origin, space)
    key_chunks = []
    class_chunks = []
    count_chunks = []
    for frame, label in zip(frames, labels):
        pts, flat = unproject_frame(frame)
        lab = label.values.reshape(-1)[flat]
        keep = lab != UNKNOWN_ID
        if not keep.any():
            continue
        keys = grid._pack(grid.voxel_coords(pts[keep]))
        pairs = np.stack([keys, lab[keep].astype(np.int64)], axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        key_chunks.append(uniq[:, 0])
        class_chunks.append(uniq[:, 1])
        count_chunks.append(counts)
    if not key_chunks:
        return grid
    keys = np.concatenate(key_chunks)
    classes = np.concatenate(class_chunks)
    weights = np.concatenate(count_chunks)
    class_ids = np.unique(classes)
    uniq_keys, row = np.unique(keys, return_inverse=True)
    col = np.searchsorted(class_ids, classes)
    counts = np.zeros((len(uniq_keys), len(class_ids)), dtype=np.int64)
    np.add.at(counts, (row, col), weights)
    return SemanticVoxelGrid(voxel_size, origin, space, uniq_keys, counts, class_ids)


def render_labels(grid: SemanticVoxelGrid, frame: Frame) -> LabelMap:
    """Project the voxel field into a frame via its depth map.

    Pixels with invalid depth, or whose unprojected point lands in an empty
    voxel, come out unknown.
    """
    height, width = frame.depth.shape
    out = np.zeros(height * width, dtype=np.uint16)
    if grid.n_cells:
        pts, flat = unproject_frame(frame)
        if len(pts):
            coords = grid.voxel_coords(pts)
            keys = grid._pack(coords)
            idx = np.searchsorted(grid._keys, keys)
            idx_clipped = np.minimum(idx, grid.n_cells - 1)
            found = grid._keys[idx_clipped] == keys
            labels = grid.cell_labels()[idx_clipped]
            out[flat[found]] = labels[found].astype(np.uint16)
    return LabelMap(grid.space_id, out.reshape(height, width))


def write_voxel_dump(grid: SemanticVoxelGrid, path: str | Path) -> None:
    """Diagnostic text dump: one ``ix iy iz class:count,...`` record per cell."""
    lines = []
    for (ix, iy, iz), hist in grid.cells():
        pairs = ",".join(f"{c}:{n}" for c, n in sorted(hist.items()))
        lines.append(f"{ix} {iy} {iz} {pairs}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
