"""Weighted per-pixel consensus voting across heterogeneous prediction streams.

Every stream contributes its full weight to each correspondence candidate of
its predicted class in the target space (an unambiguous correspondence also
records the stream's priority as a direct vote). A pixel resolves to the
class with the maximum accumulated weight if that weight reaches the
threshold, otherwise to unknown. Ties go to the class backed by the
highest-priority direct vote, then to the smallest class id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spaces import LabelMap, MappingTable, MappingError, UNKNOWN_ID

__all__ = [
    "PredictorStream",
    "ConsensusConfig",
    "VoteGrid",
    "MissingFrameError",
    "cast_votes",
    "resolve",
    "consensus_frame",
]

MAX_PRIORITY = 2**14  # priorities are stored in int16 vote records


class MissingFrameError(KeyError):
    pass


@dataclass
class PredictorStream:
    """One source of per-frame label maps in a fixed space.

    Frames are addressed by integer index, either from an in-memory dict or
    lazily from a directory of ``<frame:06d>.png`` files.
    """

    name: str
    space_id: str
    weight: int = 1
    priority: int = 0
    maps: dict[int, LabelMap] = field(default_factory=dict)
    directory: Path | None = None

    def __post_init__(self):
        if self.weight < 1:
            raise MappingError(f"stream '{self.name}': weight must be >= 1")
        if not 0 <= self.priority < MAX_PRIORITY:
            raise MappingError(f"stream '{self.name}': priority out of range [0, {MAX_PRIORITY})")

    @classmethod
    def from_dir(cls, name: str, space_id: str, directory: str | Path,
                 weight: int = 1, priority: int = 0) -> "PredictorStream":
        return cls(name, space_id, weight, priority, directory=Path(directory))

    def label_map(self, frame_index: int) -> LabelMap:
        if frame_index in self.maps:
            return self.maps[frame_index]
        if self.directory is not None:
            path = self.directory / f"{frame_index:06d}.png"
            if path.exists():
                from .pngio import read_label_png
                return read_label_png(path, self.space_id)
        raise MissingFrameError(f"stream '{self.name}' has no map for frame {frame_index}")

    def has_frame(self, frame_index: int) -> bool:
        if frame_index in self.maps:
            return True
        return self.directory is not None and (self.directory / f"{frame_index:06d}.png").exists()


@dataclass
class ConsensusConfig:
    target_space: str
    min_votes: int
    streams: list[PredictorStream]

    def validate(self, table: MappingTable) -> None:
        if self.min_votes < 1:
            raise MappingError("min_votes must be >= 1")
        total = sum(s.weight for s in self.streams)
        if self.min_votes > total:
            raise MappingError(
                f"min_votes {self.min_votes} exceeds total stream weight {total}")
        table.space(self.target_space)
        for s in self.streams:
            table.space(s.space_id)


class VoteGrid:
    """Per-pixel weighted vote accumulator in the target space.

    Columns are allocated lazily per voted-for class: ``weights`` holds the
    accumulated integer weight, ``prio`` the highest priority of any direct
    (unambiguous) vote, -1 where no direct vote was recorded.
    """

    def __init__(self, width: int, height: int, target_space: str):
        self.width = width
        self.height = height
        self.target_space = target_space
        self.class_ids: list[int] = []
        self._col: dict[int, int] = {}
        n = width * height
        self.weights = np.zeros((n, 0), dtype=np.uint16)
        self.prio = np.full((n, 0), -1, dtype=np.int16)

    def _column(self, class_id: int) -> int:
        col = self._col.get(class_id)
        if col is None:
            col = len(self.class_ids)
            self._col[class_id] = col
            self.class_ids.append(class_id)
            n = self.width * self.height
            self.weights = np.concatenate(
                [self.weights, np.zeros((n, 1), dtype=np.uint16)], axis=1)
            self.prio = np.concatenate(
                [self.prio, np.full((n, 1), -1, dtype=np.int16)], axis=1)
        return col

    def add(self, mask: np.ndarray, class_ids: np.ndarray, weight: int,
            priority: int | None) -> None:
        """Scatter ``weight`` onto per-pixel classes; record priority if direct.

        ``mask``/``class_ids`` are flat (H*W) arrays; each masked pixel votes
        for exactly one class per call, so fancy-indexed accumulation is safe.
        """
        if not mask.any():
            return
        idx = np.flatnonzero(mask)
        classes = class_ids[idx]
        for cid in np.unique(classes):
            col = self._column(int(cid))
            rows = idx[classes == cid]
            self.weights[rows, col] += weight
            if priority is not None:
                np.maximum.at(self.prio, (rows, col), priority)

    def vote_counts(self, row: int, col: int) -> dict[int, int]:
        """Histogram of one pixel, for diagnostics and tests."""
        flat = row * self.width + col
        return {cid: int(self.weights[flat, k])
                for k, cid in enumerate(self.class_ids) if self.weights[flat, k]}


def cast_votes(grid: VoteGrid, prediction: LabelMap, table: MappingTable,
               weight: int, priority: int = 0) -> VoteGrid:
    """Accumulate one stream's prediction into the grid.

    Unknown pixels and classes without correspondences contribute nothing.
    A One correspondence adds ``weight`` to its class and records ``priority``
    as a direct vote; a Many correspondence adds the full ``weight`` to every
    candidate without a direct record. Candidates with id 0 are dropped (the
    sentinel cannot be voted for).
    """
    if prediction.shape != (grid.height, grid.width):
        raise MappingError(
            f"prediction is {prediction.shape}, grid is {(grid.height, grid.width)}")
    if weight < 1:
        raise MappingError("weight must be >= 1")
    table.check_map(prediction)
    lut = table.lut(prediction.space_id, grid.target_space)
    values = prediction.values.reshape(-1)
    known = values != UNKNOWN_ID
    direct = lut.direct[values] & known
    for layer_index, layer in enumerate(lut.layers):
        cand = layer[values]
        mask = known & (cand > 0)
        if layer_index == 0:
            grid.add(mask & direct, cand, weight, priority)
            grid.add(mask & ~direct, cand, weight, None)
        else:
            grid.add(mask, cand, weight, None)
    return grid


def resolve(grid: VoteGrid, min_votes: int) -> LabelMap:
    """Pick the winning class per pixel, or unknown below the threshold.

    Among classes tied at the maximum weight the one with the highest direct
    vote priority wins; remaining ties go to the smallest class id.
    """
    if min_votes < 1:
        raise MappingError("min_votes must be >= 1")
    n = grid.width * grid.height
    out = np.zeros(n, dtype=np.int32)
    if grid.class_ids:
        order = np.argsort(grid.class_ids)
        ids_sorted = np.asarray(grid.class_ids, dtype=np.int32)[order]
        weights = grid.weights[:, order]
        prio = grid.prio[:, order].astype(np.int32)
        top = weights.max(axis=1)
        k = len(ids_sorted)
        # rank term prefers smaller class ids among equal priorities
        key = (prio + 1) * (k + 1) + (k - 1 - np.arange(k))
        key = np.where(weights == top[:, None], key, -1)
        winner = ids_sorted[np.argmax(key, axis=1)]
        out = np.where(top >= min_votes, winner, UNKNOWN_ID)
    return LabelMap(grid.target_space, out.reshape(grid.height, grid.width).astype(np.uint16))


def consensus_frame(frame_index: int, config: ConsensusConfig,
                    table: MappingTable) -> LabelMap:
    """Run the full vote-and-resolve pipeline for one frame."""
    config.validate(table)
    if not config.streams:
        raise MappingError("consensus requires at least one stream")
    maps = []
    for stream in config.streams:
        if not stream.has_frame(frame_index):
            raise MissingFrameError(
                f"stream '{stream.name}' has no map for frame {frame_index}")
        maps.append(stream.label_map(frame_index))
    height, width = maps[0].shape
    for stream, m in zip(config.streams, maps):
        if m.shape != (height, width):
            raise MappingError(
                f"stream '{stream.name}' frame {frame_index} is {m.shape}, expected {(height, width)}")
    grid = VoteGrid(width, height, config.target_space)
    for stream, m in zip(config.streams, maps):
        cast_votes(grid, m, table, stream.weight, stream.priority)
    return resolve(grid, config.min_votes)
