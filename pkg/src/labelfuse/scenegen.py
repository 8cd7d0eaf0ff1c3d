"""Synthetic-scene harness: analytic rooms with exact depth/label renders.

Scenes are built from axis-aligned boxes and finite axis-aligned rectangles,
each carrying a class id. Depth comes from exact ray/primitive intersection
(no meshes, no rasterization), so every rendered pixel and every sampled
ground-truth point has a closed-form position. Simulated predictors corrupt
ground-truth renders with uniform label-flip noise, optionally after
coarsening into a coarser taxonomy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Frame, Intrinsics, Pose, visible_points
from .spaces import LabelMap, MappingTable, MappingError, TranslationPolicy, translate_map

__all__ = [
    "Box",
    "Rect",
    "Orbit",
    "SceneSpec",
    "SceneRender",
    "NoiseModel",
    "render_scene",
    "simulate_predictor",
    "tally_oracle",
    "nearest_hit",
    "orbit_pose",
    "demo_room",
]

_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with positive extents."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    class_id: int

    def __post_init__(self):
        if not all(h > l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box extents must be positive: {self.lo} .. {self.hi}")
        if self.class_id <= 0:
            raise ValueError("primitive class_id must be positive")

    def area(self) -> float:
        dx, dy, dz = (h - l for l, h in zip(self.lo, self.hi))
        return 2.0 * (dx * dy + dx * dz + dy * dz)


@dataclass(frozen=True)
class Rect:
    """Finite axis-aligned rectangle: fixed coordinate on ``axis``, extents on the others."""

    axis: int
    offset: float
    lo: tuple[float, float]
    hi: tuple[float, float]
    class_id: int

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")
        if not all(h > l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"rect extents must be positive: {self.lo} .. {self.hi}")
        if self.class_id <= 0:
            raise ValueError("primitive class_id must be positive")

    @property
    def other_axes(self) -> tuple[int, int]:
        return tuple(a for a in range(3) if a != self.axis)

    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])


Primitive = Box | Rect


@dataclass(frozen=True)
class Orbit:
    """Circular camera trajectory looking at a fixed target."""

    target: tuple[float, float, float]
    radius: float
    height: float
    count: int
    start_angle: float = 0.0
    turns: float = 1.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("orbit needs at least one frame")
        if self.radius <= 0:
            raise ValueError("orbit radius must be positive")


@dataclass
class SceneSpec:
    """Declarative synthetic scene: primitives + trajectory + sampling knobs."""

    space_id: str
    primitives: list[Primitive]
    intrinsics: Intrinsics
    trajectory: Orbit | list[Pose]
    seed: int = 0
    point_density: float = 150.0  # ground-truth samples per square meter
    cloud_visible_only: bool = True
    visibility_tolerance: float = 0.05

    def poses(self) -> list[Pose]:
        if isinstance(self.trajectory, Orbit):
            orbit = self.trajectory
            step = orbit.turns * 2.0 * math.pi / orbit.count
            return [orbit_pose(orbit, orbit.start_angle + i * step) for i in range(orbit.count)]
        return list(self.trajectory)

    def to_json(self) -> str:
        def prim(p):
            if isinstance(p, Box):
                return {"type": "box", "lo": list(p.lo), "hi": list(p.hi), "class_id": p.class_id}
            return {"type": "rect", "axis": p.axis, "offset": p.offset,
                    "lo": list(p.lo), "hi": list(p.hi), "class_id": p.class_id}

        intr = self.intrinsics
        data = {
            "space_id": self.space_id,
            "primitives": [prim(p) for p in self.primitives],
            "intrinsics": [intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height],
            "seed": self.seed,
            "point_density": self.point_density,
            "cloud_visible_only": self.cloud_visible_only,
            "visibility_tolerance": self.visibility_tolerance,
        }
        if isinstance(self.trajectory, Orbit):
            o = self.trajectory
            data["orbit"] = {"target": list(o.target), "radius": o.radius, "height": o.height,
                             "count": o.count, "start_angle": o.start_angle, "turns": o.turns}
        else:
            data["poses"] = [p.matrix().tolist() for p in self.trajectory]
        return json.dumps(data, indent=2, sort_keys=True)


def orbit_pose(orbit: Orbit, angle: float) -> Pose:
    """Camera on the orbit circle at ``angle``, looking at the target (z-up world)."""
    tx, ty, tz = orbit.target
    eye = np.array([tx + orbit.radius * math.cos(angle),
                    ty + orbit.radius * math.sin(angle),
                    orbit.height])
    forward = np.asarray(orbit.target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise ValueError("orbit view direction is parallel to world up")
    right /= norm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)
    return Pose(rotation, eye)


# --- intersection -------------------------------------------------------------

def _box_hits(box: Box, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Entry distance of rays into a box (exit distance when inside), inf on miss."""
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    tmin = np.full(dirs.shape[:-1], -np.inf)
    tmax = np.full(dirs.shape[:-1], np.inf)
    for a in range(3):
        o = origins[..., a]
        d = dirs[..., a]
        parallel = np.abs(d) < _EPS
        safe = np.where(parallel, 1.0, d)
        t1 = (lo[a] - o) / safe
        t2 = (hi[a] - o) / safe
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        inside = (o >= lo[a]) & (o <= hi[a])
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        tmin = np.maximum(tmin, near)
        tmax = np.minimum(tmax, far)
    hit = tmax >= tmin
    t = np.where(tmin > _EPS, tmin, tmax)
    return np.where(hit & (t > _EPS), t, np.inf)


def _rect_hits(rect: Rect, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    o = origins[..., rect.axis]
    d = dirs[..., rect.axis]
    parallel = np.abs(d) < _EPS
    safe = np.where(parallel, 1.0, d)
    t = (rect.offset - o) / safe
    ok = ~parallel & (t > _EPS)
    for (b, lo, hi) in zip(rect.other_axes, rect.lo, rect.hi):
        p = origins[..., b] + t * dirs[..., b]
        ok &= (p >= lo) & (p <= hi)
    return np.where(ok, t, np.inf)


def _scene_hits(primitives: list[Primitive], origins: np.ndarray, dirs: np.ndarray):
    """Nearest hit over all primitives: (distance, class_id) arrays."""
    best_t = np.full(dirs.shape[:-1], np.inf)
    best_c = np.zeros(dirs.shape[:-1], dtype=np.uint16)
    for prim in primitives:
        t = _box_hits(prim, origins, dirs) if isinstance(prim, Box) else _rect_hits(prim, origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_c = np.where(closer, prim.class_id, best_c)
    return best_t, best_c


def nearest_hit(primitives: list[Primitive], origin, direction):
    """Scalar nearest intersection: (distance, class_id), (inf, 0) on miss.

    Distance is in units of ``direction``'s length, so a direction with unit
    camera-z yields camera depth directly.
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    direction = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    t, c = _scene_hits(primitives, origin, direction)
    return float(t[0]), int(c[0])


# --- rendering ----------------------------------------------------------------

@dataclass
class SceneRender:
    frames: list[Frame]
    labels: list[LabelMap]
    cloud_points: np.ndarray
    cloud_labels: np.ndarray
    space_id: str


def _render_view(spec: SceneSpec, pose: Pose, index: int) -> tuple[Frame, LabelMap]:
    intr = spec.intrinsics
    us, vs = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    dirs_cam = np.stack([
        (us - intr.cx) / intr.fx,
        (vs - intr.cy) / intr.fy,
        np.ones_like(us, dtype=np.float64),
    ], axis=-1)
    dirs_world = dirs_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs_world.shape)
    t, c = _scene_hits(spec.primitives, origins, dirs_world)
    depth = np.where(np.isfinite(t), t, 0.0)
    labels = np.where(np.isfinite(t), c, 0).astype(np.uint16)
    frame = Frame(index, intr, pose, depth)
    return frame, LabelMap(spec.space_id, labels)


def _sample_surface(primitives: list[Primitive], density: float, rng: np.random.Generator):
    points = []
    labels = []
    for prim in primitives:
        if isinstance(prim, Rect):
            faces = [(prim.axis, prim.offset, prim.lo, prim.hi)]
        else:
            lo, hi = np.asarray(prim.lo), np.asarray(prim.hi)
            faces = []
            for a in range(3):
                b, c = (x for x in range(3) if x != a)
                lo2, hi2 = (lo[b], lo[c]), (hi[b], hi[c])
                faces.append((a, lo[a], lo2, hi2))
                faces.append((a, hi[a], lo2, hi2))
        for axis, offset, lo2, hi2 in faces:
            area = (hi2[0] - lo2[0]) * (hi2[1] - lo2[1])
            count = max(1, int(round(area * density)))
            uv = rng.random((count, 2)) * (np.asarray(hi2) - np.asarray(lo2)) + np.asarray(lo2)
            pts = np.empty((count, 3))
            pts[:, axis] = offset
            others = [x for x in range(3) if x != axis]
            pts[:, others[0]] = uv[:, 0]
            pts[:, others[1]] = uv[:, 1]
            points.append(pts)
            labels.append(np.full(count, prim.class_id, dtype=np.uint16))
    return np.concatenate(points), np.concatenate(labels)


def render_scene(spec: SceneSpec) -> SceneRender:
    """Exact per-frame depth/label renders plus a labeled ground-truth cloud.

    With ``cloud_visible_only`` the cloud keeps only points observed by at
    least one trajectory frame under the depth visibility check, mirroring
    the way a scanned mesh only contains observed surface.
    """
    if not spec.primitives:
        raise ValueError("scene has no primitives")
    poses = spec.poses()
    frames: list[Frame] = []
    labels: list[LabelMap] = []
    for i, pose in enumerate(poses):
        frame, label = _render_view(spec, pose, i)
        frames.append(frame)
        labels.append(label)
    rng = np.random.default_rng(spec.seed)
    points, point_labels = _sample_surface(spec.primitives, spec.point_density, rng)
    if spec.cloud_visible_only:
        seen = np.zeros(len(points), dtype=bool)
        for frame in frames:
            _, _, ok = visible_points(points, frame, spec.visibility_tolerance)
            seen |= ok
        points, point_labels = points[seen], point_labels[seen]
    return SceneRender(frames, labels, points, point_labels, spec.space_id)


# --- simulated predictors -------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Uniform label-flip corruption, optionally after taxonomy coarsening."""

    flip_rate: float = 0.0
    coarsen_to: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ValueError("flip_rate must be in [0, 1]")


def simulate_predictor(gt_map: LabelMap, noise: NoiseModel, table: MappingTable,
                       seed: int | None = None) -> LabelMap:
    """Corrupt a ground-truth render into a simulated predictor output.

    Flips replace a pixel's label with a uniformly random *other* class of the
    (possibly coarsened) space; unknown pixels are left untouched. Fully
    deterministic for a given seed.
    """
    out = gt_map
    if noise.coarsen_to is not None:
        out = translate_map(out, table, noise.coarsen_to, TranslationPolicy.FIRST_CORRESPONDENCE)
    values = out.values.copy()
    if noise.flip_rate > 0.0:
        space = table.space(out.space_id)
        ids = np.array([c for c in space.class_ids() if c != 0], dtype=values.dtype)
        if len(ids) < 2:
            raise MappingError(f"space '{out.space_id}' needs >= 2 classes for flip noise")
        rank = np.zeros(int(ids.max()) + 1, dtype=np.int64)
        rank[ids] = np.arange(len(ids))
        rng = np.random.default_rng(noise.seed if seed is None else seed)
        flip = (rng.random(values.shape) < noise.flip_rate) & (values != 0)
        draws = rng.integers(0, len(ids) - 1, size=int(flip.sum()))
        true_rank = rank[values[flip]]
        draws = draws + (draws >= true_rank)
        values[flip] = ids[draws]
    return LabelMap(out.space_id, values)


def stream_seed(base_seed: int, frame_index: int) -> int:
    """Per-frame seed derivation keeping parallel rendering deterministic."""
    return int(np.random.SeedSequence([base_seed, frame_index]).generate_state(1)[0])


# --- test oracle ----------------------------------------------------------------

def tally_oracle(votes, threshold: int) -> int:
    """Reference weighted-majority resolution, written for obviousness.

    ``votes`` entries are ``(class_id, weight)`` for a direct vote at priority
    0, ``(class_id, weight, priority)`` for a direct vote, or
    ``(class_id, weight, priority, is_direct)`` where ``is_direct=False``
    marks an ambiguous-correspondence candidate that records no priority.
    Returns the winning class id or 0 (unknown).
    """
    weights: dict[int, int] = {}
    priorities: dict[int, int] = {}
    for vote in votes:
        class_id, weight = vote[0], vote[1]
        priority = vote[2] if len(vote) > 2 else 0
        is_direct = vote[3] if len(vote) > 3 else True
        if class_id == 0:
            continue
        weights[class_id] = weights.get(class_id, 0) + weight
        if is_direct:
            priorities[class_id] = max(priorities.get(class_id, -1), priority)
    if not weights:
        return 0
    best = max(weights.values())
    if best < threshold:
        return 0
    tied = [cid for cid, w in weights.items() if w == best]
    best_priority = max(priorities.get(cid, -1) for cid in tied)
    tied = [cid for cid in tied if priorities.get(cid, -1) == best_priority]
    return min(tied)


# --- canned scene -----------------------------------------------------------------

def demo_room(space_id: str = "room8", frames: int = 20, width: int = 640,
              height: int = 480, seed: int = 7, density: float = 150.0) -> SceneSpec:
    """A furnished 6 x 4 x 3 m room observed from an interior orbit.

    Classes: 1 floor, 2 ceiling, 3 wall, 4 table, 5 chair, 6 sofa, 7 crate,
    8 screen. Eleven primitives; the orbit stays clear of the furniture.
    """
    prims: list[Primitive] = [
        Rect(2, 0.0, (0.0, 0.0), (6.0, 4.0), 1),
        Rect(2, 3.0, (0.0, 0.0), (6.0, 4.0), 2),
        Rect(0, 0.0, (0.0, 0.0), (4.0, 3.0), 3),
        Rect(0, 6.0, (0.0, 0.0), (4.0, 3.0), 3),
        Rect(1, 0.0, (0.0, 0.0), (6.0, 3.0), 3),
        Rect(1, 4.0, (0.0, 0.0), (6.0, 3.0), 3),
        Box((4.6, 1.2, 0.0), (5.4, 2.0, 0.75), 4),
        Box((1.0, 2.6, 0.0), (1.45, 3.05, 0.45), 5),
        Box((0.6, 0.6, 0.0), (1.4, 1.8, 0.8), 6),
        Box((4.8, 3.2, 0.0), (5.3, 3.7, 0.5), 7),
        Box((2.6, 3.92, 0.8), (3.4, 3.97, 1.6), 8),
    ]
    fx = fy = 0.5 * width / math.tan(math.radians(45.0))
    intr = Intrinsics(fx, fy, width / 2.0 - 0.5, height / 2.0 - 0.5, width, height)
    orbit = Orbit(target=(3.0, 2.0, 1.1), radius=1.35, height=1.5, count=frames)
    return SceneSpec(space_id, prims, intr, orbit, seed=seed, point_density=density)
