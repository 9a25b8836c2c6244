"""Synthetic scenes: boxes sampled into point clouds plus a ground-truth grid.

Scene files are JSON (format described in the README). Geometry is given as
axis-aligned boxes; every box surface is sampled on a regular lattice at load
time, so loading is deterministic and needs no seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from msgnav.geometry import FREE, OCCUPIED, OccupancyGrid, PointCloud, traversable_mask
from msgnav.viewpoint import VVDParams, limit_points

FORMAT_VERSION = 1


class SceneError(ValueError):
    pass


def sample_box_surface(bmin, bmax, spacing: float) -> np.ndarray:
    """Lattice points on the six faces of an axis-aligned box."""
    bmin = np.asarray(bmin, dtype=np.float64)
    bmax = np.asarray(bmax, dtype=np.float64)
    axes = [np.linspace(bmin[i], bmax[i], max(2, math.ceil((bmax[i] - bmin[i]) / spacing) + 1)) for i in range(3)]
    faces = []
    for i in range(3):
        j, k = [a for a in range(3) if a != i]
        gj, gk = np.meshgrid(axes[j], axes[k], indexing="ij")
        for val in (bmin[i], bmax[i]):
            f = np.empty((gj.size, 3))
            f[:, i] = val
            f[:, j] = gj.ravel()
            f[:, k] = gk.ravel()
            faces.append(f)
    pts = np.concatenate(faces)
    _, first = np.unique(np.round(pts, 9), axis=0, return_index=True)
    return pts[np.sort(first)]


def box_visibility(eye, targets: np.ndarray, bmin: np.ndarray, bmax: np.ndarray) -> float:
    """Fraction of target points whose open segment from ``eye`` misses every box (slab test)."""
    eye = np.asarray(eye, dtype=np.float64)
    if not len(bmin):
        return 1.0
    d = targets - eye  # (P, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (bmin[None] - eye) * inv[:, None]  # (P, B, 3)
        t1 = (bmax[None] - eye) * inv[:, None]
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # axis-parallel rays: inside the slab means unconstrained, outside means no hit
    par = d[:, None, :] == 0
    inside = (eye >= bmin[None]) & (eye <= bmax[None])
    lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
    enter = lo.max(axis=2)
    leave = hi.min(axis=2)
    eps = 1e-6
    hit = (enter <= leave) & (leave > eps) & (enter < 1 - eps)
    return float((~hit.any(axis=1)).mean())


@dataclass
class Box:
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        b = cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))
        if b.min.shape != (3,) or np.any(b.max < b.min):
            raise SceneError(f"bad box {d}")
        return b


@dataclass
class Room:
    name: str
    min: tuple[float, float]
    max: tuple[float, float]

    def contains(self, x: float, z: float) -> bool:
        return self.min[0] <= x < self.max[0] and self.min[1] <= z < self.max[1]


@dataclass
class SceneObject:
    id: int
    category: str
    room: str
    points: np.ndarray
    boxes: list[Box]
    blocks: bool = True

    @property
    def center(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass
class GoalSpec:
    kind: str
    object_ids: list[int]
    category: str | None = None
    description: str | None = None
    view: list[float] | None = None  # image goals: [x, z, heading] of the reference shot


@dataclass
class EpisodeSpec:
    start: tuple[float, float]
    heading: float
    goal: int


@dataclass
class SyntheticScene:
    name: str
    cell_size: float
    origin: tuple[float, float]
    size: tuple[int, int]  # rows (z), cols (x)
    rooms: list[Room]
    walls: list[Box]
    objects: list[SceneObject]
    goals: list[GoalSpec]
    episodes: list[EpisodeSpec]
    wall_spacing: float = 0.08
    view_radius: float = 1.5
    gt_visibility_min: float = 0.5
    clearance: float = 0.2
    camera_height: float = 1.5
    tau: float = 0.1
    _cache: dict = field(default_factory=dict, repr=False)

    # -- derived geometry --------------------------------------------------

    @property
    def grid(self) -> OccupancyGrid:
        if "grid" not in self._cache:
            grid = OccupancyGrid.empty([self.origin[0], 0.0, self.origin[1]], self.size, self.cell_size, FREE)
            boxes = list(self.walls) + [b for o in self.objects if o.blocks for b in o.boxes]
            for b in boxes:
                self._mark(grid, b)
            self._cache["grid"] = grid
        return self._cache["grid"]

    def _mark(self, grid: OccupancyGrid, b: Box) -> None:
        c = grid.cell_size
        c0 = max(0, math.floor((b.min[0] - grid.origin[0]) / c))
        c1 = min(grid.shape[1], math.ceil((b.max[0] - grid.origin[0]) / c))
        r0 = max(0, math.floor((b.min[2] - grid.origin[2]) / c))
        r1 = min(grid.shape[0], math.ceil((b.max[2] - grid.origin[2]) / c))
        grid.cells[r0:max(r1, r0 + 1), c0:max(c1, c0 + 1)] = OCCUPIED

    def nav_mask(self, clearance: float | None = None) -> np.ndarray:
        clearance = self.clearance if clearance is None else clearance
        key = ("nav", clearance)
        if key not in self._cache:
            self._cache[key] = traversable_mask(self.grid, clearance)
        return self._cache[key]

    @property
    def wall_points(self) -> np.ndarray:
        if "walls" not in self._cache:
            parts = [sample_box_surface(b.min, b.max, self.wall_spacing) for b in self.walls]
            self._cache["walls"] = np.concatenate(parts) if parts else np.zeros((0, 3))
        return self._cache["walls"]

    @property
    def wall_cloud(self) -> PointCloud:
        if "wall_cloud" not in self._cache:
            self._cache["wall_cloud"] = PointCloud(self.wall_points)
        return self._cache["wall_cloud"]

    def scene_points(self, exclude: set[int] = frozenset()) -> np.ndarray:
        parts = [self.wall_points] + [o.points for o in self.objects if o.id not in exclude]
        return np.concatenate(parts)

    def occluders_for(self, object_id: int) -> PointCloud:
        key = ("occ", object_id)
        if key not in self._cache:
            self._cache[key] = PointCloud(self.scene_points({object_id}))
        return self._cache[key]

    def object(self, object_id: int) -> SceneObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(f"unknown object id {object_id}")

    def room_at(self, x: float, z: float) -> str:
        for room in self.rooms:
            if room.contains(x, z):
                return room.name
        return ""

    def categories(self) -> list[str]:
        return sorted({o.category for o in self.objects})

    # -- ground truth viewpoints -------------------------------------------

    def occluder_boxes(self, exclude: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        boxes = list(self.walls) + [b for o in self.objects if o.id != exclude for b in o.boxes]
        if not boxes:
            return np.zeros((0, 3)), np.zeros((0, 3))
        return np.stack([b.min for b in boxes]), np.stack([b.max for b in boxes])

    def gt_viewpoints(self, object_id: int) -> np.ndarray:
        """Traversable cells near the object that see most of it. Returns (n, 2) [row, col].

        Visibility here is exact ray casting against the scene boxes, not the
        point-cloud corridor test the agent uses.
        """
        key = ("gtvp", object_id)
        if key in self._cache:
            return self._cache[key]
        obj = self.object(object_id)
        grid = self.grid
        centers = grid.centers(self.camera_height)
        flat = obj.points[:, [0, 2]]
        rows, cols = np.nonzero(self.nav_mask())
        pts = limit_points(obj.points, 200, 0)
        bmin, bmax = self.occluder_boxes(exclude=object_id)
        keep = []
        for r, c in zip(rows, cols):
            xz = centers[r, c, [0, 2]]
            if np.sqrt(((flat - xz) ** 2).sum(axis=1)).min() > self.view_radius:
                continue
            if box_visibility(centers[r, c], pts, bmin, bmax) >= self.gt_visibility_min:
                keep.append((r, c))
        out = np.array(keep, dtype=np.int64).reshape(-1, 2)
        self._cache[key] = out
        return out

    def gt_viewpoints_for(self, object_ids) -> np.ndarray:
        parts = [self.gt_viewpoints(i) for i in object_ids]
        return np.unique(np.concatenate(parts), axis=0) if parts else np.zeros((0, 2), dtype=np.int64)

    def viewpoint_positions(self, object_ids) -> np.ndarray:
        cells = self.gt_viewpoints_for(object_ids)
        centers = self.grid.centers()
        return centers[cells[:, 0], cells[:, 1]] if len(cells) else np.zeros((0, 3))

    def validate(self) -> None:
        ids = [o.id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise SceneError("duplicate object ids")
        wall_idx = self.wall_cloud
        for o in self.objects:
            if len(o.points) == 0:
                raise SceneError(f"object {o.id} has no points")
            if len(self.wall_points) and np.any(wall_idx.index(0.05).any_within(o.points, 1e-9)):
                raise SceneError(f"object {o.id} intersects a wall")
        for i, g in enumerate(self.goals):
            for oid in g.object_ids:
                self.object(oid)
                if not len(self.gt_viewpoints(oid)):
                    raise SceneError(f"goal {i}: object {oid} has no success viewpoint")
        for e in self.episodes:
            if not 0 <= e.goal < len(self.goals):
                raise SceneError(f"episode references missing goal {e.goal}")

    def vvd_params(self, **overrides) -> VVDParams:
        base = dict(camera_height=self.camera_height, obstruction_distance=self.tau, clearance=self.clearance)
        base.update(overrides)
        return VVDParams(**base)


def _parse_object(d: dict, spacing: float, scene_rooms) -> SceneObject:
    boxes = [Box.from_dict(b) for b in d.get("boxes", [])]
    if "box" in d:
        boxes.insert(0, Box.from_dict(d["box"]))
    if "points" in d:
        pts = np.asarray(d["points"], dtype=np.float64).reshape(-1, 3)
    elif boxes:
        pts = np.concatenate([sample_box_surface(b.min, b.max, d.get("spacing", spacing)) for b in boxes])
    else:
        raise SceneError(f"object {d.get('id')} needs boxes or points")
    room = d.get("room")
    if room is None:
        c = pts.mean(axis=0)
        room = next((r.name for r in scene_rooms if r.contains(c[0], c[2])), "")
    return SceneObject(int(d["id"]), d["category"].casefold(), room, pts, boxes, bool(d.get("blocks", True)))


def scene_from_dict(d: dict) -> SyntheticScene:
    if d.get("format_version") != FORMAT_VERSION:
        raise SceneError(f"unsupported scene format version {d.get('format_version')}")
    try:
        spacing = float(d.get("object_spacing", 0.1))
        rooms = [Room(r["name"], tuple(r["min"]), tuple(r["max"])) for r in d.get("rooms", [])]
        objects = [_parse_object(o, spacing, rooms) for o in d["objects"]]
        goals = []
        for g in d.get("goals", []):
            kind = g["kind"]
            if kind == "category":
                ids = [o.id for o in objects if o.category == g["category"].casefold()]
                goals.append(GoalSpec(kind, ids, category=g["category"].casefold()))
            elif kind == "language":
                goals.append(GoalSpec(kind, [int(g["object_id"])], description=g["description"]))
            elif kind == "image":
                goals.append(GoalSpec(kind, [int(g["object_id"])], view=[float(x) for x in g["view"]]))
            else:
                raise SceneError(f"unknown goal kind {kind}")
            if not goals[-1].object_ids:
                raise SceneError(f"goal {g} matches no object")
        start = d.get("start", {"position": [0.0, 0.0], "heading": 0.0})
        episodes = [
            EpisodeSpec(tuple(e["start"]), float(e.get("heading", 0.0)), int(e.get("goal", 0)))
            for e in d.get("episodes", [])
        ] or [
            EpisodeSpec(tuple(start["position"]), float(start.get("heading", 0.0)), i) for i in range(len(goals))
        ]
        scene = SyntheticScene(
            name=d["name"],
            cell_size=float(d["cell_size"]),
            origin=tuple(d["origin"]),
            size=tuple(d["size"]),
            rooms=rooms,
            walls=[Box.from_dict(w) for w in d.get("walls", [])],
            objects=objects,
            goals=goals,
            episodes=episodes,
            wall_spacing=float(d.get("wall_spacing", 0.08)),
            view_radius=float(d.get("view_radius", 1.5)),
            gt_visibility_min=float(d.get("gt_visibility_min", 0.5)),
            clearance=float(d.get("clearance", 0.2)),
            camera_height=float(d.get("camera_height", 1.5)),
            tau=float(d.get("tau", 0.1)),
        )
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene: {exc!r}") from None
    scene.validate()
    return scene


def load_scene(path) -> SyntheticScene:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise SceneError(f"cannot read scene {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene {path} is not valid JSON: {exc}") from None
    return scene_from_dict(d)


def bundled_scene_paths() -> list[Path]:
    from importlib import resources

    root = resources.files("msgnav").joinpath("data", "scenes")
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def bundled_scene(name: str) -> SyntheticScene:
    for p in bundled_scene_paths():
        if p.stem == name:
            return load_scene(p)
    raise SceneError(f"no bundled scene named {name!r}")
