"""Synthetic perception: which objects a camera sees, and what it explores.

Detections come from ground truth: an object is visible when its center is
inside the horizontal field of view and range, and at least one of a few
probe points on it has a clear line of sight past the walls. Noise is
optional and fully seeded.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from msgnav.geometry import OCCUPIED, segments_clear
from msgnav.scene_graph import Detection, FrameObservation
from msgnav.sim.scene import SceneObject, SyntheticScene
from msgnav.viewpoint import limit_points

EMBEDDING_DIM = 32
N_PROBES = 8


@dataclass
class NoiseConfig:
    p_miss: float = 0.0
    sigma_pos: float = 0.0
    p_flip: float = 0.0
    sigma_emb: float = 0.0
    seed: int = 0

    @property
    def enabled(self) -> bool:
        return any((self.p_miss, self.sigma_pos, self.p_flip, self.sigma_emb))


@dataclass
class CameraModel:
    fov_deg: float = 90.0
    max_range: float = 5.0
    height: float = 1.5


def _unit_from(text: str, dim: int = EMBEDDING_DIM) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


def object_embedding(category: str, instance: int) -> np.ndarray:
    """Category direction plus a small per-instance offset, unit length."""
    v = _unit_from(category) + 0.3 * _unit_from(f"{category}#{instance}")
    return v / np.linalg.norm(v)


def _probe_points(obj: SceneObject) -> np.ndarray:
    return np.vstack([obj.center, limit_points(obj.points, N_PROBES, obj.id)])


def visible_objects(scene: SyntheticScene, position, heading: float, camera: CameraModel) -> list[SceneObject]:
    """Objects whose center lies in the view cone and that are not walled off."""
    cam = np.array([position[0], camera.height, position[-1]], dtype=np.float64)
    half = math.radians(camera.fov_deg) / 2
    out = []
    for obj in scene.objects:
        d = obj.center - cam
        horiz = math.hypot(d[0], d[2])
        if horiz > camera.max_range:
            continue
        if camera.fov_deg < 360 and horiz > 1e-9:
            ang = math.atan2(d[2], d[0]) - heading
            ang = (ang + math.pi) % (2 * math.pi) - math.pi
            if abs(ang) > half:
                continue
        if not len(scene.wall_points):
            out.append(obj)
            continue
        if segments_clear(cam, _probe_points(obj), scene.wall_cloud, scene.tau).any():
            out.append(obj)
    return out


def render_frame(scene: SyntheticScene, position, heading: float, frame_id: int,
                 camera: CameraModel | None = None, noise: NoiseConfig | None = None,
                 timestamp: float | None = None) -> FrameObservation:
    """One RGB-D frame as a list of detections with clouds and embeddings."""
    camera = camera or CameraModel()
    noise = noise or NoiseConfig()
    rng = np.random.default_rng([noise.seed, frame_id]) if noise.enabled else None
    cats = scene.categories()
    dets = []
    for obj in visible_objects(scene, position, heading, camera):
        cat, conf, cloud = obj.category, 1.0, obj.points
        emb = object_embedding(obj.category, obj.id)
        if rng is not None:
            if rng.random() < noise.p_miss:
                continue
            if noise.sigma_pos > 0:
                shift = rng.normal(0.0, noise.sigma_pos, 3)
                shift[1] = 0.0
                cloud = cloud + shift
            if len(cats) > 1 and rng.random() < noise.p_flip:
                others = [c for c in cats if c != obj.category]
                cat = others[int(rng.integers(len(others)))]
            if noise.sigma_emb > 0:
                emb = emb + rng.normal(0.0, noise.sigma_emb, EMBEDDING_DIM)
                emb = emb / np.linalg.norm(emb)
            conf = float(1.0 - 0.4 * rng.random())
        dets.append(Detection(
            category=cat,
            confidence=conf,
            cloud=cloud,
            embedding=emb,
            room=obj.room,
            mask_ref=f"{scene.name}-f{frame_id:06d}-m{obj.id}",
        ))
    cam = np.array([position[0], camera.height, position[-1]], dtype=np.float64)
    return FrameObservation(
        frame_id=frame_id,
        image_ref=f"{scene.name}-f{frame_id:06d}",
        detections=dets,
        timestamp=float(frame_id if timestamp is None else timestamp),
        camera_position=cam,
        camera_heading=float(heading),
    )


def image_goal_descriptor(scene: SyntheticScene, object_id: int, view) -> dict:
    """What a reference photo taken from ``view`` = [x, z, heading] shows."""
    obj = scene.object(object_id)
    seen = visible_objects(scene, (view[0], view[1]), view[2], CameraModel())
    return {
        "category": obj.category,
        "room": obj.room,
        "context": sorted({o.category for o in seen if o.id != object_id}),
    }


def explore(scene: SyntheticScene, explored: np.ndarray, position, heading: float,
            camera: CameraModel | None = None) -> np.ndarray:
    """Mark grid cells seen from ``position``; rays stop at the first occupied cell."""
    camera = camera or CameraModel()
    grid = scene.grid
    c = grid.cell_size
    n_rays = max(8, int(math.ceil(math.radians(camera.fov_deg) * camera.max_range / (0.5 * c))))
    half = math.radians(camera.fov_deg) / 2
    if camera.fov_deg >= 360:
        angles = heading + np.linspace(-math.pi, math.pi, n_rays, endpoint=False)
    else:
        angles = heading + np.linspace(-half, half, n_rays)
    steps = np.arange(0.0, camera.max_range + 1e-9, 0.5 * c)
    xs = position[0] + np.cos(angles)[:, None] * steps[None, :]
    zs = position[-1] + np.sin(angles)[:, None] * steps[None, :]
    cols = np.floor((xs - grid.origin[0]) / c).astype(np.int64)
    rows = np.floor((zs - grid.origin[2]) / c).astype(np.int64)
    inside = (rows >= 0) & (rows < grid.shape[0]) & (cols >= 0) & (cols < grid.shape[1])
    r_safe = np.clip(rows, 0, grid.shape[0] - 1)
    c_safe = np.clip(cols, 0, grid.shape[1] - 1)
    blocked = (grid.cells[r_safe, c_safe] == OCCUPIED) | ~inside
    # a ray sees up to and including its first blocking cell
    first = np.where(blocked.any(axis=1), blocked.argmax(axis=1), steps.size)
    seen = (np.arange(steps.size)[None, :] <= first[:, None]) & inside
    out = explored.copy()
    out[rows[seen], cols[seen]] = True
    return out
