"""Visibility-based viewpoint decision for the final approach to a target.

Candidates sit on rings around the target center at camera height; each
traversable candidate is scored by the fraction of target points it can see
through a tau-clearance corridor, and the best one wins.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from msgnav.geometry import OccupancyGrid, PointCloud, as_points, centroid, is_traversable, segments_clear


class NoViewpointError(RuntimeError):
    pass


@dataclass
class VVDParams:
    radii: list[float] = field(default_factory=lambda: [0.8, 1.2, 1.6, 2.0])
    samples_per_ring: int = 16
    camera_height: float = 1.5
    obstruction_distance: float = 0.1
    clearance: float = 0.2
    step: float | None = None  # defaults to obstruction_distance / 2
    max_target_points: int = 2000
    seed: int = 0

    def __post_init__(self):
        self.radii = [float(r) for r in self.radii]
        if not self.radii or any(r <= 0 for r in self.radii):
            raise ValueError("radii must be positive")
        if self.radii != sorted(self.radii):
            raise ValueError("radii must be ascending")
        if self.samples_per_ring < 3:
            raise ValueError("samples_per_ring must be >= 3")
        if self.camera_height <= 0 or self.obstruction_distance <= 0 or self.clearance < 0:
            raise ValueError("camera_height and obstruction_distance must be positive")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")

    @property
    def ray_step(self) -> float:
        return self.obstruction_distance / 2 if self.step is None else self.step

    def scaled(self, factor: float) -> "VVDParams":
        return VVDParams(
            radii=[r * factor for r in self.radii],
            samples_per_ring=self.samples_per_ring,
            camera_height=self.camera_height * factor,
            obstruction_distance=self.obstruction_distance * factor,
            clearance=self.clearance * factor,
            step=self.ray_step * factor,
            max_target_points=self.max_target_points,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ViewpointCandidate:
    position: np.ndarray
    ring_radius: float
    ring_index: int
    angle_index: int
    score: float | None = None
    traversable: bool | None = None

    def to_dict(self) -> dict:
        return {
            "position": [float(x) for x in self.position],
            "ring_radius": self.ring_radius,
            "ring_index": self.ring_index,
            "angle_index": self.angle_index,
            "score": self.score,
            "traversable": self.traversable,
        }


def sample_candidates(center, params: VVDParams) -> list[ViewpointCandidate]:
    c = np.asarray(center, dtype=np.float64)
    out = []
    for ri, r in enumerate(params.radii):
        for k in range(params.samples_per_ring):
            theta = 2 * math.pi * k / params.samples_per_ring
            pos = c + np.array([r * math.cos(theta), params.camera_height - c[1], r * math.sin(theta)])
            out.append(ViewpointCandidate(pos, r, ri, k))
    return out


def limit_points(points: np.ndarray, limit: int, seed: int) -> np.ndarray:
    """Uniform subsample without replacement, order preserved, seeded."""
    if len(points) <= limit:
        return points
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(points), size=limit, replace=False))
    return points[keep]


def visibility_score(v, target_cloud, scene: PointCloud, tau: float, step: float | None = None) -> float:
    """Fraction of target points reachable from ``v`` through clear corridors.

    ``scene`` is the occluder set; callers pass it with the target's own
    points already removed.
    """
    pts = target_cloud.points if isinstance(target_cloud, PointCloud) else as_points(target_cloud)
    if len(pts) == 0:
        raise ValueError("empty target cloud")
    clear = segments_clear(np.asarray(v, dtype=np.float64), pts, scene, tau, step)
    return float(clear.mean())


def score_candidates(candidates: list[ViewpointCandidate], target_points: np.ndarray, scene: PointCloud,
                     grid: OccupancyGrid, params: VVDParams,
                     traversable: Callable[[np.ndarray], bool] | None = None) -> list[ViewpointCandidate]:
    pts = limit_points(target_points, params.max_target_points, params.seed)
    for cand in candidates:
        if traversable is None:
            cand.traversable = is_traversable(grid, cand.position, params.clearance)
        else:
            cand.traversable = bool(traversable(cand.position))
        if cand.traversable:
            cand.score = visibility_score(cand.position, pts, scene, params.obstruction_distance, params.ray_step)
    return candidates


def decide_viewpoint(target_points, scene: PointCloud, grid: OccupancyGrid, params: VVDParams,
                     candidates_out: list | None = None,
                     traversable: Callable[[np.ndarray], bool] | None = None) -> ViewpointCandidate:
    """Best traversable ring candidate by visibility.

    Ties go to the smaller ring, then the smaller angle index. Raises
    :class:`NoViewpointError` when no candidate is traversable. When
    ``candidates_out`` is given it receives every scored candidate.
    ``traversable`` replaces the clearance test, e.g. with "the agent can
    reach this cell".
    """
    pts = target_points.points if isinstance(target_points, PointCloud) else as_points(target_points)
    if len(pts) == 0:
        raise ValueError("empty target cloud")
    cands = score_candidates(sample_candidates(centroid(pts), params), pts, scene, grid, params, traversable)
    if candidates_out is not None:
        candidates_out.extend(cands)
    best: ViewpointCandidate | None = None
    for cand in cands:
        if cand.traversable and (best is None or cand.score > best.score):
            best = cand
    if best is None:
        raise NoViewpointError("no viewpoint: every candidate is non-traversable")
    return best


def occluders_without(scene_points: np.ndarray, target_points: np.ndarray) -> PointCloud:
    """Scene cloud with the target's own points removed (exact coordinate match)."""
    scene_points = as_points(scene_points)
    if not len(target_points) or not len(scene_points):
        return PointCloud(scene_points)
    tset = {tuple(p) for p in np.asarray(target_points).tolist()}
    keep = np.array([tuple(p) not in tset for p in scene_points.tolist()], dtype=bool)
    return PointCloud(scene_points[keep])
