"""Reusable experiment drivers: last-mile suite, candidate scoring tables, efficiency workload."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from msgnav.geometry import PointCloud
from msgnav.reasoning import MockReasoner
from msgnav.sim.episode import EpisodeConfig, EpisodeResult, run_episode
from msgnav.sim.metrics import success_at
from msgnav.sim.scene import SyntheticScene, bundled_scene
from msgnav.viewpoint import NoViewpointError, ViewpointCandidate, VVDParams, decide_viewpoint

LASTMILE_SCENES = ("lastmile_lwall", "lastmile_alcove", "lastmile_table")
WORKLOAD_SCENES = ("demo_apartment", "office", "house") + LASTMILE_SCENES


def run_suite(scene_names: Iterable[str], config: EpisodeConfig,
              reasoner_factory: Callable = MockReasoner.oracle) -> list[EpisodeResult]:
    """Every authored episode of every named scene, in file order."""
    results = []
    for name in scene_names:
        scene = bundled_scene(name)
        for e in scene.episodes:
            results.append(run_episode(scene, e.goal, reasoner_factory(), config, start=e.start, heading=e.heading))
    return results


def sr_sweep(results: list[EpisodeResult], distances: Iterable[float]) -> dict[float, tuple[float, float]]:
    return {d: success_at(results, d) for d in distances}


def standable(scene: SyntheticScene) -> Callable[[np.ndarray], bool]:
    """Candidate filter used outside an episode: the cell must be in the scene's navigable mask."""
    nav = scene.nav_mask()

    def can_stand(pos) -> bool:
        cell = scene.grid.cell_of(pos)
        return scene.grid.in_bounds(*cell) and bool(nav[cell])

    return can_stand


def candidate_table(scene: SyntheticScene, oid: int, params: VVDParams | None = None
                    ) -> tuple[ViewpointCandidate | None, list[dict]]:
    """Score every ring candidate around a ground-truth object.

    Returns the chosen candidate (None when nothing is standable) and one row
    per candidate with its distance to the nearest ground-truth viewpoint.
    """
    obj = scene.object(oid)
    params = scene.vvd_params() if params is None else params
    occ = PointCloud(scene.scene_points({oid}))
    cands: list[ViewpointCandidate] = []
    try:
        best = decide_viewpoint(obj.points, occ, scene.grid, params, candidates_out=cands,
                                traversable=standable(scene))
    except NoViewpointError:
        best = None
    vps = scene.viewpoint_positions([oid])
    rows = []
    for c in cands:
        row = c.to_dict()
        row["distance_to_gt"] = (
            float(np.hypot(vps[:, 0] - c.position[0], vps[:, 2] - c.position[2]).min()) if len(vps) else None
        )
        rows.append(row)
    return best, rows


def goal_object_ids(scene: SyntheticScene) -> list[int]:
    return sorted({oid for g in scene.goals for oid in g.object_ids})


def score_distance_rows(scene_names: Iterable[str] = LASTMILE_SCENES) -> list[dict]:
    """Scored, standable candidates around every goal object of the named scenes."""
    out = []
    for name in scene_names:
        scene = bundled_scene(name)
        for oid in goal_object_ids(scene):
            _, rows = candidate_table(scene, oid)
            for r in rows:
                if r["score"] is not None and r["distance_to_gt"] is not None:
                    out.append({"scene": name, "object": oid, **r})
    return out


def score_distance_split(rows: list[dict], high: float = 0.6, low: float = 0.2) -> dict:
    """Mean distance to ground truth for high-scoring versus low-scoring candidates."""
    hi = [r["distance_to_gt"] for r in rows if r["score"] >= high]
    lo = [r["distance_to_gt"] for r in rows if r["score"] < low]
    return {
        "n_high": len(hi),
        "n_low": len(lo),
        "mean_high": float(np.mean(hi)) if hi else float("nan"),
        "mean_low": float(np.mean(lo)) if lo else float("nan"),
    }


def efficiency_report(steps: list[dict]) -> dict:
    """Images per query and prompt-size reduction pooled over every reasoner query."""
    queried = [s for s in steps if "tokens_key" in s and s.get("action", {}).get("kind") != "give_up"]
    if not queried:
        raise ValueError("no reasoner queries in the given transcripts")
    imgs = np.array([s["key_images"] for s in queried], dtype=float)
    key = np.array([s["tokens_key"] for s in queried], dtype=float)
    full = np.array([s["tokens_full"] for s in queried], dtype=float)
    return {
        "queries": len(queried),
        "images_per_query": {
            "mean": float(imgs.mean()),
            "p50": float(np.percentile(imgs, 50)),
            "p90": float(np.percentile(imgs, 90)),
            "max": float(imgs.max()),
        },
        "tokens_key_mean": float(key.mean()),
        "tokens_full_mean": float(full.mean()),
        "token_reduction": float(1.0 - key.sum() / full.sum()) if full.sum() > 0 else 0.0,
    }
