"""Closed-loop episodes: observe, build the graph, ask the reasoner, move.

Each step takes a panorama of ``views_per_step`` frames, updates the scene
graph and the explored mask, builds the key subgraph, queries the reasoner
and executes its choice. Choosing a target object ends the episode: the agent
walks to a viewpoint (visibility-based or nearest reachable cell) and stops.
Success is judged afterwards from the stop position, so one run can be scored
at several success distances.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from msgnav.geometry import PointCloud
from msgnav.key_subgraph import (
    assemble_key_prompt,
    compress,
    estimate_tokens,
    focus,
    full_graph_payload,
    greedy_prune,
)
from msgnav.reasoning import (
    DecisionMemory,
    Goal,
    ReasonerError,
    ReasonerProtocolError,
    Vocabulary,
    apply_response,
    assemble_query,
    validate,
)
from msgnav.scene_graph import GraphConfig, SceneGraph
from msgnav.sim.frontier import Frontier, extract_frontiers
from msgnav.sim.planning import GridPlanner, path_length
from msgnav.sim.render import CameraModel, NoiseConfig, explore, image_goal_descriptor, render_frame, visible_objects
from msgnav.sim.scene import GoalSpec, SyntheticScene
from msgnav.viewpoint import NoViewpointError, decide_viewpoint

log = logging.getLogger(__name__)

DEFAULT_EVAL_DISTANCES = (0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 1.0)


@dataclass
class EpisodeConfig:
    max_steps: int = 50
    k: int = 5
    memory_window: int = 10
    views_per_step: int = 4
    use_vvd: bool = True
    success_distance: float = 0.25
    eval_distances: tuple[float, ...] = DEFAULT_EVAL_DISTANCES
    # stop automatically once this close to a ground-truth viewpoint; None = only explicit stops
    auto_stop_radius: float | None = None
    min_frontier_cluster: int = 3
    frontier_reach: float = 1.5
    snapshot_range: float = 3.0
    validate_requests: bool = True
    camera: CameraModel = field(default_factory=CameraModel)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    vvd: dict = field(default_factory=dict)  # overrides on top of the scene's defaults


@dataclass
class AgentState:
    """Everything that persists across sub-episodes in lifelong mode."""

    graph: SceneGraph
    vocab: Vocabulary
    memory: DecisionMemory = field(default_factory=DecisionMemory)
    explored: np.ndarray | None = None
    cell: tuple[int, int] = (0, 0)
    heading: float = 0.0
    next_frame: int = 0
    step: int = 0
    visited: set = field(default_factory=set)


@dataclass
class EpisodeResult:
    scene: str
    goal: str
    goal_kind: str
    success: bool
    final_distance: float
    shortest_path: float
    agent_path: float
    steps: int
    stop_position: list[float]
    stopped: bool
    failure_reason: str | None = None
    error_kind: str | None = None
    target: int | None = None
    viewpoint_mode: str = "vvd"
    shortest_by_d: dict[str, float] = field(default_factory=dict)
    transcript: list[dict] = field(default_factory=list)

    @property
    def spl(self) -> float:
        if not self.success:
            return 0.0
        return self.shortest_path / max(self.shortest_path, self.agent_path)

    def success_at(self, d: float) -> bool:
        return self.stopped and self.final_distance <= d + 1e-9

    def to_dict(self, transcript: bool = False) -> dict:
        d = asdict(self)
        if not transcript:
            d.pop("transcript")
        d["spl"] = self.spl
        return d


def make_goal(scene: SyntheticScene, index: int) -> Goal:
    spec = scene.goals[index]
    if spec.kind == "category":
        return Goal("category", category_term=spec.category)
    if spec.kind == "language":
        return Goal("language", description=spec.description)
    return Goal(
        "image",
        image_ref=f"{scene.name}-goal{index}",
        image_descriptor=image_goal_descriptor(scene, spec.object_ids[0], spec.view),
    )


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


class Episode:
    """One goal pursued from the agent's current state."""

    def __init__(self, scene: SyntheticScene, goal_index: int, reasoner, config: EpisodeConfig,
                 state: AgentState, planner: GridPlanner):
        self.scene = scene
        self.spec: GoalSpec = scene.goals[goal_index]
        self.goal = make_goal(scene, goal_index)
        self.reasoner = reasoner
        self.config = config
        self.state = state
        self.planner = planner
        self.grid = scene.grid
        self.start_cell = state.cell
        self.path_m = 0.0
        self.transcript: list[dict] = []
        self.vp_cells = scene.gt_viewpoints_for(self.spec.object_ids)

    # -- helpers -----------------------------------------------------------

    def xz(self, cell) -> tuple[float, float]:
        p = self.grid.center(cell[0], cell[1])
        return float(p[0]), float(p[2])

    def distance_to_viewpoints(self, cell) -> float:
        if not len(self.vp_cells):
            return math.inf
        d = self.grid.cell_size * np.hypot(self.vp_cells[:, 0] - cell[0], self.vp_cells[:, 1] - cell[1])
        return float(d.min())

    def _vp_distance_map(self) -> np.ndarray:
        if not hasattr(self, "_vp_edt"):
            far = np.ones(self.grid.shape, dtype=bool)
            far[self.vp_cells[:, 0], self.vp_cells[:, 1]] = False
            self._vp_edt = ndimage.distance_transform_edt(far) * self.grid.cell_size
        return self._vp_edt

    def shortest_to_region(self, d: float) -> float:
        """Geodesic distance from the start to any reachable cell within ``d`` of a viewpoint."""
        if not len(self.vp_cells):
            return math.inf
        dist, _ = self.planner.field(self.start_cell)
        region = self._vp_distance_map() <= d + 1e-9
        vals = dist[region]
        return float(vals.min()) if vals.size else math.inf

    def move_to(self, cell) -> list[tuple[int, int]]:
        path = self.planner.path(self.state.cell, cell)
        self.path_m += path_length(path, self.grid.cell_size)
        if len(path) > 1:
            (r0, c0), (r1, c1) = path[-2], path[-1]
            self.state.heading = math.atan2(r1 - r0, c1 - c0)
        self.state.cell = tuple(cell)
        return path

    # -- perception --------------------------------------------------------

    def observe(self) -> list[dict]:
        st = self.state
        x, z = self.xz(st.cell)
        stats = []
        for v in range(self.config.views_per_step):
            heading = st.heading + 2 * math.pi * v / self.config.views_per_step
            obs = render_frame(self.scene, (x, z), heading, st.next_frame, self.config.camera, self.config.noise)
            st.next_frame += 1
            stats.append(st.graph.update(obs, st.vocab))
            st.explored = explore(self.scene, st.explored, (x, z), heading, self.config.camera)
        return stats

    def frontiers(self) -> list[Frontier]:
        st = self.state
        out = []
        dist, _ = self.planner.field(st.cell)
        snap_cam = CameraModel(fov_deg=360.0, max_range=self.config.snapshot_range, height=self.config.camera.height)
        for f in extract_frontiers(self.grid, st.explored, self.config.min_frontier_cluster):
            rep = f.position
            nav = self.planner.nearest_reachable(st.cell, (rep[0], rep[2]), self.grid.origin, self.config.frontier_reach)
            if nav is None or nav == st.cell or nav in st.visited:
                continue
            f.nav_cell = nav
            f.distance = float(dist[nav])
            seen = visible_objects(self.scene, (rep[0], rep[2]), 0.0, snap_cam)
            hist: dict[str, int] = {}
            for o in seen:
                hist[o.category] = hist.get(o.category, 0) + 1
            f.snapshot = {"room": self.scene.room_at(rep[0], rep[2]), "categories": dict(sorted(hist.items()))}
            out.append(f)
        for i, f in enumerate(out):
            f.id = i
        return out

    # -- acting ------------------------------------------------------------

    def approach_cell(self, target: int) -> tuple[tuple[int, int], str]:
        node = self.state.graph.objects[target]
        if self.config.use_vvd:
            others = [n.cloud for i, n in self.state.graph.objects.items() if i != target]
            occ = PointCloud(np.concatenate([self.scene.wall_points] + others))
            params = self.scene.vvd_params(**self.config.vvd)
            reach, _ = self.planner.field(self.state.cell)

            def can_stand(pos) -> bool:
                cell = self.grid.cell_of(pos)
                return self.grid.in_bounds(*cell) and bool(np.isfinite(reach[cell]))

            try:
                best = decide_viewpoint(node.cloud, occ, self.grid, params, traversable=can_stand)
                goal_xz = (best.position[0], best.position[2])
                mode = "vvd"
            except NoViewpointError:
                goal_xz = (node.position[0], node.position[2])
                mode = "vvd-fallback"
        else:
            goal_xz = (node.position[0], node.position[2])
            mode = "nearest"
        cell = self.grid.cell_of([goal_xz[0], 0.0, goal_xz[1]])
        dist, _ = self.planner.field(self.state.cell)
        if not (self.grid.in_bounds(*cell) and math.isfinite(dist[cell])):
            cell = self.planner.nearest_reachable(self.state.cell, goal_xz, self.grid.origin)
        return cell, mode

    def target_confirmed(self, target: int) -> bool:
        node = self.state.graph.objects[target]
        x, z = self.xz(self.state.cell)
        cam = CameraModel(fov_deg=360.0, max_range=self.config.camera.max_range, height=self.config.camera.height)
        return any(
            o.category == node.category and np.linalg.norm(o.center - node.position) <= 1.0
            for o in visible_objects(self.scene, (x, z), 0.0, cam)
        )

    def run(self) -> EpisodeResult:
        cfg = self.config
        st = self.state
        failure: str | None = None
        error_kind: str | None = None
        stopped = False
        target_id: int | None = None
        mode = "vvd" if cfg.use_vvd else "nearest"
        steps = 0
        for _ in range(cfg.max_steps):
            st.step += 1
            steps += 1
            frame_stats = self.observe()
            frontiers = self.frontiers()
            compact = compress(st.graph)
            try:
                related = focus(compact, self.goal, self.reasoner, cfg.k, st.step)
            except ReasonerError as exc:
                failure, error_kind = f"reasoner: {exc}", _kind(exc)
                break
            key = greedy_prune(st.graph, related)
            payload = assemble_key_prompt(key, st.graph)
            request = assemble_query(payload, st.memory, [f.to_request() for f in frontiers], self.goal,
                                     st.step, cfg.memory_window)
            if cfg.validate_requests:
                validate(request, "request")
            record = {
                "step": st.step,
                "position": [round(v, 3) for v in self.xz(st.cell)],
                "frames": [s["frame_id"] for s in frame_stats],
                "detections": sum(s["detections"] for s in frame_stats),
                "n_objects": st.graph.n_objects,
                "n_edges": st.graph.n_edges,
                "related": sorted(related),
                "key_objects": len(key.key_objects),
                "key_images": key.n_images,
                "frontiers": len(frontiers),
                "tokens_key": estimate_tokens(payload),
                "tokens_full": estimate_tokens(full_graph_payload(st.graph)),
                "request_sha": _sha(request),
            }
            if not frontiers and not key.key_objects:
                record["action"] = {"kind": "give_up"}
                self.transcript.append(record)
                failure = "no frontiers and no candidate objects"
                break
            try:
                resp = self.reasoner.decide(request)
            except ReasonerError as exc:
                record["action"] = {"kind": "error", "message": str(exc)}
                self.transcript.append(record)
                failure, error_kind = f"reasoner: {exc}", _kind(exc)
                break
            record["response_sha"] = _sha(resp.to_dict())
            st.vocab, st.memory = apply_response(resp, st.vocab, st.memory, st.step)
            if resp.target is not None:
                if resp.target not in st.graph.objects:
                    st.memory.annotate(st.step, "refuted")
                    record["action"] = {"kind": "invalid_target", "target": resp.target}
                    self.transcript.append(record)
                    continue
                cell, mode = self.approach_cell(resp.target)
                self.move_to(cell)
                target_id = resp.target
                stopped = True
                st.memory.annotate(st.step, "confirmed" if self.target_confirmed(resp.target) else "refuted")
                record["action"] = {"kind": "target", "target": resp.target, "mode": mode,
                                    "goal_cell": [int(cell[0]), int(cell[1])]}
            else:
                chosen = next((f for f in frontiers if f.id == resp.frontier), None)
                if chosen is None:
                    st.memory.annotate(st.step, "refuted")
                    record["action"] = {"kind": "invalid_frontier", "frontier": resp.frontier}
                    self.transcript.append(record)
                    continue
                self.move_to(chosen.nav_cell)
                st.visited.add(chosen.nav_cell)
                st.memory.annotate(st.step, "confirmed")
                record["action"] = {"kind": "frontier", "frontier": chosen.id,
                                    "goal_cell": [int(chosen.nav_cell[0]), int(chosen.nav_cell[1])]}
            record["path_length"] = round(self.path_m, 4)
            self.transcript.append(record)
            if stopped:
                break
            if cfg.auto_stop_radius is not None and self.distance_to_viewpoints(st.cell) <= cfg.auto_stop_radius:
                stopped = True
                break
        else:
            failure = "step budget exhausted"

        final = self.distance_to_viewpoints(st.cell)
        shortest = {f"{d:g}": self.shortest_to_region(d) for d in sorted(set(cfg.eval_distances) | {cfg.success_distance})}
        success = stopped and final <= cfg.success_distance + 1e-9
        if stopped and not success and failure is None:
            failure = "stopped outside the success region"
        x, z = self.xz(st.cell)
        return EpisodeResult(
            scene=self.scene.name,
            goal=str(self.goal),
            goal_kind=self.goal.kind,
            success=success,
            final_distance=final,
            shortest_path=shortest[f"{cfg.success_distance:g}"],
            agent_path=self.path_m,
            steps=steps,
            stop_position=[x, z],
            stopped=stopped,
            failure_reason=failure,
            error_kind=error_kind,
            target=target_id,
            viewpoint_mode=mode,
            shortest_by_d=shortest,
            transcript=self.transcript,
        )


def _kind(exc: Exception) -> str:
    if isinstance(exc, ReasonerProtocolError):
        return "protocol"
    return type(exc).__name__


def new_state(scene: SyntheticScene, config: EpisodeConfig, start_xz, heading: float, vocab: Vocabulary | None = None) -> AgentState:
    planner = scene_planner(scene)
    mask = scene.nav_mask()
    rows, cols = np.nonzero(mask)
    if not rows.size:
        raise ValueError(f"scene {scene.name} has no traversable cell")
    centers = scene.grid.centers()
    e = np.hypot(centers[rows, cols, 0] - start_xz[0], centers[rows, cols, 2] - start_xz[1])
    k = np.lexsort((cols, rows, e))[0]
    state = AgentState(
        graph=SceneGraph(config.graph),
        vocab=vocab.copy() if vocab is not None else Vocabulary(),
        explored=np.zeros(scene.grid.shape, dtype=bool),
        cell=(int(rows[k]), int(cols[k])),
        heading=float(heading),
    )
    planner.field(state.cell)
    return state


def scene_planner(scene: SyntheticScene) -> GridPlanner:
    key = "planner"
    if key not in scene._cache:
        scene._cache[key] = GridPlanner(scene.nav_mask(), scene.cell_size)
    return scene._cache[key]


def run_episode(scene: SyntheticScene, goal_index: int, reasoner, config: EpisodeConfig | None = None,
                start=None, heading: float | None = None, state: AgentState | None = None) -> EpisodeResult:
    """Run one goal. Pass ``state`` to continue from an earlier episode (lifelong mode)."""
    config = config or EpisodeConfig()
    if state is None:
        ep = next((e for e in scene.episodes if e.goal == goal_index), None)
        start = start if start is not None else (ep.start if ep else scene.episodes[0].start)
        heading = heading if heading is not None else (ep.heading if ep else 0.0)
        state = new_state(scene, config, start, heading)
    return Episode(scene, goal_index, reasoner, config, state, scene_planner(scene)).run()


def run_lifelong(scene: SyntheticScene, goal_indices: list[int], reasoner, config: EpisodeConfig | None = None,
                 start=None, heading: float = 0.0) -> list[EpisodeResult]:
    """Pursue goals one after another, keeping graph, memory and vocabulary."""
    config = config or EpisodeConfig()
    start = start if start is not None else scene.episodes[0].start
    state = new_state(scene, config, start, heading)
    return [run_episode(scene, g, reasoner, config, state=state) for g in goal_indices]
