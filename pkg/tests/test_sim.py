import copy
import heapq
import json
import math

import numpy as np
import pytest

from msgnav.geometry import FREE, OCCUPIED, OccupancyGrid
from msgnav.reasoning import MockReasoner
from msgnav.sim.episode import EpisodeConfig, run_episode, run_lifelong, scene_planner
from msgnav.sim.frontier import extract_frontiers, frontier_mask
from msgnav.sim.metrics import EpisodeOutcome, compute_metrics, success_at
from msgnav.sim.planning import DisconnectedError, GridPlanner, path_length, shortest_path
from msgnav.sim.render import CameraModel, NoiseConfig, explore, object_embedding, render_frame
from msgnav.sim.scene import SceneError, bundled_scene, load_scene, scene_from_dict

WALLS = [{"min": [0, 0, 0], "max": [6, 2.5, 0.1]}, {"min": [0, 0, 3.9], "max": [6, 2.5, 4]},
         {"min": [0, 0, 0], "max": [0.1, 2.5, 4]}, {"min": [5.9, 0, 0], "max": [6, 2.5, 4]}]


def room_dict():
    return {
        "format_version": 1, "name": "room", "cell_size": 0.25, "origin": [0, 0], "size": [16, 24],
        "view_radius": 0.7, "rooms": [{"name": "den", "min": [0, 0], "max": [6, 4]}], "walls": WALLS,
        "objects": [{"id": 1, "category": "chair", "box": {"min": [1.3, 0, 1.8], "max": [1.7, 0.9, 2.2]}},
                    {"id": 2, "category": "table", "box": {"min": [2.5, 0, 3.2], "max": [3.3, 0.7, 3.7]}}],
        "goals": [{"kind": "category", "category": "chair"}],
        "episodes": [{"start": [4.5, 2.0], "heading": math.pi, "goal": 0}],
    }


@pytest.fixture(scope="module")
def room():
    return scene_from_dict(room_dict())


# -- scenes ----------------------------------------------------------------

def test_bundled_scenes_load():
    for name in ("demo_apartment", "office", "house", "lastmile_lwall", "lastmile_alcove", "lastmile_table"):
        s = bundled_scene(name)
        assert s.goals and s.episodes


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d.update(format_version=2), "version"),
    (lambda d: d.pop("objects"), "malformed"),
    (lambda d: d["goals"].append({"kind": "smell", "category": "x"}), "unknown goal kind"),
    (lambda d: d["goals"].append({"kind": "category", "category": "piano"}), "matches no object"),
    (lambda d: d["objects"].append(dict(d["objects"][0])), "duplicate"),
    (lambda d: d["objects"].append({"id": 9, "category": "vase", "box": {"min": [0, 0, 1], "max": [0.3, 1, 1.2]}}),
     "intersects a wall"),
    (lambda d: d["episodes"].append({"start": [1, 1], "goal": 5}), "missing goal"),
])
def test_scene_validation_errors(mutate, match):
    d = room_dict()
    mutate(d)
    with pytest.raises(SceneError, match=match):
        scene_from_dict(d)


def test_load_scene_file_errors(tmp_path):
    with pytest.raises(SceneError, match="cannot read"):
        load_scene(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(SceneError, match="not valid JSON"):
        load_scene(bad)
    good = tmp_path / "room.json"
    good.write_text(json.dumps(room_dict()))
    assert load_scene(good).name == "room"


# -- rendering -------------------------------------------------------------

def test_render_facing_away_is_empty(room):
    obs = render_frame(room, (4.5, 2.0), 0.0, 0)
    assert obs.detections == []


def test_render_noise_free_single_detection(room):
    cam = CameraModel(fov_deg=30.0)
    obs = render_frame(room, (4.5, 2.0), math.pi, 7, camera=cam)
    assert len(obs.detections) == 1
    det = obs.detections[0]
    chair = room.object(1)
    assert det.category == "chair" and det.confidence == 1.0
    assert np.array_equal(det.cloud, chair.points)
    assert np.array_equal(det.embedding, object_embedding("chair", 1))
    assert obs.image_ref == "room-f000007" and det.mask_ref == "room-f000007-m1"


def test_render_wall_blocks_line_of_sight():
    d = room_dict()
    d["walls"].append({"min": [3.6, 0, 0.1], "max": [3.7, 2.5, 3.9]})
    s = scene_from_dict(d)
    assert render_frame(s, (4.5, 2.0), math.pi, 0).detections == []


def test_render_miss_rate_monte_carlo(room):
    noise = NoiseConfig(p_miss=0.5, seed=1)
    cam = CameraModel(fov_deg=30.0)
    hits = sum(len(render_frame(room, (4.5, 2.0), math.pi, i, cam, noise).detections) for i in range(1000))
    assert 0.45 <= hits / 1000 <= 0.55


def test_render_noise_is_seeded(room):
    noise = NoiseConfig(p_miss=0.2, sigma_pos=0.05, p_flip=0.3, sigma_emb=0.1, seed=4)

    def sig(obs):
        return [(d.category, d.confidence, d.cloud.tobytes(), d.embedding.tobytes()) for d in obs.detections]

    a = render_frame(room, (4.5, 2.0), math.pi, 3, noise=noise)
    b = render_frame(room, (4.5, 2.0), math.pi, 3, noise=noise)
    assert sig(a) == sig(b)
    for det in a.detections:
        assert abs(np.linalg.norm(det.embedding) - 1) < 1e-12


def test_explore_stops_at_walls():
    d = room_dict()
    d["walls"].append({"min": [3.6, 0, 0.1], "max": [3.7, 2.5, 3.9]})
    s = scene_from_dict(d)
    seen = explore(s, np.zeros(s.grid.shape, dtype=bool), (4.5, 2.0), 0.0, CameraModel(fov_deg=360.0))
    # columns 14 and 15 hold the partition; everything west of it stays unseen
    assert not seen[:, :14].any()
    assert seen[1:15, 16:23].all()


# -- frontiers -------------------------------------------------------------

def grid_from(cells):
    return OccupancyGrid((0.0, 0.0, 0.0), 1.0, np.asarray(cells, dtype=np.uint8))


def test_frontiers_fully_explored():
    g = grid_from(np.zeros((6, 6)))
    assert extract_frontiers(g, np.ones((6, 6), dtype=bool)) == []


def test_frontier_half_explored_corridor():
    cells = np.full((5, 20), FREE)
    cells[[0, 4], :] = OCCUPIED
    explored = np.zeros((5, 20), dtype=bool)
    explored[:, :10] = True
    fs = extract_frontiers(grid_from(cells), explored)
    assert len(fs) == 1
    assert sorted(map(tuple, fs[0].cells.tolist())) == [(1, 9), (2, 9), (3, 9)]
    assert fs[0].representative == (2, 9)


def test_frontiers_two_rooms_off_a_hall():
    cells = np.full((12, 20), OCCUPIED)
    cells[1:4, 1:19] = FREE  # hall
    cells[5:11, 2:8] = FREE  # room A
    cells[5:11, 12:18] = FREE  # room B
    cells[4, 3:6] = FREE  # doors
    cells[4, 13:16] = FREE
    explored = np.zeros(cells.shape, dtype=bool)
    explored[:5] = True
    fs = extract_frontiers(grid_from(cells), explored)
    assert [f.representative for f in fs] == [(4, 4), (4, 14)]
    assert [f.id for f in fs] == [0, 1]


def test_frontier_min_cluster_and_size_order():
    cells = np.zeros((10, 10))
    explored = np.zeros((10, 10), dtype=bool)
    explored[:, :5] = True
    explored[0:2, 5:8] = True  # a notch shortens the boundary
    mask = frontier_mask(grid_from(cells), explored)
    fs = extract_frontiers(grid_from(cells), explored, min_cluster=1)
    assert sum(f.size for f in fs) == int(mask.sum())
    assert [f.size for f in fs] == sorted((f.size for f in fs), reverse=True)
    assert extract_frontiers(grid_from(cells), explored, min_cluster=int(mask.sum()) + 1) == []


def test_frontier_shape_mismatch():
    with pytest.raises(ValueError):
        extract_frontiers(grid_from(np.zeros((4, 4))), np.zeros((3, 4), dtype=bool))


# -- planning --------------------------------------------------------------

def dijkstra_oracle(mask, a, b, cell):
    """Textbook Dijkstra over 8 neighbours; diagonals need both side cells free."""
    h, w = mask.shape
    best = {a: 0.0}
    heap = [(0.0, a)]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if (r, c) == b:
            return d
        if d > best[(r, c)]:
            continue
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < h and 0 <= nc < w and mask[nr, nc]):
                    continue
                if dr and dc and not (mask[r + dr, c] and mask[r, c + dc]):
                    continue
                nd = d + cell * math.hypot(dr, dc)
                if nd < best.get((nr, nc), math.inf) - 1e-12:
                    best[(nr, nc)] = nd
                    heapq.heappush(heap, (nd, (nr, nc)))
    return math.inf


def test_shortest_same_cell():
    assert shortest_path(np.ones((3, 3), dtype=bool), 0.25, (1, 1), (1, 1)) == 0.0


def test_shortest_straight_corridor():
    assert shortest_path(np.ones((1, 10), dtype=bool), 0.25, (0, 0), (0, 9)) == pytest.approx(2.25)


def test_shortest_around_wall_matches_oracle():
    mask = np.ones((9, 9), dtype=bool)
    mask[1:8, 4] = False
    d = shortest_path(mask, 0.25, (4, 0), (4, 8))
    assert d == pytest.approx(dijkstra_oracle(mask, (4, 0), (4, 8), 0.25))


def test_shortest_random_masks_match_oracle():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(40):
        mask = rng.random((14, 14)) > 0.3
        free = np.argwhere(mask)
        planner = GridPlanner(mask, 0.5)
        for _ in range(5):
            a, b = (tuple(int(v) for v in free[i]) for i in rng.choice(len(free), 2))
            want = dijkstra_oracle(mask, a, b, 0.5)
            if math.isinf(want):
                with pytest.raises(DisconnectedError, match="disconnected"):
                    planner.distance(a, b)
                continue
            assert planner.distance(a, b) == pytest.approx(want)
            path = planner.path(a, b)
            assert path[0] == a and path[-1] == b and all(mask[c] for c in path)
            assert path_length(path, 0.5) == pytest.approx(want)
            checked += 1
    assert checked > 50


def test_no_corner_cutting():
    mask = np.array([[1, 0], [0, 1]], dtype=bool)
    with pytest.raises(DisconnectedError):
        shortest_path(mask, 1.0, (0, 0), (1, 1))


def test_start_must_be_traversable():
    with pytest.raises(ValueError):
        GridPlanner(np.zeros((2, 2), dtype=bool), 1.0).field((0, 0))


def test_nearest_reachable():
    mask = np.ones((5, 5), dtype=bool)
    mask[:, 2] = False
    p = GridPlanner(mask, 1.0)
    # target sits in the unreachable half: best reachable cell is the column next to the wall
    assert p.nearest_reachable((2, 0), (3.5, 2.5), (0.0, 0.0, 0.0)) == (2, 1)
    assert p.nearest_reachable((2, 0), (3.5, 2.5), (0.0, 0.0, 0.0), max_dist=1.0) is None


# -- metrics ---------------------------------------------------------------

def test_metrics_all_perfect():
    assert compute_metrics([EpisodeOutcome(True, 3.0, 3.0)] * 4) == (1.0, 1.0)


def test_metrics_hand_example():
    sr, spl = compute_metrics([EpisodeOutcome(True, 2.0, 4.0), EpisodeOutcome(False, 1.0, 9.0)])
    assert (sr, spl) == (0.5, 0.25)


def test_metrics_empty():
    with pytest.raises(ValueError):
        compute_metrics([])


def test_metrics_random_vs_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 30))
        s = rng.random(n) < 0.6
        ls = rng.uniform(0.1, 10, n)
        la = ls * rng.uniform(0.5, 3, n)
        sr, spl = compute_metrics([EpisodeOutcome(bool(a), float(b), float(c)) for a, b, c in zip(s, ls, la)])
        assert sr == pytest.approx(s.mean())
        assert spl == pytest.approx(np.mean(s * ls / np.maximum(ls, la)))
        assert spl <= sr + 1e-12


# -- episodes --------------------------------------------------------------

def test_visible_goal_picked_at_step_one(room):
    cfg = EpisodeConfig()
    r = run_episode(room, 0, MockReasoner.oracle(), cfg)
    assert r.success and r.steps == 1 and r.target == 1
    planner = scene_planner(room)
    x0, z0 = r.transcript[0]["position"]
    start = room.grid.cell_of([x0, 0, z0])
    stop = room.grid.cell_of([r.stop_position[0], 0, r.stop_position[1]])
    # the agent walks a geodesic to its chosen viewpoint
    assert r.agent_path == pytest.approx(planner.distance(start, stop))
    # the chosen viewpoint is on the success region, so the detour over l_s stays within one
    # region width plus one diagonal step
    assert r.shortest_path <= r.agent_path <= r.shortest_path + cfg.success_distance + math.sqrt(2) * room.cell_size


def test_wrong_frontier_fails_at_budget(room):
    script = {"version": 1, "on_exhausted": "repeat_last", "responses": [{"choice": {"frontier": 99}}]}
    r = run_episode(room, 0, MockReasoner(script), EpisodeConfig(max_steps=6))
    assert not r.success and r.steps == 6 and r.failure_reason == "step budget exhausted"
    assert all(s["action"]["kind"] == "invalid_frontier" for s in r.transcript)


def test_reasoner_error_marks_episode(room):
    r = run_episode(room, 0, MockReasoner({"version": 1, "responses": []}), EpisodeConfig())
    assert not r.success and r.error_kind == "protocol"
    assert r.failure_reason.startswith("reasoner")
    assert r.transcript[-1]["action"]["kind"] == "error"


def test_lastmile_vvd_on_off():
    s = bundled_scene("lastmile_lwall")
    e = s.episodes[0]
    on = run_episode(s, e.goal, MockReasoner.oracle(), EpisodeConfig(use_vvd=True), start=e.start, heading=e.heading)
    off = run_episode(s, e.goal, MockReasoner.oracle(), EpisodeConfig(use_vvd=False), start=e.start, heading=e.heading)
    assert on.success and not off.success
    assert on.viewpoint_mode == "vvd" and off.viewpoint_mode == "nearest"


def demo_results(noise=None):
    s = bundled_scene("demo_apartment")
    cfg = EpisodeConfig(noise=noise or NoiseConfig())
    return s, [run_episode(s, e.goal, MockReasoner.oracle(), cfg, start=e.start, heading=e.heading)
               for e in s.episodes]


def test_episode_determinism():
    noise = NoiseConfig(p_miss=0.1, sigma_pos=0.02, p_flip=0.05, sigma_emb=0.02, seed=3)
    _, a = demo_results(noise)
    _, b = demo_results(noise)
    assert [json.dumps(r.to_dict(transcript=True), sort_keys=True) for r in a] == \
           [json.dumps(r.to_dict(transcript=True), sort_keys=True) for r in b]


def test_agent_only_on_traversable_cells():
    s, results = demo_results()
    nav = s.nav_mask()
    for r in results:
        for pos in [rec["position"] for rec in r.transcript] + [r.stop_position]:
            assert nav[s.grid.cell_of([pos[0], 0, pos[1]])]


def test_transcript_records_and_shortest_keys():
    _, results = demo_results()
    keys = {"step", "position", "frames", "n_objects", "key_images", "tokens_key", "tokens_full", "request_sha", "action"}
    for r in results:
        assert set(r.shortest_by_d) == {"0.25", "0.35", "0.45", "0.55", "0.65", "0.75", "0.85", "1"}
        for rec in r.transcript:
            assert keys <= set(rec)


def test_sr_monotone_in_d():
    s = bundled_scene("lastmile_alcove")
    cfg = EpisodeConfig(use_vvd=False)
    results = [run_episode(s, e.goal, MockReasoner.oracle(), cfg, start=e.start, heading=e.heading) for e in s.episodes]
    srs = [success_at(results, d)[0] for d in cfg.eval_distances]
    assert srs == sorted(srs)
    for d in cfg.eval_distances:
        sr, spl = success_at(results, d)
        assert spl <= sr + 1e-12


def test_lifelong_keeps_state():
    s = bundled_scene("demo_apartment")
    results = run_lifelong(s, list(range(len(s.goals))), MockReasoner.oracle(), EpisodeConfig())
    assert len(results) == len(s.goals)
    frames = [f for r in results for rec in r.transcript for f in rec["frames"]]
    assert frames == list(range(len(frames)))
    steps = [rec["step"] for r in results for rec in r.transcript]
    assert steps == sorted(steps) and len(set(steps)) == len(steps)
    first_later = [r.transcript[0]["n_objects"] for r in results[1:]]
    last_earlier = [r.transcript[-1]["n_objects"] for r in results[:-1]]
    assert all(a >= b for a, b in zip(first_later, last_earlier))


def test_auto_stop_radius(room):
    script = {"version": 1, "focus": "goal_context", "on_exhausted": "repeat_last",
              "rules": [{"if": "has_frontiers", "then": "nearest_frontier"}]}
    cfg = EpisodeConfig(auto_stop_radius=10.0)
    r = run_episode(room, 0, MockReasoner(script), cfg)
    assert r.stopped and r.steps == 1


def test_config_copy_is_independent():
    a = EpisodeConfig()
    b = copy.deepcopy(a)
    b.vvd["radii"] = [1.0]
    assert a.vvd == {}
