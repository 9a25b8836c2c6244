"""Regenerate the bundled scene fixtures under src/msgnav/data/scenes.

Usage: python3 scripts/make_scenes.py [--check]

With --check the script prints, for every goal, the number of ground-truth
viewpoints, the VVD choice and the nearest-reachable fallback, without
writing anything.
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "msgnav" / "data" / "scenes"
WALL_H = 2.5
WALL_T = 0.1


class SceneBuilder:
    def __init__(self, name: str, width: float, depth: float, cell: float = 0.25, **extra):
        self.d = {
            "format_version": 1,
            "name": name,
            "cell_size": cell,
            "origin": [0.0, 0.0],
            "size": [int(round(depth / cell)), int(round(width / cell))],
            "rooms": [],
            "walls": [],
            "objects": [],
            "goals": [],
            "episodes": [],
            **extra,
        }
        self.width, self.depth = width, depth
        self._next = 1

    def room(self, name, x0, z0, x1, z1):
        self.d["rooms"].append({"name": name, "min": [x0, z0], "max": [x1, z1]})

    def box_wall(self, x0, z0, x1, z1, h=WALL_H):
        self.d["walls"].append({"min": [x0, 0.0, z0], "max": [x1, h, z1]})

    def wall_x(self, x, z0, z1, doors=()):
        """Wall along z at fixed x (thickness in +x), with door gaps (z_start, z_end)."""
        for a, b in _split(z0, z1, doors):
            self.box_wall(x, a, x + WALL_T, b)

    def wall_z(self, z, x0, x1, doors=()):
        for a, b in _split(x0, x1, doors):
            self.box_wall(a, z, b, z + WALL_T)

    def outer(self):
        w, dp = self.width, self.depth
        self.wall_z(0.0, 0.0, w)
        self.wall_z(dp - WALL_T, 0.0, w)
        self.wall_x(0.0, 0.0, dp)
        self.wall_x(w - WALL_T, 0.0, dp)

    def obj(self, category, x, z, sx, sz, h, y0=0.0, blocks=True, **kw) -> int:
        oid = self._next
        self._next += 1
        self.d["objects"].append({
            "id": oid,
            "category": category,
            "box": {"min": [x - sx / 2, y0, z - sz / 2], "max": [x + sx / 2, y0 + h, z + sz / 2]},
            "blocks": blocks,
            **kw,
        })
        return oid

    def table(self, category, x, z, sx, sz, h, top=0.05, leg=0.05) -> int:
        oid = self._next
        self._next += 1
        boxes = [{"min": [x - sx / 2, h - top, z - sz / 2], "max": [x + sx / 2, h, z + sz / 2]}]
        for dx in (-1, 1):
            for dz in (-1, 1):
                lx = x + dx * (sx / 2 - leg / 2)
                lz = z + dz * (sz / 2 - leg / 2)
                boxes.append({"min": [lx - leg / 2, 0.0, lz - leg / 2], "max": [lx + leg / 2, h - top, lz + leg / 2]})
        self.d["objects"].append({"id": oid, "category": category, "boxes": boxes, "blocks": True})
        return oid

    def goal_category(self, cat) -> int:
        self.d["goals"].append({"kind": "category", "category": cat})
        return len(self.d["goals"]) - 1

    def goal_language(self, desc, oid) -> int:
        self.d["goals"].append({"kind": "language", "description": desc, "object_id": oid})
        return len(self.d["goals"]) - 1

    def goal_image(self, oid, x, z, heading) -> int:
        self.d["goals"].append({"kind": "image", "object_id": oid, "view": [x, z, heading]})
        return len(self.d["goals"]) - 1

    def episode(self, x, z, goal, heading=0.0):
        self.d["episodes"].append({"start": [x, z], "heading": heading, "goal": goal})


def _split(a, b, doors):
    cuts, cur = [], a
    for s, e in sorted(doors):
        if s > cur:
            cuts.append((cur, s))
        cur = max(cur, e)
    if cur < b:
        cuts.append((cur, b))
    return cuts


# -- regular scenes --------------------------------------------------------

def demo_apartment() -> dict:
    b = SceneBuilder("demo_apartment", 8.0, 6.0)
    b.outer()
    b.room("living room", 0.0, 0.0, 5.0, 6.0)
    b.room("kitchen", 5.0, 0.0, 8.0, 6.0)
    b.wall_x(5.0, 0.0, 6.0, doors=[(2.5, 3.5)])
    couch = b.obj("couch", 2.5, 0.7, 2.0, 0.9, 0.8)
    b.obj("coffee table", 2.5, 1.9, 1.0, 0.6, 0.45)
    lamp = b.obj("lamp", 0.7, 0.7, 0.3, 0.3, 1.5)
    b.obj("armchair", 4.2, 1.4, 0.8, 0.8, 0.8)
    b.obj("cabinet", 2.5, 5.6, 1.4, 0.45, 0.5)
    b.obj("tv", 2.5, 5.6, 1.2, 0.15, 0.7, y0=0.5)
    plant = b.obj("plant", 0.6, 5.3, 0.45, 0.45, 1.0)
    b.obj("bookshelf", 0.4, 3.0, 0.45, 1.2, 1.8)
    b.obj("refrigerator", 7.5, 0.6, 0.7, 0.7, 1.8)
    b.obj("counter", 7.55, 2.6, 0.6, 2.0, 0.9)
    b.obj("sink", 7.55, 2.3, 0.45, 0.5, 0.15, y0=0.9)
    b.obj("microwave", 7.55, 3.2, 0.5, 0.4, 0.3, y0=0.9)
    b.table("dining table", 6.4, 4.6, 1.2, 0.8, 0.75)
    b.obj("chair", 6.4, 3.85, 0.45, 0.45, 0.9)
    b.obj("chair", 6.4, 5.35, 0.45, 0.45, 0.9)
    b.obj("trash can", 5.5, 0.4, 0.35, 0.35, 0.6)
    g0 = b.goal_category("refrigerator")
    g1 = b.goal_language("the lamp in the corner next to the couch", lamp)
    g2 = b.goal_image(plant, 1.6, 4.2, math.atan2(5.3 - 4.2, 0.6 - 1.6))
    for g in (g0, g1, g2):
        b.episode(2.6, 3.1, g, heading=0.0)
    assert couch
    return b.d


def office() -> dict:
    b = SceneBuilder("office", 10.0, 8.0)
    b.outer()
    b.room("open office", 0.0, 0.0, 6.0, 8.0)
    b.room("meeting room", 6.0, 0.0, 10.0, 4.0)
    b.room("print room", 6.0, 4.0, 10.0, 8.0)
    b.wall_x(6.0, 0.0, 8.0, doors=[(1.5, 2.5), (5.5, 6.5)])
    b.wall_z(4.0, 6.1, 10.0)
    for i, (x, z) in enumerate([(1.5, 1.5), (4.0, 1.5), (1.5, 5.5), (4.0, 5.5)]):
        b.obj("desk", x, z, 1.4, 0.7, 0.75)
        b.obj("monitor", x, z + 0.15, 0.6, 0.15, 0.4, y0=0.75)
        b.obj("office chair", x, z - 0.75, 0.55, 0.55, 1.0)
    b.obj("plant", 0.5, 3.5, 0.45, 0.45, 1.1)
    b.obj("trash can", 5.5, 3.5, 0.35, 0.35, 0.6)
    b.obj("bookshelf", 3.0, 7.6, 1.6, 0.4, 1.9)
    b.table("table", 8.0, 2.0, 1.8, 1.0, 0.75)
    for x in (7.5, 8.5):
        b.obj("chair", x, 1.2, 0.45, 0.45, 0.9)
        b.obj("chair", x, 2.8, 0.45, 0.45, 0.9)
    wb = b.obj("whiteboard", 9.8, 2.0, 0.05, 1.6, 1.0, y0=0.9)
    printer = b.obj("printer", 9.5, 7.4, 0.6, 0.5, 0.9)
    b.obj("cabinet", 7.0, 7.6, 1.0, 0.4, 1.2)
    b.obj("box", 8.3, 7.5, 0.5, 0.5, 0.4)
    b.obj("copier", 9.4, 5.0, 0.8, 0.6, 1.2)
    g0 = b.goal_category("printer")
    g1 = b.goal_language("the whiteboard in the meeting room", wb)
    g2 = b.goal_image(printer, 7.5, 6.5, math.atan2(7.4 - 6.5, 9.5 - 7.5))
    for g in (g0, g1, g2):
        b.episode(2.75, 3.5, g)
    for g in (g0, g1):
        b.episode(7.5, 5.25, g, heading=math.pi)
    return b.d


def house() -> dict:
    b = SceneBuilder("house", 12.0, 10.0)
    b.outer()
    b.room("hallway", 0.0, 4.0, 12.0, 6.0)
    b.room("bedroom", 0.0, 6.0, 6.0, 10.0)
    b.room("bathroom", 6.0, 6.0, 12.0, 10.0)
    b.room("living room", 0.0, 0.0, 7.0, 4.0)
    b.room("kitchen", 7.0, 0.0, 12.0, 4.0)
    b.wall_z(4.0, 0.1, 11.9, doors=[(2.5, 3.5), (8.5, 9.5)])
    b.wall_z(6.0, 0.1, 11.9, doors=[(2.5, 3.5), (8.5, 9.5)])
    b.wall_x(6.0, 6.1, 9.9)
    b.wall_x(7.0, 0.1, 3.9, doors=[(1.5, 2.5)])
    bed = b.obj("bed", 1.5, 8.5, 2.0, 2.2, 0.6)
    b.obj("nightstand", 3.0, 9.4, 0.5, 0.4, 0.55)
    guitar = b.obj("guitar", 4.5, 7.2, 0.4, 0.15, 1.0)
    b.obj("dresser", 5.0, 9.6, 1.2, 0.45, 0.9)
    b.obj("toilet", 11.4, 9.3, 0.45, 0.7, 0.8)
    b.obj("sink", 9.5, 9.6, 0.6, 0.45, 0.85)
    b.obj("bathtub", 7.2, 8.6, 0.8, 1.8, 0.55)
    b.obj("towel", 10.5, 9.85, 0.5, 0.05, 0.6, y0=0.8)
    b.obj("couch", 3.0, 0.6, 2.2, 0.9, 0.8)
    b.obj("coffee table", 3.0, 1.8, 1.0, 0.6, 0.45)
    b.obj("tv", 3.0, 3.75, 1.2, 0.15, 0.7, y0=0.5)
    b.obj("armchair", 5.8, 1.2, 0.8, 0.8, 0.8)
    b.obj("lamp", 0.5, 0.5, 0.3, 0.3, 1.5)
    b.obj("refrigerator", 11.5, 0.6, 0.7, 0.7, 1.8)
    b.obj("counter", 9.5, 0.45, 2.0, 0.6, 0.9)
    mw = b.obj("microwave", 9.9, 0.45, 0.5, 0.4, 0.3, y0=0.9)
    b.obj("oven", 8.1, 0.45, 0.6, 0.6, 0.9)
    b.table("dining table", 9.5, 2.6, 1.2, 0.8, 0.75)
    b.obj("stool", 11.0, 3.3, 0.35, 0.35, 0.65)
    b.obj("shoe rack", 0.6, 5.0, 0.4, 1.0, 0.5)
    b.obj("plant", 11.4, 5.0, 0.45, 0.45, 1.0)
    g0 = b.goal_category("toilet")
    g1 = b.goal_language("the guitar leaning near the bed", guitar)
    g2 = b.goal_image(mw, 9.9, 2.0, -math.pi / 2)
    g3 = b.goal_category("bed")
    for g in (g0, g1, g2, g3):
        b.episode(3.0, 5.0, g)
    for g in (g0, g3):
        b.episode(10.0, 7.75, g, heading=math.pi)
    assert bed
    return b.d


# -- last-mile scenes ------------------------------------------------------

LASTMILE = dict(view_radius=2.0, gt_visibility_min=0.5)


def lastmile_lwall() -> dict:
    """A lamp tucked into the inside corner of an L-shaped wall behind a low bed.

    The nearest reachable cell is on the far side of the wall; the open side is
    only reachable further away.
    """
    b = SceneBuilder("lastmile_lwall", 10.0, 8.0, **LASTMILE)
    b.outer()
    b.room("bedroom", 0.0, 0.0, 10.0, 8.0)
    # the L: vertical arm at x=5.0 (z 1.0..4.0), horizontal arm at z=4.0 (x 3.0..5.1)
    b.box_wall(5.0, 1.0, 5.1, 4.1)
    b.box_wall(3.0, 4.0, 5.0, 4.1)
    lamp = b.obj("lamp", 4.7, 3.6, 0.3, 0.3, 1.6)
    b.obj("bed", 3.65, 3.2, 1.3, 1.4, 0.5)
    b.obj("dresser", 1.0, 7.4, 1.2, 0.5, 0.9)
    # open-side control: a guitar in plain view
    guitar = b.obj("guitar", 8.5, 6.8, 0.4, 0.15, 1.0)
    b.obj("nightstand", 1.0, 1.0, 0.5, 0.4, 0.55)
    g0 = b.goal_category("lamp")
    g1 = b.goal_category("guitar")
    for x, z in [(1.5, 2.5), (1.5, 4.0), (2.0, 1.0), (2.5, 5.5), (1.0, 3.0), (3.5, 1.0)]:
        b.episode(x, z, g0)
    for x, z in [(6.5, 5.0), (7.0, 3.0), (5.5, 6.5), (8.5, 4.5), (6.0, 2.0), (9.0, 2.0)]:
        b.episode(x, z, g1)
    assert lamp and guitar
    return b.d


def lastmile_alcove() -> dict:
    """A trash can at the back of a narrow alcove; a corridor runs behind its back wall."""
    b = SceneBuilder("lastmile_alcove", 10.0, 11.0, **LASTMILE)
    b.outer()
    b.room("lobby", 0.0, 0.0, 10.0, 8.0)
    b.room("corridor", 0.0, 9.6, 10.0, 11.0)
    # solid block with a 0.7 m alcove, back wall at z 9.5..9.6
    b.box_wall(0.1, 8.0, 4.65, 9.6)
    b.box_wall(5.35, 8.0, 8.5, 9.6)
    b.box_wall(4.65, 9.5, 5.35, 9.6)
    # the corridor connects to the lobby past the block's east end
    b.box_wall(9.5, 8.0, 9.9, 9.6)
    can = b.obj("trash can", 5.0, 9.25, 0.3, 0.3, 0.6)
    b.obj("bench", 2.0, 7.4, 1.5, 0.45, 0.45)
    b.obj("plant", 0.5, 0.5, 0.45, 0.45, 1.1)
    ctrl = b.obj("backpack", 7.0, 2.0, 0.35, 0.25, 0.45)
    b.obj("couch", 3.0, 0.7, 2.0, 0.9, 0.8)
    g0 = b.goal_category("trash can")
    g1 = b.goal_category("backpack")
    for x, z in [(5.0, 5.0), (3.0, 5.0), (7.0, 5.5), (2.0, 3.5), (8.0, 4.0), (5.0, 3.0)]:
        b.episode(x, z, g0)
    for x, z in [(4.0, 3.0), (8.5, 1.0), (6.0, 5.0), (5.0, 2.5), (8.0, 4.0), (3.5, 4.5)]:
        b.episode(x, z, g1)
    assert can and ctrl
    return b.d


def lastmile_table() -> dict:
    """A backpack under a desk-height table: close cells look at the tabletop."""
    b = SceneBuilder("lastmile_table", 10.0, 8.0, **LASTMILE)
    b.outer()
    b.room("study", 0.0, 0.0, 10.0, 8.0)
    b.table("table", 5.0, 4.0, 1.0, 1.0, 0.7)
    bag = b.obj("backpack", 5.0, 4.0, 0.3, 0.3, 0.3)
    b.obj("bookshelf", 0.4, 4.0, 0.45, 1.6, 1.9)
    b.obj("chair", 8.0, 6.5, 0.45, 0.45, 0.9)
    ctrl = b.obj("suitcase", 2.0, 1.0, 0.5, 0.3, 0.6)
    g0 = b.goal_category("backpack")
    g1 = b.goal_category("suitcase")
    for x, z in [(2.0, 4.0), (8.0, 4.0), (5.0, 1.0), (5.0, 7.0), (2.0, 7.0), (8.5, 1.5)]:
        b.episode(x, z, g0)
    for x, z in [(4.0, 2.5), (2.0, 3.0), (4.5, 1.0), (6.0, 2.0), (3.5, 5.0), (1.0, 2.5)]:
        b.episode(x, z, g1)
    assert bag and ctrl
    return b.d


BUILDERS = [demo_apartment, office, house, lastmile_lwall, lastmile_alcove, lastmile_table]


def check(d: dict) -> None:
    from msgnav.geometry import PointCloud
    from msgnav.sim.episode import scene_planner
    from msgnav.sim.scene import scene_from_dict
    from msgnav.viewpoint import NoViewpointError, decide_viewpoint, visibility_score

    scene = scene_from_dict(d)
    scene.validate()
    planner = scene_planner(scene)
    print(f"{scene.name}: grid {scene.grid.shape}, {len(scene.objects)} objects, "
          f"{int(scene.nav_mask().sum())} traversable cells")
    for gi, g in enumerate(scene.goals):
        starts = [e for e in scene.episodes if e.goal == gi]
        start = scene.grid.cell_of([starts[0].start[0], 0, starts[0].start[1]]) if starts else None
        if start is None or not scene.nav_mask()[start]:
            print(f"  goal {gi}: first start not traversable")
            continue
        reach, _ = planner.field(start)

        def can_stand(pos):
            c = scene.grid.cell_of(pos)
            return scene.grid.in_bounds(*c) and bool(np.isfinite(reach[c]))

        for oid in g.object_ids:
            obj = scene.object(oid)
            vps = scene.gt_viewpoints(oid)
            occ = PointCloud(scene.scene_points({oid}))
            try:
                best = decide_viewpoint(obj.points, occ, scene.grid, scene.vvd_params(), traversable=can_stand)
                bc = scene.grid.cell_of(best.position)
                dv = scene.grid.cell_size * np.hypot(vps[:, 0] - bc[0], vps[:, 1] - bc[1]).min()
                vvd = f"vvd r={best.ring_radius} k={best.angle_index} score={best.score:.2f} cell={bc} dist_to_gt={dv:.2f}"
            except NoViewpointError:
                vvd = "vvd: none"
            near = planner.nearest_reachable(start, (obj.center[0], obj.center[2]), scene.grid.origin)
            nc = scene.grid.center(*near, y=scene.camera_height)
            ns = visibility_score(nc, obj.points, occ, scene.tau)
            dn = scene.grid.cell_size * np.hypot(vps[:, 0] - near[0], vps[:, 1] - near[1]).min()
            print(f"  goal {gi} ({g.kind}) obj {oid} {obj.category}: {len(vps)} gt vps; {vvd}; "
                  f"nearest {near} score={ns:.2f} dist_to_gt={dn:.2f}")
        bad = [e.start for e in scene.episodes if e.goal == gi
               and not scene.nav_mask()[scene.grid.cell_of([e.start[0], 0, e.start[1]])]]
        if bad:
            print(f"    starts not traversable (will snap): {bad}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--check", action="store_true")
    ap.add_argument("--only", default=None)
    args = ap.parse_args()
    for build in BUILDERS:
        d = build()
        if args.only and d["name"] != args.only:
            continue
        if args.check:
            check(d)
            continue
        OUT.mkdir(parents=True, exist_ok=True)
        path = OUT / f"{d['name']}.json"
        path.write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
