"""Shared builders for tests."""

import itertools

import numpy as np

from msgnav.scene_graph import FrameRecord, ObjectNode, SceneGraph

CATS = ["chair", "table", "bed", "sofa", "lamp", "tv", "sink", "oven"]


def node(i, cat="chair"):
    p = np.array([float(i), 0.0, 0.0])
    return ObjectNode(i, cat, p, p - 0.1, p + 0.1, p[None, :].copy(), np.zeros(32), "room")


def make_graph(assoc: dict[str, list[tuple[int, int]]], n_objects=None, cats=None) -> SceneGraph:
    """Graph built straight from an image -> pairs map; frame ids follow insertion order."""
    g = SceneGraph()
    ids = {i for pairs in assoc.values() for p in pairs for i in p}
    top = max(ids | {n_objects or 0})
    for i in range(1, top + 1):
        g.objects[i] = node(i, (cats or {}).get(i, CATS[i % len(CATS)]))
    g.next_id = top + 1
    for fid, (img, pairs) in enumerate(assoc.items()):
        for p in pairs:
            g.edge_store.add(p, img)
        g.frames[img] = FrameRecord(img, fid, 0.0, [0, 0, 0], 0.0, sorted({i for p in pairs for i in p}))
    g.validate()
    return g


def brute_force_min_cover(g: SceneGraph, universe: set) -> int:
    images = sorted({i for p in universe for i in g.edge_store.edges[p]})
    sets = [g.edge_store.assoc[i] & universe for i in images]
    for r in range(0, len(images) + 1):
        for combo in itertools.combinations(range(len(images)), r):
            covered = set().union(*(sets[c] for c in combo)) if combo else set()
            if covered >= universe:
                return r
    raise AssertionError("no cover")


def random_instance(rng, max_pairs=12, max_images=12):
    n_obj = int(rng.integers(2, 8))
    all_pairs = list(itertools.combinations(range(1, n_obj + 1), 2))
    n_pairs = int(rng.integers(1, min(max_pairs, len(all_pairs)) + 1))
    pairs = [all_pairs[i] for i in rng.choice(len(all_pairs), n_pairs, replace=False)]
    n_img = int(rng.integers(1, max_images + 1))
    assoc = {f"img{j:02d}": [] for j in range(n_img)}
    for p in pairs:  # every pair gets at least one image
        assoc[f"img{int(rng.integers(n_img)):02d}"].append(p)
    for j in range(n_img):
        extra = rng.random(len(pairs)) < 0.3
        assoc[f"img{j:02d}"].extend(p for p, e in zip(pairs, extra) if e)
    assoc = {k: sorted(set(v)) for k, v in assoc.items() if v}
    g = make_graph(assoc, n_obj)
    related = {int(x) for x in rng.choice(np.arange(1, n_obj + 1), int(rng.integers(1, n_obj + 1)), replace=False)}
    return g, related


# filled by the acceptance suite, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
