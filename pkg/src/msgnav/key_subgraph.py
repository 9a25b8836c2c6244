"""Compress -> Focus -> Prune: shrink the scene graph to what a goal needs.

``compress`` strips the graph down to ids, categories and an adjacency list;
``focus`` asks the reasoner for the top-k goal-relevant ids; ``greedy_prune``
keeps the relevant objects and their neighbours and picks a small set of
frames that together certify every relevant pair (greedy set cover).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from msgnav.scene_graph import GraphIntegrityError, Pair, SceneGraph

log = logging.getLogger(__name__)


@dataclass
class CompactGraph:
    nodes: list[tuple[int, str]]
    adjacency: dict[int, list[int]]

    def pairs(self) -> set[Pair]:
        return {(a, b) for a, nbrs in self.adjacency.items() for b in nbrs if a < b}

    def ids(self) -> set[int]:
        return {i for i, _ in self.nodes}

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": i, "category": c} for i, c in self.nodes],
            "adjacency": {str(i): nbrs for i, nbrs in self.adjacency.items()},
        }


@dataclass
class KeySubgraph:
    key_objects: set[int] = field(default_factory=set)
    key_edges: dict[Pair, str] = field(default_factory=dict)
    related_objects: set[int] = field(default_factory=set)
    selected_images: list[str] = field(default_factory=list)

    @property
    def n_images(self) -> int:
        return len(set(self.key_edges.values()))


def compress(graph: SceneGraph) -> CompactGraph:
    adjacency: dict[int, list[int]] = {i: [] for i in sorted(graph.objects)}
    for a, b in graph.edge_store.pairs():
        adjacency[a].append(b)
        adjacency[b].append(a)
    for nbrs in adjacency.values():
        nbrs.sort()
    nodes = [(i, graph.objects[i].category) for i in sorted(graph.objects)]
    return CompactGraph(nodes, adjacency)


def fallback_related(compact: CompactGraph, terms: list[str], k: int) -> list[int]:
    """Exact category matches first, then substring matches, each by ascending id."""
    terms = [t.casefold().strip() for t in terms if t and t.strip()]
    exact, partial = [], []
    for oid, cat in compact.nodes:
        c = cat.casefold()
        if any(c == t for t in terms):
            exact.append(oid)
        elif any(c in t or t in c for t in terms):
            partial.append(oid)
    return (exact + partial)[:k]


def focus(compact: CompactGraph, goal, reasoner, k: int = 5, step: int = 0) -> set[int]:
    """Top-k goal-relevant object ids, validated against the compact graph."""
    from msgnav.reasoning import goal_terms

    if k < 1:
        raise ValueError("k must be >= 1")
    request = {"step": step, "k": k, "goal": goal.to_dict(), "compact_graph": compact.to_dict()}
    raw = reasoner.select_related(request)
    known = compact.ids()
    valid: list[int] = []
    for oid in raw:
        if not isinstance(oid, int) or oid not in known:
            log.warning("focus: discarding unknown object id %r", oid)
            continue
        if oid not in valid:
            valid.append(oid)
    valid = valid[:k]
    if not valid:
        valid = fallback_related(compact, goal_terms(goal), k)
    return set(valid)


def greedy_prune(graph: SceneGraph, related: set[int]) -> KeySubgraph:
    """Greedy dynamic allocation: cover every related pair with few frames.

    Filter phase: every pair touching a related object is uncovered, its
    other endpoint becomes a key object. Greedy phase: repeatedly take the
    frame certifying the most uncovered pairs (ties: oldest frame, then
    lowest reference) and assign it to each pair it newly covers.
    """
    missing = set(related) - set(graph.objects)
    if missing:
        raise ValueError(f"related objects not in graph: {sorted(missing)}")
    store = graph.edge_store
    key = KeySubgraph(key_objects=set(related), related_objects=set(related))
    uncovered: set[Pair] = set()
    candidates: set[str] = set()
    for pair, images in store.edges.items():
        if pair[0] in related or pair[1] in related:
            key.key_objects.update(pair)
            uncovered.add(pair)
            candidates |= images
    for pair in uncovered:
        if not any(pair in store.assoc.get(img, ()) for img in store.edges[pair]):
            raise GraphIntegrityError(f"pair {pair} has no certifying image in assoc")

    def rank(img: str) -> tuple:
        gain = len(store.assoc.get(img, set()) & uncovered)
        return (-gain, graph.frame_id_of(img), img)

    while uncovered:
        best = min(candidates, key=rank)
        newly = store.assoc.get(best, set()) & uncovered
        if not newly:
            raise GraphIntegrityError("greedy cover stalled with uncovered pairs")
        for pair in newly:
            key.key_edges[pair] = best
        key.selected_images.append(best)
        uncovered -= newly
        candidates.discard(best)
    return key


def _round(xs, nd=2):
    return [round(float(x), nd) for x in xs]


def assemble_key_prompt(key: KeySubgraph, graph: SceneGraph, frame_store=None) -> dict:
    """Reasoner-facing description of the key subgraph."""
    frames = graph.frames if frame_store is None else frame_store
    objects = []
    for oid in sorted(key.key_objects):
        node = graph.objects[oid]
        objects.append({
            "id": oid,
            "category": node.category,
            "position": _round(node.position),
            "room": node.room,
            "related": oid in key.related_objects,
        })
    by_image: dict[str, list[list[int]]] = {}
    for pair, img in sorted(key.key_edges.items()):
        by_image.setdefault(img, []).append(list(pair))
    images = []
    for img in sorted(by_image, key=lambda r: (_frame_id(frames, r), r)):
        images.append({"image_ref": img, "frame_id": _frame_id(frames, img), "pairs": by_image[img]})
    return {"objects": objects, "images": images}


def _frame_id(frames, ref: str) -> int:
    rec = frames.get(ref)
    if rec is None:
        raise KeyError(f"missing frame {ref} in frame store")
    return rec.frame_id if hasattr(rec, "frame_id") else int(rec["frame_id"])


def full_graph_payload(graph: SceneGraph) -> dict:
    """The uncompressed alternative: every object and every stored edge image."""
    objects = [
        {
            "id": n.id,
            "category": n.category,
            "position": _round(n.position),
            "room": n.room,
        }
        for n in (graph.objects[i] for i in sorted(graph.objects))
    ]
    images = []
    for img in sorted(graph.edge_store.assoc, key=lambda r: (graph.frame_id_of(r), r)):
        images.append({
            "image_ref": img,
            "frame_id": graph.frame_id_of(img),
            "pairs": sorted(list(p) for p in graph.edge_store.assoc[img]),
        })
    return {"objects": objects, "images": images}


def estimate_tokens(payload) -> int:
    """Rough prompt size: serialized characters / 4."""
    return len(json.dumps(payload, sort_keys=True, separators=(",", ":"))) // 4
