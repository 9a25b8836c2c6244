"""Multi-modal scene graph: tracked objects plus image-certified object pairs.

Edges carry no relation text. Each unordered object pair maps to the set of
frame references in which both objects were seen close together, and the
reverse map (frame -> pairs) is kept in lockstep so one frame can later be
chosen to certify many pairs at once.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from msgnav.geometry import as_points, centroid

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

Pair = tuple[int, int]


class GraphIntegrityError(RuntimeError):
    pass


class FrameOrderError(ValueError):
    pass


@dataclass
class GraphConfig:
    adjacency_threshold: float = 2.0
    iou_min: float = 0.25
    match_dist: float = 0.5
    sim_min: float = 0.8
    min_confidence: float = 0.3
    voxel_size: float = 0.05
    embedding_dim: int = 32


@dataclass
class Detection:
    """One detector output for a frame. ``bbox`` defaults to the cloud extent."""

    category: str
    confidence: float
    cloud: np.ndarray
    embedding: np.ndarray
    bbox: tuple[np.ndarray, np.ndarray] | None = None
    room: str = ""
    mask_ref: str | None = None


@dataclass
class FrameObservation:
    frame_id: int
    image_ref: str
    detections: list[Detection] = field(default_factory=list)
    timestamp: float = 0.0
    camera_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    camera_heading: float = 0.0


@dataclass
class FrameObject:
    """A frame-local object before it is resolved to a global id."""

    category: str
    position: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    cloud: np.ndarray
    embedding: np.ndarray
    room: str
    confidence: float
    mask_ref: str | None = None


@dataclass
class ObjectNode:
    id: int
    category: str
    position: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    cloud: np.ndarray
    embedding: np.ndarray
    room: str
    mask_ref: str | None = None
    n_obs: int = 1
    # category -> [vote count, last frame id voting for it]
    votes: dict[str, list[int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "position": self.position.tolist(),
            "bbox": {"min": self.bbox_min.tolist(), "max": self.bbox_max.tolist()},
            "mask_ref": self.mask_ref,
            "cloud": self.cloud.tolist(),
            "embedding": self.embedding.tolist(),
            "room": self.room,
            "n_obs": self.n_obs,
            "votes": {k: list(v) for k, v in sorted(self.votes.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectNode":
        return cls(
            id=int(d["id"]),
            category=d["category"],
            position=np.array(d["position"], dtype=np.float64),
            bbox_min=np.array(d["bbox"]["min"], dtype=np.float64),
            bbox_max=np.array(d["bbox"]["max"], dtype=np.float64),
            cloud=as_points(d["cloud"]),
            embedding=np.array(d["embedding"], dtype=np.float64),
            room=d["room"],
            mask_ref=d.get("mask_ref"),
            n_obs=int(d["n_obs"]),
            votes={k: [int(v[0]), int(v[1])] for k, v in d["votes"].items()},
        )


@dataclass
class FrameRecord:
    """Stored once per frame; edges refer to it by ``image_ref``."""

    image_ref: str
    frame_id: int
    timestamp: float
    camera_position: list[float]
    camera_heading: float
    object_ids: list[int]


def _pair(a: int, b: int) -> Pair:
    if a == b:
        raise GraphIntegrityError(f"self pair ({a}, {a})")
    return (a, b) if a < b else (b, a)


class EdgeStore:
    """pair -> image refs and image ref -> pairs, always mutually consistent."""

    def __init__(self):
        self.edges: dict[Pair, set[str]] = {}
        self.assoc: dict[str, set[Pair]] = {}

    def __len__(self) -> int:
        return len(self.edges)

    def add(self, pair: Pair, image_ref: str) -> None:
        pair = _pair(*pair)
        self.edges.setdefault(pair, set()).add(image_ref)
        self.assoc.setdefault(image_ref, set()).add(pair)

    def pairs(self) -> list[Pair]:
        return sorted(self.edges)

    def check(self, object_ids: Iterable[int] | None = None) -> None:
        ids = None if object_ids is None else set(object_ids)
        for pair, images in self.edges.items():
            if pair[0] >= pair[1]:
                raise GraphIntegrityError(f"pair {pair} not ordered or self pair")
            if not images:
                raise GraphIntegrityError(f"pair {pair} has no images")
            if ids is not None and not (pair[0] in ids and pair[1] in ids):
                raise GraphIntegrityError(f"pair {pair} references unknown object")
            for img in images:
                if pair not in self.assoc.get(img, ()):
                    raise GraphIntegrityError(f"assoc[{img}] missing {pair}")
        for img, pairs in self.assoc.items():
            if not pairs:
                raise GraphIntegrityError(f"image {img} certifies no pair")
            for pair in pairs:
                if img not in self.edges.get(pair, ()):
                    raise GraphIntegrityError(f"edges[{pair}] missing {img}")


def voxel_dedup(points: np.ndarray, size: float) -> np.ndarray:
    """Keep the first point falling in each voxel, preserving order."""
    if len(points) == 0:
        return points
    keys = np.floor(points / size).astype(np.int64)
    rel = keys - keys.min(axis=0)
    dims = rel.max(axis=0) + 1
    if float(dims[0]) * float(dims[1]) * float(dims[2]) < 2.0 ** 62:
        # one packed code per voxel makes the unique a flat sort
        codes = (rel[:, 0] * dims[1] + rel[:, 1]) * dims[2] + rel[:, 2]
        _, first = np.unique(codes, return_index=True)
    else:
        _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def box_iou(amin, amax, bmin, bmax) -> np.ndarray:
    """3D axis-aligned IoU; broadcasts over leading dimensions."""
    inter = np.clip(np.minimum(amax, bmax) - np.maximum(amin, bmin), 0.0, None).prod(axis=-1)
    va = np.clip(amax - amin, 0.0, None).prod(axis=-1)
    vb = np.clip(bmax - bmin, 0.0, None).prod(axis=-1)
    union = va + vb - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    denom = na * nb
    return np.where(denom > 0, (a * b).sum(axis=-1) / np.where(denom > 0, denom, 1.0), 0.0)


def extract_frame_objects(obs: FrameObservation, vocab, config: GraphConfig) -> tuple[list[FrameObject], int]:
    """Turn detections into frame-local objects.

    Detections below ``min_confidence`` or outside ``vocab`` are skipped;
    the second return value counts the vocabulary drops.
    """
    out: list[FrameObject] = []
    dropped = 0
    for det in obs.detections:
        if det.confidence < config.min_confidence:
            continue
        category = det.category.casefold()
        if category not in vocab:
            dropped += 1
            continue
        cloud = voxel_dedup(as_points(det.cloud), config.voxel_size)
        if len(cloud) == 0:
            raise ValueError(f"frame {obs.frame_id}: detection with empty cloud")
        if det.bbox is None:
            bmin, bmax = det.cloud.min(axis=0), det.cloud.max(axis=0)
        else:
            bmin, bmax = (np.asarray(b, dtype=np.float64) for b in det.bbox)
        emb = np.asarray(det.embedding, dtype=np.float64)
        if emb.shape != (config.embedding_dim,):
            raise ValueError(f"embedding dimension {emb.shape} != {config.embedding_dim}")
        out.append(FrameObject(
            category=category,
            position=centroid(cloud),
            bbox_min=bmin,
            bbox_max=bmax,
            cloud=cloud,
            embedding=emb,
            room=det.room,
            confidence=float(det.confidence),
            mask_ref=det.mask_ref,
        ))
    return out, dropped


@dataclass
class MatchResult:
    matches: list[tuple[int, int]]  # (frame object index, existing node id)
    unmatched: list[int]


def match_objects(frame_objs: list[FrameObject], graph: "SceneGraph") -> MatchResult:
    """Associate frame objects with existing nodes.

    A pair is admissible when (same category or cosine >= sim_min) and
    (IoU >= iou_min or centroid distance <= match_dist). Admissible pairs are
    taken greedily by score ``0.5 * IoU + 0.5 * cosine``, one node per frame
    object and vice versa.
    """
    cfg = graph.config
    if not frame_objs or not graph.objects:
        return MatchResult([], list(range(len(frame_objs))))
    nodes = [graph.objects[i] for i in sorted(graph.objects)]
    ids = np.array([n.id for n in nodes])
    nmin = np.array([n.bbox_min for n in nodes])
    nmax = np.array([n.bbox_max for n in nodes])
    npos = np.array([n.position for n in nodes])
    nemb = np.array([n.embedding for n in nodes])
    ncat = np.array([n.category for n in nodes])

    fmin = np.array([f.bbox_min for f in frame_objs])[:, None, :]
    fmax = np.array([f.bbox_max for f in frame_objs])[:, None, :]
    fpos = np.array([f.position for f in frame_objs])[:, None, :]
    femb = np.array([f.embedding for f in frame_objs])[:, None, :]
    fcat = np.array([f.category for f in frame_objs])[:, None]

    iou = box_iou(fmin, fmax, nmin[None], nmax[None])
    cos = _cosine(femb, nemb[None])
    dist = np.sqrt(((fpos - npos[None]) ** 2).sum(axis=-1))
    semantic = (fcat == ncat[None]) | (cos >= cfg.sim_min)
    spatial = (iou >= cfg.iou_min) | (dist <= cfg.match_dist)
    ok = semantic & spatial
    score = 0.5 * iou + 0.5 * cos

    fi, nj = np.nonzero(ok)
    # descending score; ties by frame index then node id for a total order
    order = np.lexsort((ids[nj], fi, -score[fi, nj]))
    used_f: set[int] = set()
    used_n: set[int] = set()
    matches = []
    for k in order:
        f, n = int(fi[k]), int(ids[nj[k]])
        if f in used_f or n in used_n:
            continue
        used_f.add(f)
        used_n.add(n)
        matches.append((f, n))
    matches.sort()
    unmatched = [i for i in range(len(frame_objs)) if i not in used_f]
    return MatchResult(matches, unmatched)


def _majority(votes: dict[str, list[int]]) -> str:
    return max(votes.items(), key=lambda kv: (kv[1][0], kv[1][1], kv[0]))[0]


def merge_objects(result: MatchResult, frame_objs: list[FrameObject], graph: "SceneGraph", frame_id: int) -> list[int]:
    """Fold matched frame objects into their nodes and insert the rest.

    Returns the global id of every frame object, in frame order.
    """
    cfg = graph.config
    resolved: list[int] = [-1] * len(frame_objs)
    for fi, node_id in result.matches:
        node = graph.objects.get(node_id)
        if node is None:
            raise GraphIntegrityError(f"match references missing object {node_id}")
        f = frame_objs[fi]
        node.cloud = voxel_dedup(np.concatenate([node.cloud, f.cloud]), cfg.voxel_size)
        node.position = centroid(node.cloud)
        node.embedding = (node.n_obs * node.embedding + f.embedding) / (node.n_obs + 1)
        node.bbox_min = np.minimum(node.bbox_min, f.bbox_min)
        node.bbox_max = np.maximum(node.bbox_max, f.bbox_max)
        vote = node.votes.setdefault(f.category, [0, frame_id])
        vote[0] += 1
        vote[1] = frame_id
        node.category = _majority(node.votes)
        node.room = f.room or node.room
        node.mask_ref = f.mask_ref
        node.n_obs += 1
        resolved[fi] = node_id
    for fi in result.unmatched:
        f = frame_objs[fi]
        node = ObjectNode(
            id=graph.next_id,
            category=f.category,
            position=centroid(f.cloud),
            bbox_min=f.bbox_min.copy(),
            bbox_max=f.bbox_max.copy(),
            cloud=f.cloud.copy(),
            embedding=f.embedding.copy(),
            room=f.room,
            mask_ref=f.mask_ref,
            votes={f.category: [1, frame_id]},
        )
        graph.objects[node.id] = node
        graph.next_id += 1
        resolved[fi] = node.id
    return resolved


def co_occurring_pairs(ids: list[int], positions: list[np.ndarray], theta: float) -> set[Pair]:
    """Distinct id pairs seen in one frame whose frame positions are within ``theta``."""
    pairs: set[Pair] = set()
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            if ids[i] == ids[j]:
                continue
            if float(np.linalg.norm(positions[i] - positions[j])) <= theta:
                pairs.add(_pair(ids[i], ids[j]))
    return pairs


def update_edges(pairs: Iterable[Pair], image_ref: str, store: EdgeStore) -> EdgeStore:
    for pair in sorted(pairs):
        store.add(pair, image_ref)
    return store


class SceneGraph:
    def __init__(self, config: GraphConfig | None = None):
        self.config = config or GraphConfig()
        self.objects: dict[int, ObjectNode] = {}
        self.edge_store = EdgeStore()
        self.frames: dict[str, FrameRecord] = {}
        self.next_id = 1
        self.last_frame_id: int | None = None

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def n_edges(self) -> int:
        return len(self.edge_store)

    def update(self, obs: FrameObservation, vocab) -> dict:
        """Integrate one frame. Returns per-frame bookkeeping for transcripts."""
        if self.last_frame_id is not None and obs.frame_id <= self.last_frame_id:
            raise FrameOrderError(f"non-monotone frame: {obs.frame_id} after {self.last_frame_id}")
        frame_objs, dropped = extract_frame_objects(obs, vocab, self.config)
        result = match_objects(frame_objs, self)
        ids = merge_objects(result, frame_objs, self, obs.frame_id)
        pairs = co_occurring_pairs(ids, [f.position for f in frame_objs], self.config.adjacency_threshold)
        update_edges(pairs, obs.image_ref, self.edge_store)
        if pairs:
            self.frames[obs.image_ref] = FrameRecord(
                image_ref=obs.image_ref,
                frame_id=obs.frame_id,
                timestamp=float(obs.timestamp),
                camera_position=[float(x) for x in obs.camera_position],
                camera_heading=float(obs.camera_heading),
                object_ids=sorted(set(ids)),
            )
        self.last_frame_id = obs.frame_id
        return {
            "frame_id": obs.frame_id,
            "detections": len(obs.detections),
            "kept": len(frame_objs),
            "dropped_vocab": dropped,
            "matched": len(result.matches),
            "inserted": len(result.unmatched),
            "pairs": len(pairs),
            "object_ids": sorted(set(ids)),
        }

    def frame_id_of(self, image_ref: str) -> int:
        rec = self.frames.get(image_ref)
        if rec is None:
            raise KeyError(f"missing frame {image_ref}")
        return rec.frame_id

    def validate(self) -> None:
        """Full-scan integrity check; raises :class:`GraphIntegrityError`."""
        self.edge_store.check(self.objects)
        for img in self.edge_store.assoc:
            if img not in self.frames:
                raise GraphIntegrityError(f"image {img} not in frame store")
        for oid, node in self.objects.items():
            if oid != node.id or oid >= self.next_id:
                raise GraphIntegrityError(f"bad object id {oid}")
            if not np.allclose(node.position, centroid(node.cloud), atol=1e-6, rtol=0):
                raise GraphIntegrityError(f"object {oid} position drifted from centroid")
            if node.embedding.shape != (self.config.embedding_dim,):
                raise GraphIntegrityError(f"object {oid} embedding dimension")

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config": asdict(self.config),
            "next_id": self.next_id,
            "last_frame_id": self.last_frame_id,
            "objects": [self.objects[i].to_dict() for i in sorted(self.objects)],
            "edges": [[a, b, sorted(imgs)] for (a, b), imgs in sorted(self.edge_store.edges.items())],
            "assoc": {img: sorted([list(p) for p in pairs]) for img, pairs in sorted(self.edge_store.assoc.items())},
            "frames": {ref: asdict(rec) for ref, rec in sorted(self.frames.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneGraph":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported graph format version {d.get('format_version')}")
        g = cls(GraphConfig(**d["config"]))
        g.next_id = int(d["next_id"])
        g.last_frame_id = d["last_frame_id"]
        for od in d["objects"]:
            node = ObjectNode.from_dict(od)
            g.objects[node.id] = node
        for a, b, imgs in d["edges"]:
            g.edge_store.edges[(int(a), int(b))] = set(imgs)
        for img, pairs in d["assoc"].items():
            g.edge_store.assoc[img] = {(int(a), int(b)) for a, b in pairs}
        for ref, rec in d["frames"].items():
            g.frames[ref] = FrameRecord(**rec)
        return g

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SceneGraph":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def summary(self) -> dict:
        sizes = [len(v) for v in self.edge_store.edges.values()]
        hist: dict[str, int] = {}
        for s in sizes:
            hist[str(s)] = hist.get(str(s), 0) + 1
        return {
            "n_objects": self.n_objects,
            "n_edges": self.n_edges,
            "n_images": len(self.edge_store.assoc),
            "edge_image_histogram": dict(sorted(hist.items(), key=lambda kv: int(kv[0]))),
        }


def update(graph: SceneGraph, obs: FrameObservation, vocab) -> SceneGraph:
    graph.update(obs, vocab)
    return graph
