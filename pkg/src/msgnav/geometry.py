"""Point-cloud and occupancy-grid primitives.

Coordinates are metric with y as the vertical axis; the ground plane is (x, z).
Points are plain ``numpy`` arrays of shape ``(3,)`` and clouds are ``(N, 3)``
float64 arrays wrapped in :class:`PointCloud`, which lazily builds one voxel
index per requested cell size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

FREE = 0
OCCUPIED = 1
UNKNOWN = 2


def point3(x: float, y: float, z: float) -> np.ndarray:
    p = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"non-finite point {p}")
    return p


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 3))
    arr = arr.reshape(-1, 3)
    if not np.all(np.isfinite(arr)):
        raise ValueError("point cloud contains non-finite coordinates")
    return arr


def _distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.sqrt(((points - q) ** 2).sum(axis=1))


class VoxelIndex:
    """Uniform voxel hash over a static point set.

    Voxel keys are packed into a single int64 code and the points are sorted
    by code, so a voxel lookup is a pair of ``searchsorted`` calls. That keeps
    batched radius queries fully vectorized.
    """

    def __init__(self, points: np.ndarray, cell: float):
        if cell <= 0:
            raise ValueError("voxel cell size must be positive")
        self.cell = float(cell)
        self.points = points
        keys = np.floor(points / self.cell).astype(np.int64)
        self._lo = keys.min(axis=0)
        self._dims = keys.max(axis=0) - self._lo + 1
        codes = self._encode(keys - self._lo)
        order = np.argsort(codes, kind="stable")
        self._codes = codes[order]
        self._sorted = points[order]
        self._near: dict[float, tuple | None] = {}

    # dense prefilter is skipped above this many voxels
    DENSE_LIMIT = 30_000_000

    def _fine_masks(self, radius: float):
        """Occupancy on a grid of cell radius/2 and its dilation by two cells.

        A query in an occupied fine cell is within 0.87 * radius of a point, so it
        is a sure hit. A query whose fine cell is outside the dilation has no
        point within radius. Returns None when the grid would be too large.
        """
        if radius not in self._near:
            f = radius / 2
            keys = np.floor(self.points / f).astype(np.int64)
            lo = keys.min(axis=0) - 2
            dims = keys.max(axis=0) - lo + 3
            if float(np.prod(dims.astype(np.float64))) > self.DENSE_LIMIT:
                self._near[radius] = None
            else:
                occ = np.zeros(tuple(dims), dtype=bool)
                rel = keys - lo
                occ[rel[:, 0], rel[:, 1], rel[:, 2]] = True
                near = ndimage.maximum_filter(occ, size=5)
                self._near[radius] = (f, lo, occ, near)
        return self._near[radius]

    def _encode(self, rel: np.ndarray) -> np.ndarray:
        return (rel[..., 0] * self._dims[1] + rel[..., 1]) * self._dims[2] + rel[..., 2]

    def _gather(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (start, count) into the sorted arrays for each voxel key."""
        rel = keys - self._lo
        inside = np.all((rel >= 0) & (rel < self._dims), axis=-1)
        codes = np.where(inside, self._encode(np.where(inside[..., None], rel, 0)), -1)
        start = np.searchsorted(self._codes, codes, side="left")
        stop = np.searchsorted(self._codes, codes, side="right")
        count = np.where(inside, stop - start, 0)
        return start, count

    def classify(self, queries: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Cheap split of queries into sure hits and ones that still need :meth:`exact_within`."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        masks = self._fine_masks(radius)
        if masks is None:
            return np.zeros(len(queries), dtype=bool), np.ones(len(queries), dtype=bool)
        f, lo, occ, near = masks
        rel = np.floor(queries / f).astype(np.int64) - lo
        inside = np.all((rel >= 0) & (rel < near.shape), axis=1)
        sure = np.zeros(len(queries), dtype=bool)
        maybe = np.zeros(len(queries), dtype=bool)
        cand = np.flatnonzero(inside)
        rc = rel[cand]
        s = occ[rc[:, 0], rc[:, 1], rc[:, 2]]
        sure[cand[s]] = True
        maybe[cand[~s & near[rc[:, 0], rc[:, 1], rc[:, 2]]]] = True
        return sure, maybe

    def any_within(self, queries: np.ndarray, radius: float) -> np.ndarray:
        """Boolean mask: does any indexed point lie strictly closer than ``radius``?"""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        hit, maybe = self.classify(queries, radius)
        if maybe.any():
            hit[maybe] = self.exact_within(queries[maybe], radius)
        return hit

    def exact_within(self, queries: np.ndarray, radius: float, chunk: int = 16384) -> np.ndarray:
        """Voxel-neighbourhood scan with exact distances, no prefilter."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(queries) > chunk:
            return np.concatenate([
                self.exact_within(queries[i:i + chunk], radius, chunk) for i in range(0, len(queries), chunk)
            ])
        reach = max(1, math.ceil(radius / self.cell))
        return self._exact_within(queries, np.floor(queries / self.cell).astype(np.int64), reach, radius)

    def _exact_within(self, queries: np.ndarray, qkeys: np.ndarray, reach: int, radius: float) -> np.ndarray:
        hit = np.zeros(len(queries), dtype=bool)
        r = np.arange(-reach, reach + 1)
        offsets = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        start, count = self._gather(qkeys[:, None, :] + offsets[None, :, :])
        start, count = start.ravel(), count.ravel()
        total = int(count.sum())
        if total == 0:
            return hit
        owner = np.repeat(np.repeat(np.arange(len(queries)), len(offsets)), count)
        first = np.repeat(start, count)
        run_start = np.repeat(np.cumsum(count) - count, count)
        idx = first + (np.arange(total) - run_start)
        d2 = ((self._sorted[idx] - queries[owner]) ** 2).sum(axis=1)
        close = d2 < radius * radius
        hit[owner[close]] = True
        return hit

    def nearest_distance(self, q: np.ndarray) -> float:
        """Exact nearest-point distance by expanding voxel shells."""
        q = np.asarray(q, dtype=np.float64)
        qkey = np.floor(q / self.cell).astype(np.int64)
        span = int(np.max(np.maximum(np.abs(qkey - self._lo), np.abs(qkey - (self._lo + self._dims - 1)))))
        best = math.inf
        m = 0
        while True:
            if (2 * m + 1) ** 3 > 4 * len(self.points) or m >= span:
                return float(_distances(self.points, q).min())
            r = np.arange(-m, m + 1)
            block = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
            start, count = self._gather(qkey + block)
            chunks = [self._sorted[s:s + c] for s, c in zip(start, count) if c]
            if chunks:
                best = float(_distances(np.concatenate(chunks), q).min())
            # anything outside the block is at least m cells away from q
            if best <= m * self.cell:
                return best
            m += 1


class PointCloud:
    """An ordered point set plus lazily built voxel indices."""

    def __init__(self, points=()):
        self.points = as_points(points)
        self._indices: dict[float, VoxelIndex] = {}

    def __len__(self) -> int:
        return len(self.points)

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)})"

    def index(self, cell: float) -> VoxelIndex:
        if not len(self):
            raise ValueError("empty point cloud")
        idx = self._indices.get(cell)
        if idx is None:
            idx = self._indices[cell] = VoxelIndex(self.points, cell)
        return idx

    def translated(self, t) -> "PointCloud":
        return PointCloud(self.points + np.asarray(t, dtype=np.float64))


def centroid(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    if len(pts) == 0:
        raise ValueError("empty point cloud")
    return pts.mean(axis=0)


def nearest_distance(cloud: PointCloud, q, cell: float = 0.1) -> float:
    if not len(cloud):
        raise ValueError("empty point cloud")
    return cloud.index(cell).nearest_distance(np.asarray(q, dtype=np.float64))


def _canonical(v: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Order each (v, p) row pair lexicographically so segments are direction-free."""
    swap = (p[:, 0] < v[:, 0]) | (
        (p[:, 0] == v[:, 0]) & ((p[:, 1] < v[:, 1]) | ((p[:, 1] == v[:, 1]) & (p[:, 2] < v[:, 2])))
    )
    a = np.where(swap[:, None], p, v)
    b = np.where(swap[:, None], v, p)
    return a, b


def segment_samples(v, p, tau: float, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Sample points along each segment in the clipped range ``[tau, L - tau]``.

    Samples are the two range ends plus the multiples of ``step`` strictly
    inside the range, measured from the lexicographically smaller endpoint.
    Returns ``(samples, owner)`` where ``owner[i]`` is the segment index.
    Segments with ``L <= 2 * tau`` contribute no samples.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    v, p = np.broadcast_arrays(v, p)
    a, b = _canonical(v, p)
    d = b - a
    length = np.sqrt((d ** 2).sum(axis=1))
    live = length > 2 * tau
    kmin = math.floor(tau / step) + 1
    kmax = np.where(live, np.ceil((length - tau) / step).astype(np.int64) - 1, kmin - 1)
    n_grid = np.maximum(kmax - kmin + 1, 0)
    n = np.where(live, n_grid + 2, 0)
    owner = np.repeat(np.arange(len(a)), n)
    if len(owner) == 0:
        return np.zeros((0, 3)), owner
    first = np.repeat(np.cumsum(n) - n, n)
    local = np.arange(len(owner)) - first
    seg_len = length[owner]
    t = (kmin + local - 1) * step
    t = np.where(local == 0, tau, t)
    t = np.where(local == n[owner] - 1, seg_len - tau, t)
    interior = (local > 0) & (local < n[owner] - 1)
    keep = ~interior | ((t > tau) & (t < seg_len - tau))
    owner, t, seg_len = owner[keep], t[keep], seg_len[keep]
    samples = a[owner] + (t / seg_len)[:, None] * d[owner]
    return samples, owner


def segments_clear(v, targets, scene: PointCloud, tau: float, step: float | None = None) -> np.ndarray:
    """Vectorized :func:`segment_clear` from one or many ``v`` to many targets."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    step = tau / 2 if step is None else step
    if step <= 0:
        raise ValueError("step must be positive")
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    clear = np.ones(len(targets), dtype=bool)
    if not len(scene) or not len(targets):
        return clear
    samples, owner = segment_samples(v, targets, tau, step)
    if len(samples):
        index = scene.index(tau)
        sure, maybe = index.classify(samples, tau)
        clear[owner[sure]] = False
        # one hit settles a segment, so exact checks only run on still-clear ones
        maybe &= clear[owner]
        if maybe.any():
            hit = index.exact_within(samples[maybe], tau)
            clear[owner[maybe][hit]] = False
    return clear


def segment_clear(v, p, scene: PointCloud, tau: float, step: float | None = None) -> bool:
    """True iff every sample on the clipped segment v->p keeps distance >= tau from the scene."""
    return bool(segments_clear(np.asarray(v, dtype=np.float64), np.asarray(p, dtype=np.float64), scene, tau, step)[0])


@dataclass
class OccupancyGrid:
    """2D ground-plane grid. ``cells[row, col]`` with row along z and col along x."""

    origin: np.ndarray
    cell_size: float
    cells: np.ndarray

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.origin = np.asarray(self.origin, dtype=np.float64)
        if self.origin.shape != (3,):
            raise ValueError("origin must be a 3D point (x, y, z)")
        self.cells = np.asarray(self.cells, dtype=np.int8)

    @classmethod
    def empty(cls, origin, shape: tuple[int, int], cell_size: float, state: int = FREE) -> "OccupancyGrid":
        return cls(np.asarray(origin, dtype=np.float64), cell_size, np.full(shape, state, dtype=np.int8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def cell_of(self, p) -> tuple[int, int]:
        p = np.asarray(p, dtype=np.float64)
        col = math.floor((p[0] - self.origin[0]) / self.cell_size)
        row = math.floor((p[2] - self.origin[2]) / self.cell_size)
        return row, col

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.shape[0] and 0 <= col < self.shape[1]

    def center(self, row: int, col: int, y: float = 0.0) -> np.ndarray:
        return np.array([
            self.origin[0] + (col + 0.5) * self.cell_size,
            y,
            self.origin[2] + (row + 0.5) * self.cell_size,
        ])

    def centers(self, y: float = 0.0) -> np.ndarray:
        rows, cols = np.indices(self.shape)
        out = np.empty(self.shape + (3,))
        out[..., 0] = self.origin[0] + (cols + 0.5) * self.cell_size
        out[..., 1] = y
        out[..., 2] = self.origin[2] + (rows + 0.5) * self.cell_size
        return out

    def clearance_offsets(self, clearance: float, fx: float = 0.5, fz: float = 0.5) -> list[tuple[int, int]]:
        """Cell offsets whose rectangle lies strictly closer than ``clearance``
        to a point at fractional position (fx, fz) inside the base cell."""
        reach = math.ceil(clearance / self.cell_size) + 1
        out = []
        for dr in range(-reach, reach + 1):
            for dc in range(-reach, reach + 1):
                gx = max(dc - fx, 0.0, fx - dc - 1.0)
                gz = max(dr - fz, 0.0, fz - dr - 1.0)
                if math.hypot(gx, gz) * self.cell_size < clearance:
                    out.append((dr, dc))
        return out


def is_traversable(grid: OccupancyGrid, v, clearance: float) -> bool:
    v = np.asarray(v, dtype=np.float64)
    row, col = grid.cell_of(v)
    if not grid.in_bounds(row, col) or grid.cells[row, col] != FREE:
        return False
    fx = (v[0] - grid.origin[0]) / grid.cell_size - col
    fz = (v[2] - grid.origin[2]) / grid.cell_size - row
    for dr, dc in grid.clearance_offsets(clearance, fx, fz):
        r, c = row + dr, col + dc
        if not grid.in_bounds(r, c) or grid.cells[r, c] != FREE:
            return False
    return True


def traversable_mask(grid: OccupancyGrid, clearance: float) -> np.ndarray:
    """``is_traversable`` evaluated at every cell center, vectorized."""
    free = grid.cells == FREE
    mask = free.copy()
    rows, cols = grid.shape
    for dr, dc in grid.clearance_offsets(clearance):
        shifted = np.zeros_like(free)
        src = free[max(dr, 0):rows + min(dr, 0), max(dc, 0):cols + min(dc, 0)]
        shifted[max(-dr, 0):rows + min(-dr, 0), max(-dc, 0):cols + min(-dc, 0)] = src
        mask &= shifted
    return mask
