"""Shortest paths on a boolean traversability mask.

8-connected moves, diagonal cost sqrt(2) cells, and no corner cutting: a
diagonal step needs both orthogonal neighbours to be traversable. The heavy
lifting is scipy's Dijkstra over a sparse adjacency built once per mask.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra


class DisconnectedError(RuntimeError):
    pass


class GridPlanner:
    def __init__(self, mask: np.ndarray, cell_size: float):
        self.mask = np.asarray(mask, dtype=bool)
        self.cell_size = float(cell_size)
        self.shape = self.mask.shape
        self._graph = self._build()
        self._cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def _build(self):
        h, w = self.shape
        m = self.mask
        idx = np.arange(h * w).reshape(h, w)
        rows, cols, costs = [], [], []

        def link(a_sl, b_sl, ok, cost):
            src = idx[a_sl][ok]
            dst = idx[b_sl][ok]
            rows.extend([src, dst])
            cols.extend([dst, src])
            costs.extend([np.full(src.size, cost)] * 2)

        c = self.cell_size
        # right and down neighbours
        link((slice(None), slice(0, w - 1)), (slice(None), slice(1, w)), m[:, :-1] & m[:, 1:], c)
        link((slice(0, h - 1), slice(None)), (slice(1, h), slice(None)), m[:-1, :] & m[1:, :], c)
        d = c * math.sqrt(2)
        # down-right: (r, c) -> (r+1, c+1), needs (r, c+1) and (r+1, c)
        ok = m[:-1, :-1] & m[1:, 1:] & m[:-1, 1:] & m[1:, :-1]
        link((slice(0, h - 1), slice(0, w - 1)), (slice(1, h), slice(1, w)), ok, d)
        # down-left: (r, c+1) -> (r+1, c), needs (r, c) and (r+1, c+1)
        link((slice(0, h - 1), slice(1, w)), (slice(1, h), slice(0, w - 1)), ok, d)
        if rows:
            r = np.concatenate(rows)
            cc = np.concatenate(cols)
            v = np.concatenate(costs)
        else:
            r = cc = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
        return coo_matrix((v, (r, cc)), shape=(h * w, h * w)).tocsr()

    def _flat(self, cell) -> int:
        return int(cell[0]) * self.shape[1] + int(cell[1])

    def field(self, start) -> tuple[np.ndarray, np.ndarray]:
        """Distances (meters, inf if unreachable) and predecessors from ``start``."""
        start = (int(start[0]), int(start[1]))
        if start not in self._cache:
            if not self.mask[start]:
                raise ValueError(f"start cell {start} is not traversable")
            dist, pred = dijkstra(self._graph, directed=False, indices=self._flat(start), return_predecessors=True)
            self._cache[start] = (dist.reshape(self.shape), pred)
        return self._cache[start]

    def distance(self, a, b) -> float:
        dist, _ = self.field(a)
        d = float(dist[int(b[0]), int(b[1])])
        if not math.isfinite(d):
            raise DisconnectedError(f"disconnected: no path from {tuple(a)} to {tuple(b)}")
        return d

    def path(self, a, b) -> list[tuple[int, int]]:
        self.distance(a, b)
        _, pred = self.field(a)
        w = self.shape[1]
        cur = self._flat(b)
        src = self._flat(a)
        out = [cur]
        while cur != src:
            cur = int(pred[cur])
            out.append(cur)
        return [(i // w, i % w) for i in reversed(out)]

    def nearest_reachable(self, start, target_xz, origin, max_dist: float = math.inf) -> tuple[int, int] | None:
        """Reachable cell whose center is closest to ``target_xz`` (ties: shorter path, then row, col)."""
        dist, _ = self.field(start)
        rows, cols = np.nonzero(np.isfinite(dist))
        if not rows.size:
            return None
        cx = origin[0] + (cols + 0.5) * self.cell_size
        cz = origin[2] + (rows + 0.5) * self.cell_size
        e = np.hypot(cx - target_xz[0], cz - target_xz[1])
        order = np.lexsort((cols, rows, dist[rows, cols], e))
        k = order[0]
        if e[k] > max_dist:
            return None
        return int(rows[k]), int(cols[k])


def shortest_path(mask: np.ndarray, cell_size: float, a, b) -> float:
    """Geodesic distance in meters between two cells; raises :class:`DisconnectedError`."""
    return GridPlanner(mask, cell_size).distance(a, b)


def path_length(cells: list[tuple[int, int]], cell_size: float) -> float:
    total = 0.0
    for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
        total += cell_size * math.hypot(r1 - r0, c1 - c0)
    return total
