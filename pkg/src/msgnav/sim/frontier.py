"""Frontiers: explored free cells bordering unexplored space, grouped into clusters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from msgnav.geometry import FREE, OccupancyGrid

EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class Frontier:
    id: int
    cells: np.ndarray  # (n, 2) row, col
    representative: tuple[int, int]
    position: np.ndarray  # representative cell center, y = 0
    nav_cell: tuple[int, int] | None = None
    distance: float = float("inf")
    snapshot: dict = field(default_factory=lambda: {"room": "", "categories": {}})

    @property
    def size(self) -> int:
        return int(len(self.cells))

    def to_request(self) -> dict:
        return {
            "id": self.id,
            "position": [round(float(x), 2) for x in self.position],
            "size": self.size,
            "distance": round(float(self.distance), 2),
            "snapshot": self.snapshot,
        }


def frontier_mask(grid: OccupancyGrid, explored: np.ndarray) -> np.ndarray:
    free_known = explored & (grid.cells == FREE)
    unknown = ~explored
    near_unknown = ndimage.binary_dilation(unknown, EIGHT)
    return free_known & near_unknown


def extract_frontiers(grid: OccupancyGrid, explored: np.ndarray, min_cluster: int = 3) -> list[Frontier]:
    """Connected frontier clusters, largest first (ties by representative row, col).

    The representative is the cluster cell closest to the cluster centroid.
    Ids are assigned in output order, starting at 0.
    """
    explored = np.asarray(explored, dtype=bool)
    if explored.shape != grid.shape:
        raise ValueError("explored mask shape does not match grid")
    labels, n = ndimage.label(frontier_mask(grid, explored), structure=EIGHT)
    clusters = []
    for lab in range(1, n + 1):
        cells = np.argwhere(labels == lab)
        if len(cells) < min_cluster:
            continue
        mean = cells.mean(axis=0)
        d2 = ((cells - mean) ** 2).sum(axis=1)
        k = np.lexsort((cells[:, 1], cells[:, 0], d2))[0]
        rep = (int(cells[k, 0]), int(cells[k, 1]))
        clusters.append((cells, rep))
    clusters.sort(key=lambda cr: (-len(cr[0]), cr[1]))
    return [
        Frontier(i, cells, rep, grid.center(rep[0], rep[1]))
        for i, (cells, rep) in enumerate(clusters)
    ]
