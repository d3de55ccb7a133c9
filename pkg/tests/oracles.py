"""Slow, independent reference implementations used to cross-check the
library: plain union-find segmentation, per-cell nearest-centroid loops,
level-synchronous multi-source BFS, and window extraction.  Everything here
favors obviousness over speed; tests compare library output against these.
"""

from __future__ import annotations

import numpy as np


class DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def segment_oracle(cells: np.ndarray, blank_label: int | None,
                   connectivity: int) -> np.ndarray:
    """Connected same-label components; ids 1.. in row-major first-encounter
    order, 0 where blank.  4-connectivity joins edge neighbors, 8 adds
    diagonals."""
    cells = np.asarray(cells)
    h, w = cells.shape
    dsu = DisjointSet(h * w)
    if connectivity == 4:
        offsets = [(1, 0), (0, 1)]
    else:
        offsets = [(1, 0), (0, 1), (1, 1), (1, -1)]
    for y in range(h):
        for x in range(w):
            if blank_label is not None and cells[y, x] == blank_label:
                continue
            for dy, dx in offsets:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and cells[ny, nx] == cells[y, x]:
                    dsu.union(y * w + x, ny * w + nx)
    ids = np.zeros((h, w), dtype=np.int32)
    next_id = 1
    root_to_id: dict[int, int] = {}
    for y in range(h):
        for x in range(w):
            if blank_label is not None and cells[y, x] == blank_label:
                continue
            root = dsu.find(y * w + x)
            if root not in root_to_id:
                root_to_id[root] = next_id
                next_id += 1
            ids[y, x] = root_to_id[root]
    return ids


def point_distance(px: float, py: float, cx: float, cy: float, metric: str) -> float:
    """Distance used for nearest-centroid ties; euclidean is squared."""
    dx, dy = px - cx, py - cy
    if metric == "euclidean":
        return dx * dx + dy * dy
    if metric == "manhattan":
        return abs(dx) + abs(dy)
    if metric == "chebyshev":
        return max(abs(dx), abs(dy))
    raise ValueError(metric)


def nearest_oracle(dims: tuple[int, int], positions: np.ndarray,
                   labels: np.ndarray, metric: str
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell loops.  Returns (label grid, centroid index grid, tie mask);
    a cell is tied when two or more centroids share the exact minimum."""
    w, h = dims
    positions = np.asarray(positions, dtype=np.float64)
    labels = np.asarray(labels)
    lab_grid = np.zeros((h, w), dtype=np.int32)
    idx_grid = np.zeros((h, w), dtype=np.int64)
    tie = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            px, py = x + 0.5, y + 0.5
            dists = [point_distance(px, py, cx, cy, metric)
                     for cx, cy in positions]
            best = min(dists)
            winners = [i for i, d in enumerate(dists) if d == best]
            idx_grid[y, x] = winners[0]
            lab_grid[y, x] = labels[winners[0]]
            tie[y, x] = len(winners) > 1
    return lab_grid, idx_grid, tie


def nearest_oracle_3d(dims: tuple[int, int, int], positions: np.ndarray,
                      labels: np.ndarray, metric: str
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Voxel-center nearest centroid: (label volume (d,h,w), tie mask)."""
    w, h, d = dims
    positions = np.asarray(positions, dtype=np.float64)
    labels = np.asarray(labels)
    vol = np.zeros((d, h, w), dtype=np.int32)
    tie = np.zeros((d, h, w), dtype=bool)
    for z in range(d):
        for y in range(h):
            for x in range(w):
                p = np.array([x + 0.5, y + 0.5, z + 0.5])
                diffs = np.abs(positions - p)
                if metric == "euclidean":
                    dist = (diffs ** 2).sum(axis=1)
                elif metric == "manhattan":
                    dist = diffs.sum(axis=1)
                else:
                    dist = diffs.max(axis=1)
                best = dist.min()
                winners = np.flatnonzero(dist == best)
                vol[z, y, x] = labels[winners[0]]
                tie[z, y, x] = winners.size > 1
    return vol, tie


def bfs_nearest(dims: tuple[int, int], seeds: list[tuple[int, int, int]],
                neighborhood: int) -> tuple[np.ndarray, np.ndarray]:
    """Multi-source lattice BFS from seed cells ``(x, y, label)``.

    Returns (winner label grid, ambiguous mask).  A cell is ambiguous when
    seeds of two or more distinct labels lie at its minimum lattice
    distance (4-neighborhood: Manhattan; 8-neighborhood: Chebyshev).
    """
    w, h = dims
    if neighborhood == 4:
        offs = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    else:
        offs = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                if (dx, dy) != (0, 0)]
    dist = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    labelsets: list[set] = [set() for _ in range(h * w)]
    frontier = []
    for x, y, lab in seeds:
        dist[y, x] = 0
        labelsets[y * w + x].add(lab)
        frontier.append((x, y))
    d = 0
    while frontier:
        nxt = set()
        for x, y in frontier:
            for dx, dy in offs:
                nx, ny = x + dx, y + dy
                if not (0 <= nx < w and 0 <= ny < h):
                    continue
                if dist[ny, nx] < d + 1:
                    continue
                if dist[ny, nx] > d + 1:
                    dist[ny, nx] = d + 1
                    labelsets[ny * w + nx] = set()
                labelsets[ny * w + nx] |= labelsets[y * w + x]
                nxt.add((nx, ny))
        frontier = sorted(nxt)
        d += 1
    winner = np.zeros((h, w), dtype=np.int32)
    ambiguous = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            s = labelsets[y * w + x]
            winner[y, x] = min(s) if s else -1
            ambiguous[y, x] = len(s) > 1
    return winner, ambiguous


def window_set(cells: np.ndarray, n: int) -> set[bytes]:
    """Byte keys of every contiguous n-by-n window (no wraparound)."""
    cells = np.ascontiguousarray(cells, dtype=np.int32)
    h, w = cells.shape
    out = set()
    for y in range(h - n + 1):
        for x in range(w - n + 1):
            out.add(np.ascontiguousarray(cells[y:y + n, x:x + n]).tobytes())
    return out


def window_set_periodic(cells: np.ndarray, n: int) -> set[bytes]:
    """Byte keys of every n-by-n window with wraparound anchors."""
    cells = np.asarray(cells, dtype=np.int32)
    h, w = cells.shape
    tiled = np.tile(cells, (2, 2))
    out = set()
    for y in range(h):
        for x in range(w):
            out.add(np.ascontiguousarray(tiled[y:y + n, x:x + n]).tobytes())
    return out


def downsample_oracle(cells: np.ndarray, t: int) -> np.ndarray:
    """Majority label per t-by-t tile, smallest label wins ties; partial
    tiles at the right/bottom edges vote with whatever cells they have."""
    cells = np.asarray(cells)
    h, w = cells.shape
    oh, ow = -(-h // t), -(-w // t)
    out = np.zeros((oh, ow), dtype=np.int32)
    for ty in range(oh):
        for tx in range(ow):
            block = cells[ty * t:(ty + 1) * t, tx * t:(tx + 1) * t].ravel()
            values, counts = np.unique(block, return_counts=True)
            out[ty, tx] = values[np.argmax(counts)]
    return out
