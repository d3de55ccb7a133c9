"""Grain segmentation and microstructure statistics.

A grain is a connected component of same-label cells.  Segmentation assigns
grain ids in first-encounter row-major order starting at 1; blank cells keep
grain id 0.  Statistics summarize label shares (orientation fractions),
per-grain area shares (volume fractions), and the grain-size histogram.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError, InputOutputError
from .raster import LabelGrid, save_csv, load_csv

__all__ = [
    "Grain",
    "GrainMap",
    "MicrostructureStats",
    "segment_grains",
    "absorb_small_grains",
    "compute_stats",
    "export_centroids",
    "write_centroid_csv",
    "write_stats_json",
    "read_stats_json",
]

_STRUCTURES = {
    4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool),
    8: np.ones((3, 3), bool),
}


def _check_connectivity(connectivity: int) -> np.ndarray:
    if connectivity not in _STRUCTURES:
        raise InvalidInputError(f"connectivity must be 4 or 8, got {connectivity}")
    return _STRUCTURES[connectivity]


@dataclass(frozen=True)
class Grain:
    id: int
    label: int
    area: int
    centroid: tuple[float, float]  # (x, y), mean of member cell indices


@dataclass(frozen=True, eq=False)
class GrainMap:
    dims: tuple[int, int]  # (width, height)
    grains: tuple[Grain, ...]
    grain_ids: np.ndarray  # (height, width), 0 = blank

    def __post_init__(self):
        ids = np.array(self.grain_ids, dtype=np.int32, order="C", copy=True)
        ids.flags.writeable = False
        object.__setattr__(self, "grain_ids", ids)

    @property
    def grain_count(self) -> int:
        return len(self.grains)

    def max_area(self) -> int:
        return max((g.area for g in self.grains), default=0)


def segment_grains(grid: LabelGrid, connectivity: int = 4) -> GrainMap:
    """Split a label grid into connected same-label components.

    Parameters
    ----------
    grid : LabelGrid
    connectivity : 4 or 8

    Returns
    -------
    GrainMap with ids 1..G in first-encounter row-major order; blank cells
    carry id 0.  Grain areas always sum to the non-blank cell count.
    """
    structure = _check_connectivity(connectivity)
    cells = grid.cells
    blanks = grid.blank_mask

    raw = np.zeros(cells.shape, np.int32)
    offset = 0
    for label in np.unique(cells[~blanks]) if (~blanks).any() else []:
        mask = (cells == label) & ~blanks
        comp, n = ndimage.label(mask, structure=structure)
        raw[mask] = comp[mask] + offset
        offset += int(n)

    # renumber so that ids follow first encounter in row-major order
    flat = raw.ravel()
    uniq, first = np.unique(flat, return_index=True)
    nonzero = uniq != 0
    order = np.argsort(first[nonzero], kind="stable")
    old_ids = uniq[nonzero][order]
    remap = np.zeros(int(uniq.max()) + 1 if uniq.size else 1, np.int32)
    remap[old_ids] = np.arange(1, len(old_ids) + 1, dtype=np.int32)
    ids = remap[raw]

    g = len(old_ids)
    areas = np.bincount(ids.ravel(), minlength=g + 1)
    ys, xs = np.indices(cells.shape)
    sx = np.bincount(ids.ravel(), weights=xs.ravel(), minlength=g + 1)
    sy = np.bincount(ids.ravel(), weights=ys.ravel(), minlength=g + 1)
    first_flat = np.zeros(g + 1, np.int64)
    # first occurrence of each id in flat order equals the sorted first[] above
    first_flat[remap[old_ids]] = np.sort(first[nonzero])
    labels_flat = cells.ravel()

    grains = []
    for i in range(1, g + 1):
        a = int(areas[i])
        grains.append(
            Grain(
                id=i,
                label=int(labels_flat[first_flat[i]]),
                area=a,
                centroid=(float(sx[i] / a), float(sy[i] / a)),
            )
        )
    return GrainMap(dims=(grid.width, grid.height), grains=tuple(grains), grain_ids=ids)


def absorb_small_grains(grid: LabelGrid, connectivity: int = 4,
                        min_size: int = 1) -> LabelGrid:
    """Dissolve grains smaller than ``min_size`` into their largest neighbor.

    Repeats until no sub-threshold grain has a differently-labeled neighbor.
    ``min_size=1`` is a no-op.  Used to clean single-cell quantization
    speckle before computing statistics.
    """
    if min_size < 1:
        raise InvalidInputError(f"min_size must be >= 1, got {min_size}")
    if min_size == 1:
        return grid
    _check_connectivity(connectivity)
    cells = grid.cells.copy()
    offsets = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    if connectivity == 8:
        offsets += [(-1, -1), (-1, 1), (1, -1), (1, 1)]

    for _ in range(grid.width * grid.height):
        gm = segment_grains(LabelGrid.from_array(cells, grid.blank_label), connectivity)
        small = [g for g in gm.grains if g.area < min_size]
        if not small:
            break
        ids = gm.grain_ids
        areas = {g.id: g.area for g in gm.grains}
        changed = False
        for g in sorted(small, key=lambda g: g.id):
            mask = ids == g.id
            neigh: dict[int, int] = {}
            ys, xs = np.nonzero(mask)
            for y, x in zip(ys, xs):
                for dy, dx in offsets:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < grid.height and 0 <= nx < grid.width:
                        nid = int(ids[ny, nx])
                        if nid != 0 and nid != g.id:
                            neigh[nid] = areas[nid]
            if not neigh:
                continue
            # largest adjacent grain wins; ties go to the lowest grain id
            best = max(sorted(neigh), key=lambda i: neigh[i])
            target_label = cells[ids == best][0]
            cells[mask] = target_label
            changed = True
        if not changed:
            break
    return LabelGrid.from_array(cells, grid.blank_label)


@dataclass(frozen=True, eq=False)
class MicrostructureStats:
    dims: tuple[int, int]
    grain_count: int
    blank_cells: int
    orientation_fractions: dict[int, float]  # label -> share of non-blank cells
    volume_fractions: np.ndarray  # per grain, in grain-id order
    hist_edges: np.ndarray  # equal-width bins over [1, max grain area]
    hist_counts: np.ndarray
    mean_grain_area: float
    max_grain_area: int


def compute_stats(gm: GrainMap, grid: LabelGrid, bins: int = 10,
                  hist_range: tuple[float, float] | None = None) -> MicrostructureStats:
    """Summarize a segmented grid.

    ``hist_range`` overrides the default size-histogram span of
    [1, max grain area]; comparisons pass a shared span so reference and
    generated histograms use identical bin edges.
    """
    if gm.dims != (grid.width, grid.height):
        raise InvalidInputError(
            f"grain map dims {gm.dims} do not match grid dims "
            f"{(grid.width, grid.height)}"
        )
    if bins < 1:
        raise InvalidInputError(f"bins must be >= 1, got {bins}")
    blank = grid.blank_count()
    nonblank = grid.width * grid.height - blank

    counts = grid.label_counts()
    fractions = {l: c / nonblank for l, c in counts.items()} if nonblank else {}

    areas = np.array([g.area for g in gm.grains], dtype=np.int64)
    if len(areas):
        volume = areas / nonblank
        max_area = int(areas.max())
        if hist_range is None:
            hist_range = (1.0, float(max_area)) if max_area > 1 else (0.5, 1.5)
        hist, edges = np.histogram(areas, bins=bins, range=hist_range)
        mean_area = float(areas.mean())
    else:
        volume = np.zeros(0)
        max_area = 0
        hist_range = hist_range or (0.5, 1.5)
        hist, edges = np.histogram(areas, bins=bins, range=hist_range)
        mean_area = 0.0

    return MicrostructureStats(
        dims=gm.dims,
        grain_count=gm.grain_count,
        blank_cells=blank,
        orientation_fractions=fractions,
        volume_fractions=volume,
        hist_edges=edges,
        hist_counts=hist.astype(np.int64),
        mean_grain_area=mean_area,
        max_grain_area=max_area,
    )


def export_centroids(gm: GrainMap) -> list[list]:
    """Rows of the centroid CSV (id, label, x, y, area), ordered by grain id."""
    return [
        [g.id, g.label, repr(g.centroid[0]), repr(g.centroid[1]), g.area]
        for g in gm.grains
    ]


CENTROID_HEADER = ["id", "label", "x", "y", "area"]


def write_centroid_csv(path, gm: GrainMap) -> None:
    save_csv(path, CENTROID_HEADER, export_centroids(gm))


# ---------------------------------------------------------------------------
# stats serialization (consumed by the synthesis pipeline)

_STATS_KEYS = [
    "width", "height", "blank_cells", "grain_count", "orientation_fractions",
    "mean_grain_area", "max_grain_area", "volume_fraction_hist_edges",
    "volume_fraction_hist_counts",
]


def write_stats_json(path, stats: MicrostructureStats) -> None:
    """Persist stats as JSON with a fixed key order (see README for the schema)."""
    doc = {
        "width": stats.dims[0],
        "height": stats.dims[1],
        "blank_cells": stats.blank_cells,
        "grain_count": stats.grain_count,
        "orientation_fractions": {
            str(l): stats.orientation_fractions[l]
            for l in sorted(stats.orientation_fractions)
        },
        "mean_grain_area": stats.mean_grain_area,
        "max_grain_area": stats.max_grain_area,
        "volume_fraction_hist_edges": [float(e) for e in stats.hist_edges],
        "volume_fraction_hist_counts": [int(c) for c in stats.hist_counts],
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as e:
        raise InputOutputError(f"cannot write stats {path}: {e}") from e


def read_stats_json(path) -> MicrostructureStats:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise InputOutputError(f"cannot read stats {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InputOutputError(f"{path}: malformed stats JSON: {e}") from e
    missing = [k for k in _STATS_KEYS if k not in doc]
    if missing:
        raise InputOutputError(f"{path}: stats JSON missing keys {missing}")
    return MicrostructureStats(
        dims=(int(doc["width"]), int(doc["height"])),
        grain_count=int(doc["grain_count"]),
        blank_cells=int(doc["blank_cells"]),
        orientation_fractions={int(k): float(v)
                               for k, v in doc["orientation_fractions"].items()},
        volume_fractions=np.zeros(0),  # per-grain detail is not round-tripped
        hist_edges=np.array(doc["volume_fraction_hist_edges"], float),
        hist_counts=np.array(doc["volume_fraction_hist_counts"], np.int64),
        mean_grain_area=float(doc["mean_grain_area"]),
        max_grain_area=int(doc["max_grain_area"]),
    )
