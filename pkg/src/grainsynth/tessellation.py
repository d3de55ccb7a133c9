"""Discrete Voronoi tessellation on cell grids, Lloyd relaxation, and
centroid sampling.

Distances are measured from cell centers, which sit at integer + 0.5 in
both axes, so symmetric seed layouts produce exact, predictable ties; ties
always resolve to the lowest centroid index.  A 3D voxel variant serializes
as a stack of per-slice PNGs plus a CSV manifest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, InvalidInputError
from .raster import LabelGrid, Palette, render, save_csv, save_png, load_csv

__all__ = [
    "METRICS",
    "CentroidSet",
    "LabelVolume",
    "nearest_assign",
    "lloyd_relax",
    "quantization_energy",
    "sample_centroids",
    "voxel_tessellation_3d",
    "save_volume_slices",
    "centroids_to_rows",
    "write_centroids_csv",
    "read_centroids_csv",
]

METRICS = ("euclidean", "manhattan", "chebyshev")


def _check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise InvalidInputError(f"metric must be one of {METRICS}, got {metric!r}")
    return metric


@dataclass(frozen=True, eq=False)
class CentroidSet:
    """Labeled seed points inside a rectangular (or box) domain.

    ``dims`` is (width, height) or (width, height, depth); ``positions`` has
    matching arity per row, in x, y[, z] order.
    """

    dims: tuple[int, ...]
    positions: np.ndarray  # (n, 2|3) float64
    labels: np.ndarray  # (n,) int32

    def __post_init__(self):
        if len(self.dims) not in (2, 3) or any(d <= 0 for d in self.dims):
            raise InvalidInputError(f"bad dims {self.dims}")
        pos = np.array(self.positions, dtype=np.float64, order="C", copy=True)
        lab = np.array(self.labels, dtype=np.int32, order="C", copy=True)
        if pos.ndim != 2 or pos.shape[1] != len(self.dims):
            raise InvalidInputError(
                f"positions shape {pos.shape} does not match dims arity {len(self.dims)}"
            )
        if len(pos) == 0:
            raise InvalidInputError("centroid set must contain at least one point")
        if lab.shape != (len(pos),):
            raise InvalidInputError("labels must align one-to-one with positions")
        if lab.min() < 0:
            raise InvalidInputError("labels must be non-negative")
        for axis, extent in enumerate(self.dims):
            if pos[:, axis].min() < 0 or pos[:, axis].max() > extent:
                raise InvalidInputError(
                    f"centroid coordinate outside [0, {extent}] on axis {axis}"
                )
        pos.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "labels", lab)

    @property
    def count(self) -> int:
        return len(self.positions)


def _distances(points: np.ndarray, centers: np.ndarray, metric: str) -> np.ndarray:
    """(P, C) distance table. Euclidean distances are squared (argmin-safe)."""
    diff = points[:, None, :] - centers[None, :, :]
    if metric == "euclidean":
        return (diff * diff).sum(axis=2)
    if metric == "manhattan":
        return np.abs(diff).sum(axis=2)
    return np.abs(diff).max(axis=2)


def _assign_indices(points: np.ndarray, centers: np.ndarray, metric: str,
                    chunk: int = 8192) -> np.ndarray:
    out = np.empty(len(points), np.int64)
    for start in range(0, len(points), chunk):
        d = _distances(points[start : start + chunk], centers, metric)
        out[start : start + chunk] = np.argmin(d, axis=1)  # first min = lowest index
    return out


def _cell_centers(width: int, height: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    return np.column_stack([xs.ravel() + 0.5, ys.ravel() + 0.5]).astype(np.float64)


def nearest_assign(cs: CentroidSet, metric: str = "euclidean") -> tuple[LabelGrid, np.ndarray]:
    """Assign every cell to its nearest centroid.

    Returns the label grid plus the (height, width) map of winning centroid
    indices.  Distance ties resolve to the lowest centroid index.
    """
    _check_metric(metric)
    if len(cs.dims) != 2:
        raise InvalidInputError("nearest_assign expects a 2D centroid set")
    w, h = cs.dims
    idx = _assign_indices(_cell_centers(w, h), cs.positions, metric).reshape(h, w)
    labels = cs.labels[idx]
    return LabelGrid.from_array(labels.astype(np.int32)), idx.astype(np.int32)


def quantization_energy(cs: CentroidSet, metric: str = "euclidean") -> float:
    """E = sum over cells of d(cell center, assigned centroid)^2."""
    _check_metric(metric)
    w, h = cs.dims
    pts = _cell_centers(w, h)
    total = 0.0
    for start in range(0, len(pts), 8192):
        block = pts[start : start + 8192]
        d = _distances(block, cs.positions, metric)
        best = d.min(axis=1)
        if metric == "euclidean":
            total += float(best.sum())  # already squared
        else:
            total += float((best * best).sum())
    return total


def lloyd_relax(cs: CentroidSet, iterations: int, metric: str = "euclidean") -> CentroidSet:
    """Relax centroids toward the mean of their assigned cell centers.

    Each iteration re-runs nearest_assign, then moves every centroid with a
    non-empty region to the mean center of its cells; empty-region centroids
    stay put and labels travel with their centroid.  With the default
    euclidean metric the quantization energy never increases.
    """
    if iterations < 0:
        raise InvalidInputError(f"iterations must be >= 0, got {iterations}")
    _check_metric(metric)
    if len(cs.dims) != 2:
        raise InvalidInputError("lloyd_relax expects a 2D centroid set")
    w, h = cs.dims
    pts = _cell_centers(w, h)
    pos = cs.positions.copy()
    for _ in range(iterations):
        idx = _assign_indices(pts, pos, metric)
        counts = np.bincount(idx, minlength=len(pos)).astype(np.float64)
        sx = np.bincount(idx, weights=pts[:, 0], minlength=len(pos))
        sy = np.bincount(idx, weights=pts[:, 1], minlength=len(pos))
        occupied = counts > 0
        pos = pos.copy()
        pos[occupied, 0] = sx[occupied] / counts[occupied]
        pos[occupied, 1] = sy[occupied] / counts[occupied]
    return CentroidSet(cs.dims, pos, cs.labels.copy())


def _normalize_distribution(label_distribution) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(label_distribution, dict):
        labels = np.array(sorted(label_distribution), np.int32)
        fracs = np.array([label_distribution[int(l)] for l in labels], float)
    else:
        fracs = np.asarray(label_distribution, float)
        labels = np.arange(len(fracs), dtype=np.int32)
    if len(fracs) == 0 or (fracs < 0).any():
        raise InvalidInputError("label distribution must be non-empty and non-negative")
    total = fracs.sum()
    if abs(total - 1.0) > 1e-9:
        raise InvalidInputError(f"label distribution must sum to 1, got {total}")
    return labels, fracs


def sample_centroids(count: int, dims, label_distribution, rng: np.random.Generator,
                     min_spacing: float = 0.0, metric: str = "euclidean") -> CentroidSet:
    """Rejection-sample ``count`` centroids with pairwise spacing >= min_spacing.

    Positions are uniform over the domain; labels are drawn independently
    from ``label_distribution`` (dict label->fraction, or a sequence of
    fractions for labels 0..k-1).  Gives up with a saturation error after
    1000 * count total placement attempts, reporting how many points fit.
    """
    _check_metric(metric)
    dims = tuple(int(d) for d in dims)
    if count < 1:
        raise InvalidInputError(f"count must be >= 1, got {count}")
    if min_spacing < 0:
        raise InvalidInputError(f"min_spacing must be >= 0, got {min_spacing}")
    labels_pool, fracs = _normalize_distribution(label_distribution)

    placed = np.empty((count, len(dims)), np.float64)
    labels = np.empty(count, np.int32)
    n_placed = 0
    budget = 1000 * count
    for _ in range(budget):
        cand = np.array([rng.random() * d for d in dims])
        if min_spacing > 0 and n_placed:
            d = _distances(cand[None, :], placed[:n_placed], metric)[0]
            if metric == "euclidean":
                ok = (d >= min_spacing * min_spacing).all()
            else:
                ok = (d >= min_spacing).all()
            if not ok:
                continue
        placed[n_placed] = cand
        r = rng.random()
        labels[n_placed] = labels_pool[
            min(int(np.searchsorted(np.cumsum(fracs), r, side="right")), len(fracs) - 1)
        ]
        n_placed += 1
        if n_placed == count:
            return CentroidSet(dims, placed, labels)
    raise GenerationError(
        f"spacing saturated: placed {n_placed} of {count} centroids with "
        f"min_spacing={min_spacing} inside dims={dims} after {budget} attempts"
    )


# ---------------------------------------------------------------------------
# 3D voxel variant


@dataclass(frozen=True, eq=False)
class LabelVolume:
    dims: tuple[int, int, int]  # (width, height, depth)
    voxels: np.ndarray  # (depth, height, width) int32

    def __post_init__(self):
        vox = np.array(self.voxels, dtype=np.int32, order="C", copy=True)
        w, h, d = self.dims
        if vox.shape != (d, h, w):
            raise InvalidInputError(
                f"voxels shape {vox.shape} does not match dims {self.dims}"
            )
        vox.flags.writeable = False
        object.__setattr__(self, "voxels", vox)

    def slice_grid(self, z: int) -> LabelGrid:
        return LabelGrid.from_array(self.voxels[z])


def voxel_tessellation_3d(cs: CentroidSet, metric: str = "euclidean") -> LabelVolume:
    """Nearest-centroid labeling of every voxel center (integer + 0.5)."""
    _check_metric(metric)
    if len(cs.dims) != 3:
        raise InvalidInputError("voxel_tessellation_3d expects a 3D centroid set")
    w, h, d = cs.dims
    zs, ys, xs = np.mgrid[0:d, 0:h, 0:w]
    pts = np.column_stack(
        [xs.ravel() + 0.5, ys.ravel() + 0.5, zs.ravel() + 0.5]
    ).astype(np.float64)
    idx = _assign_indices(pts, cs.positions, metric)
    vox = cs.labels[idx].reshape(d, h, w)
    return LabelVolume((w, h, d), vox)


def save_volume_slices(volume: LabelVolume, palette: Palette, out_dir) -> list[str]:
    """Write slice_####.png per z plus manifest.csv mapping slice -> file."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for z in range(volume.dims[2]):
        name = f"slice_{z:04d}.png"
        save_png(out / name, render(volume.slice_grid(z), palette))
        names.append(name)
    save_csv(out / "manifest.csv", ["slice", "filename"],
             [[z, n] for z, n in enumerate(names)])
    return names


# ---------------------------------------------------------------------------
# centroid CSV (same schema the segmentation export uses: id,label,x,y,area)


def centroids_to_rows(cs: CentroidSet) -> list[list]:
    rows = []
    for i in range(cs.count):
        coords = [repr(float(v)) for v in cs.positions[i]]
        rows.append([i + 1, int(cs.labels[i]), *coords, 0])
    return rows


def write_centroids_csv(path, cs: CentroidSet) -> None:
    coord_cols = ["x", "y", "z"][: len(cs.dims)]
    save_csv(path, ["id", "label", *coord_cols, "area"], centroids_to_rows(cs))


def read_centroids_csv(path, dims) -> CentroidSet:
    """Load a centroid CSV (the ``area`` column is ignored if present)."""
    header, rows = load_csv(path)
    dims = tuple(int(d) for d in dims)
    arity = len(dims)
    want = ["id", "label"] + ["x", "y", "z"][:arity]
    if [h.strip() for h in header[: len(want)]] != want:
        raise InvalidInputError(
            f"{path}: expected centroid CSV header starting {want}, got {header}"
        )
    if not rows:
        raise InvalidInputError(f"{path}: centroid CSV has no rows")
    try:
        pos = np.array([[float(r[2 + a]) for a in range(arity)] for r in rows])
        labels = np.array([int(r[1]) for r in rows], np.int32)
    except (ValueError, IndexError) as e:
        raise InvalidInputError(f"{path}: malformed centroid row: {e}") from e
    return CentroidSet(dims, pos, labels)
