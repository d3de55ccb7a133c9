"""End-to-end microstructure synthesis and reference comparison.

Plans a centroid budget from a reference grid (area-scaled when dims
differ), samples labeled centroids, optionally relaxes and label-decollides
them, realizes a grid by nearest-centroid assignment or rewrite-rule
growth, and reports how closely the result's statistics track the
reference: grain-count deltas, per-label orientation fraction differences,
and an L1 distance between normalized grain-size histograms computed over
shared bin edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError, InvalidInputError
from .grains import MicrostructureStats, compute_stats, segment_grains
from .raster import LabelGrid, make_rng, save_csv
from .rewrite import grain_growth_program, run_program
from .tessellation import (
    METRICS,
    CentroidSet,
    lloyd_relax,
    nearest_assign,
    sample_centroids,
)

__all__ = [
    "SynthConfig",
    "SynthResult",
    "StatsReport",
    "plan_centroids",
    "synthesize",
    "compare",
    "emit_report",
    "recolor",
]

MATCH_REFERENCE = "match_reference"
METHODS = ("voronoi", "growth")

# min-conflicts search knobs: swap budget / stall window scale with the
# number of centroids; a small random-walk rate breaks plateaus.
_DECOLLIDE_BUDGET_PER_SITE = 60
_DECOLLIDE_MIN_BUDGET = 2000
_DECOLLIDE_STALL_PER_SITE = 8
_DECOLLIDE_MIN_STALL = 500
_DECOLLIDE_WALK_RATE = 0.03


@dataclass(frozen=True)
class SynthConfig:
    """Recipe for one synthetic microstructure.

    ``target_grain_count`` and ``dims`` accept the string "match_reference"
    to copy (area-scale, for the count) the reference's values.  Label
    decollision post-processes sampled centroids so that same-label
    neighbors — which segmentation would merge into one grain — become
    rare, keeping realized grain counts near the planned budget.
    """

    method: str = "voronoi"
    target_grain_count: int | str = MATCH_REFERENCE
    dims: tuple[int, int] | str = MATCH_REFERENCE
    metric: str = "euclidean"
    connectivity: int = 4
    seed: int = 0
    min_spacing: float = 0.0
    lloyd_iterations: int = 0
    decollide_labels: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}, got {self.method!r}")
        if isinstance(self.target_grain_count, str):
            if self.target_grain_count != MATCH_REFERENCE:
                raise InvalidInputError(
                    f"target_grain_count must be an int or {MATCH_REFERENCE!r}"
                )
        elif self.target_grain_count < 1:
            raise InvalidInputError("target_grain_count must be >= 1")
        if isinstance(self.dims, str):
            if self.dims != MATCH_REFERENCE:
                raise InvalidInputError(f"dims must be (width, height) or {MATCH_REFERENCE!r}")
        else:
            w, h = self.dims
            if w < 1 or h < 1:
                raise InvalidInputError(f"dims must be positive, got {self.dims}")
            object.__setattr__(self, "dims", (int(w), int(h)))
        if self.metric not in METRICS:
            raise InvalidInputError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.connectivity not in (4, 8):
            raise InvalidInputError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.min_spacing < 0:
            raise InvalidInputError("min_spacing must be >= 0")
        if self.lloyd_iterations < 0:
            raise InvalidInputError("lloyd_iterations must be >= 0")
        make_rng(self.seed)


def plan_centroids(stats: MicrostructureStats, config: SynthConfig):
    """Resolve dims, centroid count, and label distribution for a config.

    Returns (dims, count, distribution).  A "match_reference" count scales
    the reference's grain count by the area ratio (rounded half up, floor
    1), so synthesizing at different dims keeps a comparable grain density.
    Labels are drawn from the reference's orientation fractions.
    """
    if not stats.orientation_fractions:
        raise InvalidInputError("reference statistics cover no labeled cells")
    dims = stats.dims if isinstance(config.dims, str) else config.dims
    if isinstance(config.target_grain_count, int):
        count = config.target_grain_count
    else:
        if stats.grain_count < 1:
            raise InvalidInputError("reference statistics report zero grains")
        ref_area = stats.dims[0] * stats.dims[1]
        out_area = dims[0] * dims[1]
        count = max(1, int(stats.grain_count * (out_area / ref_area) + 0.5))
    return dims, count, dict(sorted(stats.orientation_fractions.items()))


def _region_adjacency(index_map: np.ndarray, n: int) -> list[set]:
    """Which tessellation regions touch (4-neighborhood over the grid)."""
    adj: list[set] = [set() for _ in range(n)]
    a, b = index_map[:, :-1], index_map[:, 1:]
    pairs = np.stack([a[a != b], b[a != b]], axis=1)
    c, d = index_map[:-1, :], index_map[1:, :]
    pairs = np.concatenate([pairs, np.stack([c[c != d], d[c != d]], axis=1)])
    for i, j in np.unique(pairs, axis=0):
        adj[int(i)].add(int(j))
        adj[int(j)].add(int(i))
    return adj


def _conflicts(adj: list[set], labels: np.ndarray) -> int:
    total = 0
    for i, nbrs in enumerate(adj):
        for j in nbrs:
            if j > i and labels[i] == labels[j]:
                total += 1
    return total


def _label_quotas(distribution: dict[int, float], n: int) -> dict[int, int]:
    """Integer per-label counts for ``n`` sites by largest remainder."""
    labs = sorted(distribution)
    shares = np.array([distribution[lab] for lab in labs], dtype=np.float64)
    base = np.floor(shares * n).astype(np.int64)
    leftover = n - int(base.sum())
    order = np.lexsort((labs, -(shares * n - base)))
    base[order[:leftover]] += 1
    return {lab: int(c) for lab, c in zip(labs, base)}


def _decollide(cs: CentroidSet, distribution: dict[int, float],
               metric: str, rng: np.random.Generator) -> CentroidSet:
    """Relabel centroids so same-label regions rarely touch.

    Segmentation merges touching same-label regions into one grain, so the
    realized grain count falls short of the centroid budget unless labels
    are spread out.  Labels are reassigned from largest-remainder quotas of
    the target distribution (greedy, most-crowded regions first), then a
    min-conflicts swap search with sideways moves and a small random walk
    drives the number of same-label adjacencies toward zero.  Label counts
    are exact by construction; only the placement of labels changes.
    """
    n = len(cs.labels)
    if n < 2 or len(distribution) < 2:
        return cs
    _, index_map = nearest_assign(cs, metric)
    adj = _region_adjacency(index_map, n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        indptr[i + 1] = indptr[i] + len(adj[i])
    nbr = np.empty(int(indptr[-1]), dtype=np.int64)
    for i in range(n):
        nbr[indptr[i]:indptr[i + 1]] = sorted(adj[i])

    quotas = _label_quotas(distribution, n)
    k = max(quotas) + 1
    remaining = np.zeros(k, dtype=np.int64)
    for lab, c in quotas.items():
        remaining[lab] = c

    # greedy seed: visit high-degree regions first, prefer labels unused by
    # already-labeled neighbors, then the label with the most quota left
    order = sorted(rng.permutation(n).tolist(),
                   key=lambda i: -(indptr[i + 1] - indptr[i]))
    labels = np.full(n, -1, dtype=np.int64)
    for i in order:
        used = set(labels[nbr[indptr[i]:indptr[i + 1]]].tolist())
        cands = [(lab in used, -remaining[lab], lab)
                 for lab in range(k) if remaining[lab] > 0]
        cands.sort()
        labels[i] = cands[0][2]
        remaining[cands[0][2]] -= 1

    def neighbor_counts() -> np.ndarray:
        m = np.zeros((n, k), dtype=np.int64)
        for i in range(n):
            m[i] = np.bincount(labels[nbr[indptr[i]:indptr[i + 1]]], minlength=k)
        return m

    counts = neighbor_counts()
    sites = np.arange(n)
    total = int(counts[sites, labels].sum()) // 2
    best = labels.copy()
    best_total = total
    budget = max(_DECOLLIDE_MIN_BUDGET, _DECOLLIDE_BUDGET_PER_SITE * n)
    stall_cap = max(_DECOLLIDE_MIN_STALL, _DECOLLIDE_STALL_PER_SITE * n)
    stall = 0
    for _ in range(budget):
        if total == 0:
            break
        if stall >= stall_cap:  # no new best in a while: restart from best
            labels = best.copy()
            counts = neighbor_counts()
            total = best_total
            stall = 0
        conflicted = np.flatnonzero(counts[sites, labels] > 0)
        if conflicted.size == 0:
            break
        i = int(conflicted[rng.integers(conflicted.size)])
        a = int(labels[i])
        # change in total conflicts if i swaps labels with each candidate j;
        # adjacent pairs double-count the shared edge, hence the correction
        delta = counts[i, labels] - counts[i, a] + counts[:, a] - counts[sites, labels]
        i_nbrs = nbr[indptr[i]:indptr[i + 1]]
        delta[i_nbrs] -= 2
        swappable = labels != a
        if not swappable.any():
            break
        scored = np.where(swappable, delta, np.iinfo(np.int64).max)
        lowest = scored.min()
        if rng.random() < _DECOLLIDE_WALK_RATE or lowest > 0:
            j = int(rng.choice(np.flatnonzero(swappable)))
        else:
            ties = np.flatnonzero(scored == lowest)
            j = int(ties[rng.integers(ties.size)])
        b = int(labels[j])
        labels[i], labels[j] = b, a
        j_nbrs = nbr[indptr[j]:indptr[j + 1]]
        counts[i_nbrs, a] -= 1
        counts[i_nbrs, b] += 1
        counts[j_nbrs, b] -= 1
        counts[j_nbrs, a] += 1
        total += int(delta[j])
        if total < best_total:
            best_total = total
            best = labels.copy()
            stall = 0
        else:
            stall += 1
    return CentroidSet(cs.dims, cs.positions, best)


@dataclass(frozen=True, eq=False)
class SynthResult:
    grid: LabelGrid
    centroids: CentroidSet
    planned_count: int


def synthesize(stats: MicrostructureStats, config: SynthConfig) -> SynthResult:
    """Generate a microstructure whose statistics track the reference's."""
    dims, count, distribution = plan_centroids(stats, config)
    rng = make_rng(config.seed)
    cs = sample_centroids(count, dims, distribution, rng,
                          min_spacing=config.min_spacing, metric=config.metric)
    if config.lloyd_iterations:
        cs = lloyd_relax(cs, config.lloyd_iterations, config.metric)
    if config.decollide_labels:
        cs = _decollide(cs, distribution, config.metric, rng)
    if config.method == "voronoi":
        grid, _ = nearest_assign(cs, config.metric)
    else:
        seeded, program = grain_growth_program(cs, neighborhood=config.connectivity)
        grown, _, status = run_program(seeded, program, rng)
        if status != "fixpoint" or grown.blank_mask.any():
            raise GenerationError("growth stopped before covering the canvas")
        grid = LabelGrid.from_array(grown.cells, blank_label=None)
    return SynthResult(grid=grid, centroids=cs, planned_count=count)


# ---------------------------------------------------------------------------
# comparison


@dataclass(frozen=True, eq=False)
class StatsReport:
    reference: MicrostructureStats
    generated: MicrostructureStats
    grain_count_abs_diff: int
    grain_count_rel_diff: float
    orientation_fraction_diff: dict[int, float]  # reference minus generated
    volume_hist_l1: float


def _normalized(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    if total == 0:
        return np.zeros_like(counts, np.float64)
    return counts / total


def compare(reference: LabelGrid, generated: LabelGrid,
            connectivity: int = 4, bins: int = 10, palette=None) -> StatsReport:
    """Statistics of both grids over shared histogram edges, plus deltas.

    Relative grain-count difference is |generated - reference| / reference;
    orientation diffs are reference minus generated per label.  The volume
    histogram L1 distance compares normalized bin shares, so it lives in
    [0, 2] regardless of grain counts.  Passing the shared palette checks
    that both grids actually fit it before any statistics run.
    """
    if palette is not None:
        reference.validate_labels(palette.size)
        generated.validate_labels(palette.size)
    gm_ref = segment_grains(reference, connectivity)
    gm_gen = segment_grains(generated, connectivity)
    if not gm_ref.grains:
        raise InvalidInputError("reference grid has no grains")
    top = max(gm_ref.max_area(), gm_gen.max_area())
    hist_range = (1.0, float(top)) if top > 1 else (0.5, 1.5)
    stats_ref = compute_stats(gm_ref, reference, bins=bins, hist_range=hist_range)
    stats_gen = compute_stats(gm_gen, generated, bins=bins, hist_range=hist_range)

    abs_diff = abs(stats_gen.grain_count - stats_ref.grain_count)
    rel_diff = abs_diff / stats_ref.grain_count
    labels = sorted(set(stats_ref.orientation_fractions) | set(stats_gen.orientation_fractions))
    orient_diff = {
        lab: stats_ref.orientation_fractions.get(lab, 0.0)
        - stats_gen.orientation_fractions.get(lab, 0.0)
        for lab in labels
    }
    l1 = float(
        np.abs(
            _normalized(np.asarray(stats_gen.hist_counts, np.float64))
            - _normalized(np.asarray(stats_ref.hist_counts, np.float64))
        ).sum()
    )
    return StatsReport(
        reference=stats_ref,
        generated=stats_gen,
        grain_count_abs_diff=int(abs_diff),
        grain_count_rel_diff=float(rel_diff),
        orientation_fraction_diff=orient_diff,
        volume_hist_l1=l1,
    )


SUMMARY_KEYS = (
    "reference_grain_count",
    "generated_grain_count",
    "grain_count_abs_diff",
    "grain_count_rel_diff",
    "volume_hist_l1",
)


def emit_report(report: StatsReport, out_dir) -> None:
    """Write summary.txt, stats.csv, and two bar-chart PNGs.

    summary.txt is key,value lines in a fixed order (floats as %.4f);
    stats.csv holds one metric per row with reference and generated
    columns.  Charts render with the Agg backend so runs are headless.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref, gen = report.reference, report.generated

    values = {
        "reference_grain_count": str(ref.grain_count),
        "generated_grain_count": str(gen.grain_count),
        "grain_count_abs_diff": str(report.grain_count_abs_diff),
        "grain_count_rel_diff": f"{report.grain_count_rel_diff:.4f}",
        "volume_hist_l1": f"{report.volume_hist_l1:.4f}",
    }
    lines = [f"{key},{values[key]}" for key in SUMMARY_KEYS]
    lines += [
        f"orientation_diff_{lab},{diff:.4f}"
        for lab, diff in sorted(report.orientation_fraction_diff.items())
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    rows = [
        ["grain_count", ref.grain_count, gen.grain_count],
        ["blank_cells", ref.blank_cells, gen.blank_cells],
        ["mean_grain_area", f"{ref.mean_grain_area:.6f}", f"{gen.mean_grain_area:.6f}"],
        ["max_grain_area", ref.max_grain_area, gen.max_grain_area],
    ]
    labels = sorted(set(ref.orientation_fractions) | set(gen.orientation_fractions))
    rows += [
        [f"orientation_fraction_{lab}",
         f"{ref.orientation_fractions.get(lab, 0.0):.6f}",
         f"{gen.orientation_fractions.get(lab, 0.0):.6f}"]
        for lab in labels
    ]
    ref_share = _normalized(np.asarray(ref.hist_counts, np.float64))
    gen_share = _normalized(np.asarray(gen.hist_counts, np.float64))
    rows += [
        [f"volume_hist_bin_{i}", f"{ref_share[i]:.6f}", f"{gen_share[i]:.6f}"]
        for i in range(len(ref_share))
    ]
    save_csv(out / "stats.csv", ["metric", "reference", "generated"], rows)

    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, [ref.orientation_fractions.get(l, 0.0) for l in labels],
           width=0.4, label="reference")
    ax.bar(x + 0.2, [gen.orientation_fractions.get(l, 0.0) for l in labels],
           width=0.4, label="generated")
    ax.set_xticks(x)
    ax.set_xticklabels([str(l) for l in labels])
    ax.set_xlabel("label")
    ax.set_ylabel("fraction of labeled cells")
    ax.set_title("orientation fractions")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "orientation_fractions.png", dpi=100)
    plt.close(fig)

    edges = np.asarray(ref.hist_edges)
    centers = (edges[:-1] + edges[1:]) / 2.0
    width = (edges[1] - edges[0]) * 0.4 if len(edges) > 1 else 0.4
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(centers - width / 2, ref_share, width=width, label="reference")
    ax.bar(centers + width / 2, gen_share, width=width, label="generated")
    ax.set_xlabel("grain area (cells)")
    ax.set_ylabel("share of grains")
    ax.set_title("grain size distribution")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "volume_fractions.png", dpi=100)
    plt.close(fig)


def recolor(grid: LabelGrid, mapping: dict[int, int]) -> LabelGrid:
    """Relabel every non-blank cell through an injective mapping.

    The mapping must cover every label present in the grid, send distinct
    used labels to distinct non-negative targets, and avoid the grid's
    blank label — so the result is the same microstructure under new names
    (region shapes and adjacency are preserved exactly).
    """
    blank = grid.blank_label
    mask = ~grid.blank_mask
    used = np.unique(grid.cells[mask]) if mask.any() else np.array([], np.int32)
    missing = [int(u) for u in used if int(u) not in mapping]
    if missing:
        raise InvalidInputError(f"mapping is missing labels {missing}")
    targets = [mapping[int(u)] for u in used]
    if any(t < 0 for t in targets):
        raise InvalidInputError("mapping targets must be non-negative")
    if len(set(targets)) != len(targets):
        raise InvalidInputError("mapping must be injective over the labels present")
    if blank is not None and blank in targets:
        raise InvalidInputError(
            f"mapping target {blank} collides with the blank label"
        )
    cells = grid.cells.copy()
    for src, dst in zip(used, targets):
        cells[(grid.cells == src) & mask] = dst
    return LabelGrid.from_array(cells, blank_label=blank)
