"""End-to-end synthesis planning, comparison reports, and recoloring."""

from dataclasses import replace

import numpy as np
import pytest

import grainsynth as gs
from grainsynth import pipeline as pl
from grainsynth.raster import load_csv


def stats_of(grid: gs.LabelGrid, connectivity: int = 4):
    return gs.compute_stats(gs.segment_grains(grid, connectivity), grid)


def voronoi_reference(seed: int, count: int, dims, shares, min_spacing=3.0) -> gs.LabelGrid:
    rng = gs.make_rng(seed)
    cs = gs.sample_centroids(count, dims, shares, rng, min_spacing=min_spacing)
    grid, _ = gs.nearest_assign(cs)
    return grid


def block_grid(labels_2x2) -> gs.LabelGrid:
    """8x8 grid made of four 4x4 quadrant blocks."""
    arr = np.repeat(np.repeat(np.array(labels_2x2, np.int32), 4, 0), 4, 1)
    return gs.LabelGrid.from_array(arr)


# ---------------------------------------------------------------------------
# configuration and planning


def test_synth_config_defaults():
    cfg = gs.SynthConfig()
    assert cfg.method == "voronoi"
    assert cfg.target_grain_count == "match_reference"
    assert cfg.dims == "match_reference"
    assert cfg.decollide_labels


@pytest.mark.parametrize("kw", [
    {"method": "wfc"},
    {"metric": "cosine"},
    {"connectivity": 5},
    {"seed": -1},
    {"seed": 2**64},
    {"min_spacing": -0.5},
    {"lloyd_iterations": -1},
    {"target_grain_count": 0},
    {"target_grain_count": "auto"},
    {"dims": (0, 4)},
    {"dims": "auto"},
])
def test_synth_config_rejects_bad_fields(kw):
    with pytest.raises(gs.InvalidInputError):
        gs.SynthConfig(**kw)


def test_plan_matches_reference_dims_and_count():
    grid = block_grid([[0, 1], [1, 0]])  # 4 grains on an 8x8 canvas
    stats = stats_of(grid)
    dims, count, dist = gs.plan_centroids(stats, gs.SynthConfig())
    assert dims == (8, 8)
    assert count == 4
    assert dist == {0: 0.5, 1: 0.5}
    assert list(dist) == sorted(dist)


def test_plan_scales_count_by_area():
    stats = stats_of(block_grid([[0, 1], [1, 0]]))
    dims, count, _ = gs.plan_centroids(stats, gs.SynthConfig(dims=(16, 16)))
    assert dims == (16, 16)
    assert count == 16  # 4 grains x 4x the area
    _, tiny, _ = gs.plan_centroids(stats, gs.SynthConfig(dims=(2, 2)))
    assert tiny == 1  # rounds to zero but is floored at one grain
    _, rounded, _ = gs.plan_centroids(stats, gs.SynthConfig(dims=(10, 10)))
    assert rounded == 6  # 4 * 100/64 = 6.25 rounds half-up to 6


def test_plan_respects_explicit_count():
    stats = stats_of(block_grid([[0, 1], [1, 0]]))
    _, count, _ = gs.plan_centroids(stats, gs.SynthConfig(target_grain_count=2527))
    assert count == 2527


def test_plan_rejects_unlabeled_reference():
    blank = gs.LabelGrid.full(4, 4, 0, blank_label=0)
    gm = gs.segment_grains(blank)
    stats = gs.compute_stats(gm, blank)
    with pytest.raises(gs.InvalidInputError):
        gs.plan_centroids(stats, gs.SynthConfig())


# ---------------------------------------------------------------------------
# synthesis


def test_synthesize_single_label_reference():
    stats = stats_of(gs.LabelGrid.full(6, 6, 3))
    for method in ("voronoi", "growth"):
        cfg = gs.SynthConfig(method=method, target_grain_count=5, dims=(12, 12), seed=1)
        result = gs.synthesize(stats, cfg)
        assert result.planned_count == 5
        assert result.centroids.count == 5
        assert (result.grid.width, result.grid.height) == (12, 12)
        assert set(np.unique(result.grid.cells)) == {3}


def test_synthesize_is_deterministic():
    ref = voronoi_reference(99, 30, (48, 48), {0: 0.4, 1: 0.35, 2: 0.25})
    stats = stats_of(ref)
    for method in ("voronoi", "growth"):
        cfg = gs.SynthConfig(method=method, seed=7, min_spacing=2.0)
        a = gs.synthesize(stats, cfg)
        b = gs.synthesize(stats, cfg)
        assert a.grid == b.grid
        assert np.array_equal(a.centroids.positions, b.centroids.positions)
        assert np.array_equal(a.centroids.labels, b.centroids.labels)


def test_synthesize_growth_covers_canvas():
    ref = voronoi_reference(98, 25, (40, 40), {0: 0.5, 1: 0.3, 2: 0.2})
    stats = stats_of(ref)
    cfg = gs.SynthConfig(method="growth", connectivity=8, seed=3, min_spacing=2.0)
    result = gs.synthesize(stats, cfg)
    assert result.grid.blank_label is None
    assert set(np.unique(result.grid.cells)) <= {0, 1, 2}


def test_synthesize_surfaces_spacing_saturation():
    stats = stats_of(voronoi_reference(97, 12, (32, 32), [0.5, 0.5]))
    cfg = gs.SynthConfig(target_grain_count=50, dims=(8, 8), min_spacing=6.0)
    with pytest.raises(gs.GenerationError, match="spacing saturated"):
        gs.synthesize(stats, cfg)


def test_label_rebalancing_hits_quotas_and_cuts_conflicts():
    ref = voronoi_reference(96, 40, (64, 64), {0: 0.4, 1: 0.35, 2: 0.25})
    stats = stats_of(ref)
    base = gs.SynthConfig(target_grain_count=100, dims=(96, 96),
                          min_spacing=2.0, seed=4, decollide_labels=False)
    off = gs.synthesize(stats, base)
    on = gs.synthesize(stats, replace(base, decollide_labels=True))
    # relabeling never moves a centroid
    assert np.array_equal(off.centroids.positions, on.centroids.positions)

    _, _, dist = gs.plan_centroids(stats, base)
    quotas = pl._label_quotas(dist, 100)
    got = {lab: int((on.centroids.labels == lab).sum()) for lab in dist}
    assert got == quotas

    _, idx = gs.nearest_assign(on.centroids)
    adj = pl._region_adjacency(idx, 100)
    assert pl._conflicts(adj, on.centroids.labels) <= \
        pl._conflicts(adj, off.centroids.labels)


def test_decollide_single_label_is_noop():
    rng = gs.make_rng(5)
    cs = gs.sample_centroids(8, (16, 16), {7: 1.0}, rng, min_spacing=2.0)
    out = pl._decollide(cs, {7: 1.0}, "euclidean", rng)
    assert np.array_equal(out.labels, cs.labels)
    assert np.array_equal(out.positions, cs.positions)


@pytest.mark.parametrize("seed", range(5))
def test_synthesize_tracks_planned_grain_count(seed):
    stats = gs.MicrostructureStats(
        dims=(128, 128), blank_cells=0, grain_count=120,
        orientation_fractions={0: 0.35, 1: 0.30, 2: 0.20, 3: 0.15},
        mean_grain_area=136.5, max_grain_area=400,
        volume_fractions=np.zeros(0),
        hist_edges=np.linspace(1.0, 400.0, 11), hist_counts=np.zeros(10, np.int64),
    )
    cfg = gs.SynthConfig(min_spacing=2.0, seed=seed)
    result = gs.synthesize(stats, cfg)
    assert result.planned_count == 120
    realized = len(gs.segment_grains(result.grid).grains)
    assert 0.85 * 120 <= realized <= 1.05 * 120


# ---------------------------------------------------------------------------
# comparison


def test_compare_identical_grids():
    grid = voronoi_reference(94, 15, (32, 32), [0.6, 0.4])
    rep = gs.compare(grid, grid)
    assert rep.grain_count_abs_diff == 0
    assert rep.grain_count_rel_diff == 0.0
    assert rep.volume_hist_l1 == 0.0
    assert all(d == 0.0 for d in rep.orientation_fraction_diff.values())


def test_compare_orientation_sign_is_reference_minus_generated():
    ref = gs.LabelGrid.from_array(np.array([[0] * 6 + [1] * 4], np.int32))
    gen = gs.LabelGrid.from_array(np.array([[0] * 5 + [1] * 5], np.int32))
    rep = gs.compare(ref, gen)
    assert rep.orientation_fraction_diff == pytest.approx({0: 0.1, 1: -0.1})
    assert rep.grain_count_abs_diff == 0


def test_compare_grain_count_arithmetic():
    ref = block_grid([[0, 1], [1, 0]])  # 4 grains
    stripes = np.zeros((8, 8), np.int32)
    stripes[:, 2:4] = 1
    stripes[:, 6:8] = 1
    gen = gs.LabelGrid.from_array(stripes)  # 4 stripes = 4 grains
    rep = gs.compare(ref, gen)
    assert (rep.reference.grain_count, rep.generated.grain_count) == (4, 4)
    strip5 = np.repeat(np.array([[0, 1, 0, 1, 0]], np.int32), 5, axis=0)
    rep5 = gs.compare(ref, gs.LabelGrid.from_array(strip5))
    assert rep5.generated.grain_count == 5
    assert rep5.grain_count_abs_diff == 1
    assert rep5.grain_count_rel_diff == pytest.approx(0.25)


def test_compare_unions_label_sets():
    ref = gs.LabelGrid.from_array(np.array([[0, 0, 1, 1]], np.int32))
    gen = gs.LabelGrid.from_array(np.array([[1, 1, 2, 2]], np.int32))
    rep = gs.compare(ref, gen)
    assert sorted(rep.orientation_fraction_diff) == [0, 1, 2]
    assert rep.orientation_fraction_diff[0] == pytest.approx(0.5)
    assert rep.orientation_fraction_diff[1] == pytest.approx(0.0)
    assert rep.orientation_fraction_diff[2] == pytest.approx(-0.5)


def test_compare_l1_spans_disjoint_histograms():
    ref = gs.LabelGrid.from_array(
        (np.indices((4, 4)).sum(axis=0) % 2).astype(np.int32))  # 16 unit grains
    gen = gs.LabelGrid.full(4, 4, 0)  # one 16-cell grain
    rep = gs.compare(ref, gen)
    assert rep.volume_hist_l1 == pytest.approx(2.0)
    assert rep.grain_count_abs_diff == 15
    assert rep.grain_count_rel_diff == pytest.approx(15 / 16)


def test_compare_validates_against_palette():
    pal = gs.default_palette(2)
    ok = gs.LabelGrid.from_array(np.array([[0, 1]], np.int32))
    bad = gs.LabelGrid.from_array(np.array([[0, 5]], np.int32))
    gs.compare(ok, ok, palette=pal)
    with pytest.raises(gs.InvalidInputError):
        gs.compare(ok, bad, palette=pal)


def test_compare_rejects_grainless_reference():
    blank = gs.LabelGrid.full(2, 2, 0, blank_label=0)
    gen = gs.LabelGrid.full(2, 2, 1)
    with pytest.raises(gs.InvalidInputError, match="no grains"):
        gs.compare(blank, gen)


# ---------------------------------------------------------------------------
# report emission


def test_emit_report_summary_layout(tmp_path):
    ref = gs.LabelGrid.from_array(np.array([[0] * 6 + [1] * 4], np.int32))
    gen = gs.LabelGrid.from_array(np.array([[0] * 5 + [1] * 5], np.int32))
    gs.emit_report(gs.compare(ref, gen), tmp_path)

    lines = (tmp_path / "summary.txt").read_text().splitlines()
    keys = [ln.split(",")[0] for ln in lines]
    assert keys == list(pl.SUMMARY_KEYS) + ["orientation_diff_0", "orientation_diff_1"]
    got = dict(ln.split(",") for ln in lines)
    assert got["reference_grain_count"] == "2"
    assert got["grain_count_abs_diff"] == "0"
    assert got["grain_count_rel_diff"] == "0.0000"
    assert got["orientation_diff_0"] == "0.1000"
    assert got["orientation_diff_1"] == "-0.1000"


def test_emit_report_pinned_rel_diff_formatting(tmp_path):
    """A 2527-vs-2903 grain-count pair renders as 0.1488."""
    def fake_stats(count):
        return gs.MicrostructureStats(
            dims=(256, 256), blank_cells=0, grain_count=count,
            orientation_fractions={0: 1.0}, mean_grain_area=1.0,
            max_grain_area=1, volume_fractions=np.zeros(0),
            hist_edges=np.linspace(1.0, 2.0, 3), hist_counts=np.array([1, 1]),
        )
    rep = pl.StatsReport(
        reference=fake_stats(2527), generated=fake_stats(2903),
        grain_count_abs_diff=376, grain_count_rel_diff=376 / 2527,
        orientation_fraction_diff={0: 0.0}, volume_hist_l1=0.0,
    )
    gs.emit_report(rep, tmp_path)
    lines = (tmp_path / "summary.txt").read_text().splitlines()
    assert "grain_count_rel_diff,0.1488" in lines


def test_emit_report_files_and_csv_schema(tmp_path):
    ref = voronoi_reference(93, 12, (32, 32), [0.5, 0.5])
    gen = voronoi_reference(92, 14, (32, 32), [0.5, 0.5])
    gs.emit_report(gs.compare(ref, gen), tmp_path)

    header, rows = load_csv(tmp_path / "stats.csv")
    assert header == ["metric", "reference", "generated"]
    metrics = [r[0] for r in rows]
    assert metrics[:4] == ["grain_count", "blank_cells",
                           "mean_grain_area", "max_grain_area"]
    assert "orientation_fraction_0" in metrics
    assert sum(m.startswith("volume_hist_bin_") for m in metrics) == 10
    for name in ("orientation_fractions.png", "volume_fractions.png"):
        px = gs.load_png(tmp_path / name)
        assert px.ndim == 3 and px.shape[2] == 3


def test_emit_report_is_reproducible(tmp_path):
    ref = voronoi_reference(91, 10, (24, 24), [0.7, 0.3])
    gen = voronoi_reference(90, 11, (24, 24), [0.7, 0.3])
    rep = gs.compare(ref, gen)
    a, b = tmp_path / "a", tmp_path / "b"
    gs.emit_report(rep, a)
    gs.emit_report(rep, b)
    for name in ("summary.txt", "stats.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    for name in ("orientation_fractions.png", "volume_fractions.png"):
        assert np.array_equal(gs.load_png(a / name), gs.load_png(b / name))


# ---------------------------------------------------------------------------
# recoloring


def test_recolor_identity_and_swap():
    grid = voronoi_reference(89, 10, (24, 24), [0.6, 0.4])
    same = gs.recolor(grid, {0: 0, 1: 1})
    assert same == grid
    swapped = gs.recolor(grid, {0: 1, 1: 0})
    assert np.array_equal(swapped.cells, 1 - grid.cells)


def test_recolor_preserves_microstructure():
    for seed in range(20):
        grid = voronoi_reference(seed, 12, (24, 24), [0.4, 0.3, 0.3],
                                 min_spacing=2.0)
        out = gs.recolor(grid, {0: 10, 1: 11, 2: 12})
        gm_in = gs.segment_grains(grid)
        gm_out = gs.segment_grains(out)
        assert len(gm_in.grains) == len(gm_out.grains)
        assert sorted(g.area for g in gm_in.grains) == \
            sorted(g.area for g in gm_out.grains)


def test_recolor_keeps_blanks():
    grid = gs.LabelGrid.from_array(np.array([[0, 9], [1, 9]], np.int32),
                                   blank_label=9)
    out = gs.recolor(grid, {0: 3, 1: 4})
    assert out.blank_label == 9
    assert out.cells.tolist() == [[3, 9], [4, 9]]


def test_recolor_tolerates_extra_mapping_keys():
    grid = gs.LabelGrid.from_array(np.array([[0, 1]], np.int32))
    out = gs.recolor(grid, {0: 2, 1: 3, 42: 5})
    assert out.cells.tolist() == [[2, 3]]


def test_recolor_validation():
    grid = gs.LabelGrid.from_array(np.array([[0, 1]], np.int32))
    with pytest.raises(gs.InvalidInputError, match="missing labels"):
        gs.recolor(grid, {0: 2})
    with pytest.raises(gs.InvalidInputError, match="injective"):
        gs.recolor(grid, {0: 2, 1: 2})
    with pytest.raises(gs.InvalidInputError, match="non-negative"):
        gs.recolor(grid, {0: -1, 1: 2})
    blanky = gs.LabelGrid.from_array(np.array([[0, 9]], np.int32), blank_label=9)
    with pytest.raises(gs.InvalidInputError, match="blank"):
        gs.recolor(blanky, {0: 9})
