"""Synthetic grain microstructures.

Label grids in, label grids out: quantize micrographs into labeled cells,
learn local texture with an overlapping-window constraint solver, grow
grains with rewrite rules, tessellate seeded domains, and compare the
results' grain statistics against the reference they imitate.
"""

from .errors import (
    GenerationError,
    GrainSynthError,
    InputOutputError,
    InvalidInputError,
)
from .grains import (
    Grain,
    GrainMap,
    MicrostructureStats,
    absorb_small_grains,
    compute_stats,
    read_stats_json,
    segment_grains,
    write_centroid_csv,
    write_stats_json,
)
from .pipeline import (
    StatsReport,
    SynthConfig,
    SynthResult,
    compare,
    emit_report,
    plan_centroids,
    recolor,
    synthesize,
)
from .raster import (
    LabelGrid,
    Palette,
    PaletteEntry,
    default_palette,
    load_csv,
    load_palette_csv,
    load_png,
    make_rng,
    match_to_palette,
    quantize_image,
    render,
    save_csv,
    save_palette_csv,
    save_png,
)
from .rewrite import (
    KEEP,
    WILDCARD,
    RewriteRule,
    RuleNode,
    RuleProgram,
    apply_all,
    apply_one,
    find_matches,
    format_program,
    grain_growth_program,
    parse_program,
    run_program,
)
from .tessellation import (
    CentroidSet,
    LabelVolume,
    lloyd_relax,
    nearest_assign,
    quantization_energy,
    read_centroids_csv,
    sample_centroids,
    save_volume_slices,
    voxel_tessellation_3d,
    write_centroids_csv,
)
from .wfc import (
    PatternSet,
    WfcFailure,
    WfcOptions,
    WfcResult,
    downsample,
    extract_patterns,
    overlap_compatible,
    parameter_sweep,
    run_wfc,
)

__version__ = "0.1.0"

__all__ = [
    "GrainSynthError",
    "InvalidInputError",
    "GenerationError",
    "InputOutputError",
    "LabelGrid",
    "Palette",
    "PaletteEntry",
    "make_rng",
    "default_palette",
    "quantize_image",
    "match_to_palette",
    "render",
    "load_png",
    "save_png",
    "load_csv",
    "save_csv",
    "load_palette_csv",
    "save_palette_csv",
    "Grain",
    "GrainMap",
    "MicrostructureStats",
    "segment_grains",
    "absorb_small_grains",
    "compute_stats",
    "write_centroid_csv",
    "write_stats_json",
    "read_stats_json",
    "CentroidSet",
    "LabelVolume",
    "nearest_assign",
    "quantization_energy",
    "lloyd_relax",
    "sample_centroids",
    "voxel_tessellation_3d",
    "save_volume_slices",
    "write_centroids_csv",
    "read_centroids_csv",
    "WILDCARD",
    "KEEP",
    "RewriteRule",
    "RuleNode",
    "RuleProgram",
    "find_matches",
    "apply_one",
    "apply_all",
    "run_program",
    "grain_growth_program",
    "format_program",
    "parse_program",
    "PatternSet",
    "WfcOptions",
    "WfcResult",
    "WfcFailure",
    "downsample",
    "extract_patterns",
    "overlap_compatible",
    "run_wfc",
    "parameter_sweep",
    "SynthConfig",
    "SynthResult",
    "StatsReport",
    "plan_centroids",
    "synthesize",
    "compare",
    "emit_report",
    "recolor",
    "__version__",
]
