"""Command-line front end.

One subcommand per workflow stage: ``ingest`` (quantize + segment a
micrograph), ``wfc`` (constraint synthesis), ``sweep`` (tile-size x
window-width grid of runs), ``markov`` (run a rewrite program), ``voronoi``
(seeded tessellation, 2D or voxel slices), ``synth`` (reference-matched
generation plus comparison report), ``compare`` (statistics of two grids),
and ``recolor`` (injective relabeling).

Machine-readable results go to files under --out-dir; stdout stays empty
and progress/diagnostics go to stderr.  Exit codes: 0 success, 1 invalid
input or usage, 2 generation gave up, 3 file I/O trouble.

Any subcommand accepts ``--config FILE`` holding ``key=value`` lines
(``#`` comments allowed); keys name long options of that subcommand with
dashes or underscores.  Explicit command-line flags win over config values.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import GenerationError, InputOutputError, InvalidInputError
from .grains import (
    absorb_small_grains,
    compute_stats,
    segment_grains,
    write_centroid_csv,
    write_stats_json,
)
from .pipeline import SynthConfig, compare, emit_report, recolor, synthesize
from .raster import (
    LabelGrid,
    default_palette,
    load_palette_csv,
    load_csv,
    load_png,
    make_rng,
    match_to_palette,
    quantize_image,
    render,
    save_palette_csv,
    save_png,
)
from .rewrite import parse_program, run_program
from .tessellation import (
    METRICS,
    lloyd_relax,
    nearest_assign,
    quantization_energy,
    sample_centroids,
    save_volume_slices,
    voxel_tessellation_3d,
    write_centroids_csv,
)
from .wfc import WfcFailure, WfcOptions, parameter_sweep, run_wfc, write_sweep_outputs

__all__ = ["main", "entrypoint"]


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors surface as InvalidInputError."""

    def error(self, message):
        raise InvalidInputError(message)


def _ensure_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputOutputError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise InvalidInputError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise InvalidInputError(f"expected comma-separated numbers, got {text!r}")


def _symmetry(text: str) -> frozenset:
    return frozenset(tok.strip() for tok in text.split(",") if tok.strip())


def _parse_count(text: str):
    if text in ("match", "match_reference"):
        return "match_reference"
    try:
        return int(text)
    except ValueError:
        raise InvalidInputError(
            f"--count must be an integer or 'match_reference', got {text!r}"
        )


def _load_reference(args) -> tuple[LabelGrid, "object"]:
    """Reference image -> (LabelGrid, Palette), via palette match or quantization."""
    pixels = load_png(args.image)
    if getattr(args, "palette", None):
        palette = load_palette_csv(args.palette)
        grid = match_to_palette(pixels, palette, getattr(args, "blank_label", None))
    else:
        grid, palette = quantize_image(pixels, args.colors)
    return grid, palette


# ---------------------------------------------------------------------------
# subcommands


def _cmd_ingest(args):
    grid, palette = _load_reference(args)
    if args.min_grain > 1:
        grid = absorb_small_grains(grid, args.connectivity, args.min_grain)
    gm = segment_grains(grid, args.connectivity)
    stats = compute_stats(gm, grid, bins=args.bins)
    out = _ensure_dir(args.out_dir)
    save_png(out / "labels.png", render(grid, palette))
    save_palette_csv(out / "palette.csv", palette)
    write_centroid_csv(out / "centroids.csv", gm)
    write_stats_json(out / "stats.json", stats)
    print(
        f"ingested {grid.width}x{grid.height}: {palette.size} colors, "
        f"{gm.grain_count} grains -> {out}",
        file=sys.stderr,
    )


def _cmd_wfc(args):
    grid, palette = _load_reference(args)
    opts = WfcOptions(
        tile_size=args.tile_size,
        pattern_width=args.pattern_width,
        seed=args.seed,
        max_attempts=args.max_attempts,
        backtracking=args.backtracking,
        step_budget=args.step_budget,
        periodic_input=args.periodic_input,
        periodic_output=args.periodic_output,
        symmetry=args.symmetry,
    )
    outcome = run_wfc(grid, opts, (args.width, args.height))
    if isinstance(outcome, WfcFailure):
        raise GenerationError(
            f"no consistent {args.width}x{args.height} output after "
            f"{outcome.attempts} attempts ({outcome.contradictions} contradictions)"
        )
    out = _ensure_dir(args.out_dir)
    save_png(out / "generated.png", render(outcome.grid, palette))
    save_palette_csv(out / "palette.csv", palette)
    print(
        f"solved in {outcome.attempts} attempt(s), "
        f"{outcome.contradictions} contradictions -> {out}",
        file=sys.stderr,
    )


def _cmd_sweep(args):
    grid, palette = _load_reference(args)
    cells = parameter_sweep(
        grid,
        args.tile_sizes,
        args.widths,
        (args.width, args.height),
        args.seed,
        max_attempts=args.max_attempts,
        backtracking=args.backtracking,
        periodic_input=args.periodic_input,
        periodic_output=args.periodic_output,
        symmetry=args.symmetry,
    )
    out = _ensure_dir(args.out_dir)
    write_sweep_outputs(cells, palette, (args.width, args.height), out)
    tally = {s: sum(1 for c in cells if c.status == s) for s in ("ok", "failed", "error")}
    print(
        f"sweep of {len(cells)} runs: {tally['ok']} ok, {tally['failed']} failed, "
        f"{tally['error']} error -> {out}",
        file=sys.stderr,
    )


def _cmd_markov(args):
    try:
        text = Path(args.rules).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputOutputError(f"cannot read rules file {args.rules}: {exc}") from exc
    program = parse_program(text)
    palette = None
    if args.image:
        if not args.palette:
            raise InvalidInputError("--image requires --palette to recover labels")
        palette = load_palette_csv(args.palette)
        grid = match_to_palette(load_png(args.image), palette, args.blank_label)
    else:
        if args.width is None or args.height is None:
            raise InvalidInputError("either --image or both --width and --height are required")
        grid = LabelGrid.full(args.width, args.height, args.fill)
    rng = make_rng(args.seed)
    result, steps, status = run_program(grid, program, rng, max_steps=args.max_steps)
    top = int(result.cells.max())
    if palette is None or top >= palette.size:
        palette = default_palette(top + 1)
    out = _ensure_dir(args.out_dir)
    save_png(out / "result.png", render(result, palette))
    save_palette_csv(out / "palette.csv", palette)
    print(f"{status} after {steps} rewrite steps -> {out}", file=sys.stderr)


def _cmd_voronoi(args):
    if args.distribution is not None:
        distribution = args.distribution
    else:
        if args.labels < 1:
            raise InvalidInputError(f"--labels must be >= 1, got {args.labels}")
        distribution = [1.0 / args.labels] * args.labels
    dims = (
        (args.width, args.height)
        if args.depth <= 1
        else (args.width, args.height, args.depth)
    )
    rng = make_rng(args.seed)
    cs = sample_centroids(
        args.count, dims, distribution, rng,
        min_spacing=args.min_spacing, metric=args.metric,
    )
    if args.lloyd:
        if len(dims) == 3:
            raise InvalidInputError("--lloyd applies to 2D tessellations only")
        cs = lloyd_relax(cs, args.lloyd, args.metric)
    palette = default_palette(int(cs.labels.max()) + 1)
    out = _ensure_dir(args.out_dir)
    if len(dims) == 2:
        grid, _ = nearest_assign(cs, args.metric)
        save_png(out / "tessellation.png", render(grid, palette))
        note = f"energy {quantization_energy(cs, args.metric):.1f}"
    else:
        volume = voxel_tessellation_3d(cs, args.metric)
        names = save_volume_slices(volume, palette, out)
        note = f"{len(names)} slices"
    write_centroids_csv(out / "centroids.csv", cs)
    save_palette_csv(out / "palette.csv", palette)
    print(f"tessellated {args.count} centroids ({note}) -> {out}", file=sys.stderr)


def _cmd_synth(args):
    if (args.width is None) != (args.height is None):
        raise InvalidInputError("--width and --height must be given together")
    grid, palette = _load_reference(args)
    stats = compute_stats(segment_grains(grid, args.connectivity), grid, bins=args.bins)
    config = SynthConfig(
        method=args.method,
        target_grain_count=args.count,
        dims="match_reference" if args.width is None else (args.width, args.height),
        metric=args.metric,
        connectivity=args.connectivity,
        seed=args.seed,
        min_spacing=args.min_spacing,
        lloyd_iterations=args.lloyd,
        decollide_labels=not args.no_decollide,
    )
    result = synthesize(stats, config)
    report = compare(grid, result.grid, connectivity=args.connectivity,
                     bins=args.bins, palette=palette)
    out = _ensure_dir(args.out_dir)
    save_png(out / "generated.png", render(result.grid, palette))
    save_palette_csv(out / "generated_palette.csv", palette)
    write_centroids_csv(out / "centroids.csv", result.centroids)
    emit_report(report, out)
    print(
        f"planned {result.planned_count} grains, realized {report.generated.grain_count} "
        f"vs reference {report.reference.grain_count} "
        f"(rel diff {report.grain_count_rel_diff:.4f}) -> {out}",
        file=sys.stderr,
    )


def _cmd_compare(args):
    palette = load_palette_csv(args.palette)
    reference = match_to_palette(load_png(args.reference), palette, args.blank_label)
    gen_palette = (
        load_palette_csv(args.palette_generated) if args.palette_generated else palette
    )
    generated = match_to_palette(load_png(args.generated), gen_palette, args.blank_label)
    report = compare(reference, generated, connectivity=args.connectivity, bins=args.bins)
    out = _ensure_dir(args.out_dir)
    emit_report(report, out)
    print(
        f"grain_count_rel_diff={report.grain_count_rel_diff:.4f} "
        f"volume_hist_l1={report.volume_hist_l1:.4f} -> {out}",
        file=sys.stderr,
    )


def _cmd_recolor(args):
    palette = load_palette_csv(args.palette)
    grid = match_to_palette(load_png(args.image), palette, args.blank_label)
    header, rows = load_csv(args.map)
    if [h.strip() for h in header[:2]] != ["from", "to"]:
        raise InvalidInputError(
            f"mapping file must start with a 'from,to' header, got {header!r}"
        )
    mapping = {}
    for i, row in enumerate(rows, start=2):
        try:
            mapping[int(row[0])] = int(row[1])
        except (ValueError, IndexError):
            raise InvalidInputError(f"bad mapping row {i}: {row!r}")
    result = recolor(grid, mapping)
    out_palette = load_palette_csv(args.palette_out) if args.palette_out else palette
    out = _ensure_dir(args.out_dir)
    save_png(out / "recolored.png", render(result, out_palette))
    save_palette_csv(out / "palette.csv", out_palette)
    print(f"recolored {len(mapping)} labels -> {out}", file=sys.stderr)


# ---------------------------------------------------------------------------
# parser assembly


def _add_reference_options(p, with_blank=True):
    p.add_argument("--image", required=True, help="reference PNG")
    p.add_argument("--palette", help="palette CSV; exact color match instead of quantization")
    p.add_argument("--colors", type=int, default=8,
                   help="max palette size when quantizing (default 8)")
    if with_blank:
        p.add_argument("--blank-label", type=int, default=None,
                       help="label for pure-black pixels when matching a palette")


def _add_common(p):
    p.add_argument("--out-dir", required=True, help="directory for output files")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--config", help="key=value file of defaults for this subcommand")


def _add_wfc_knobs(p):
    p.add_argument("--tile-size", type=int, default=1, help="resolution factor 1..5")
    p.add_argument("--pattern-width", type=int, default=3, help="window side 1..5")
    p.add_argument("--max-attempts", type=int, default=20)
    p.add_argument("--backtracking", choices=["chronological", "none"],
                   default="chronological")
    p.add_argument("--step-budget", type=int, default=None,
                   help="undo budget per attempt (default 10x cells)")
    p.add_argument("--periodic-input", action="store_true",
                   help="reference wraps around")
    p.add_argument("--periodic-output", action="store_true",
                   help="output wraps around")
    p.add_argument("--symmetry", type=_symmetry, default=frozenset(),
                   help="comma list of: rotations, reflections")


def _build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(
        prog="grainsynth",
        description="synthetic grain microstructures: texture synthesis, "
        "rewrite-rule growth, tessellation, statistics",
    )
    subs = parser.add_subparsers(dest="cmd", metavar="COMMAND")
    registry: dict[str, _Parser] = {}

    def sub(name, func, help_text):
        p = subs.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        registry[name] = p
        return p

    p = sub("ingest", _cmd_ingest, "quantize a micrograph and export grains + stats")
    _add_reference_options(p)
    _add_common(p)
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=4)
    p.add_argument("--min-grain", type=int, default=1,
                   help="absorb grains smaller than this into neighbors")
    p.add_argument("--bins", type=int, default=10, help="grain-size histogram bins")

    p = sub("wfc", _cmd_wfc, "synthesize a texture-matched grid")
    _add_reference_options(p, with_blank=False)
    _add_common(p)
    p.add_argument("--width", type=int, required=True, help="output width in cells")
    p.add_argument("--height", type=int, required=True, help="output height in cells")
    _add_wfc_knobs(p)

    p = sub("sweep", _cmd_sweep, "grid of runs over tile sizes and window widths")
    _add_reference_options(p, with_blank=False)
    _add_common(p)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--tile-sizes", type=_int_list, default=[1, 2, 3, 4, 5],
                   help="comma list (default 1,2,3,4,5)")
    p.add_argument("--widths", type=_int_list, default=[1, 2, 3, 4, 5],
                   help="comma list of window widths (default 1,2,3,4,5)")
    p.add_argument("--max-attempts", type=int, default=8)
    p.add_argument("--backtracking", choices=["chronological", "none"],
                   default="chronological")
    p.add_argument("--periodic-input", action="store_true")
    p.add_argument("--periodic-output", action="store_true")
    p.add_argument("--symmetry", type=_symmetry, default=frozenset())

    p = sub("markov", _cmd_markov, "run a rewrite-rule program")
    _add_common(p)
    p.add_argument("--rules", required=True, help="program text file")
    p.add_argument("--image", help="starting grid as PNG (needs --palette)")
    p.add_argument("--palette", help="palette CSV for --image")
    p.add_argument("--blank-label", type=int, default=None)
    p.add_argument("--width", type=int, help="blank-canvas width")
    p.add_argument("--height", type=int, help="blank-canvas height")
    p.add_argument("--fill", type=int, default=0, help="canvas fill label (default 0)")
    p.add_argument("--max-steps", type=int, default=100_000)

    p = sub("voronoi", _cmd_voronoi, "random labeled centroids + nearest-site regions")
    _add_common(p)
    p.add_argument("--count", type=int, required=True, help="number of centroids")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--depth", type=int, default=1,
                   help=">1 tessellates a voxel volume and writes PNG slices")
    p.add_argument("--labels", type=int, default=8,
                   help="uniform label alphabet size (default 8)")
    p.add_argument("--distribution", type=_float_list, default=None,
                   help="comma list of label fractions, overrides --labels")
    p.add_argument("--metric", choices=list(METRICS), default="euclidean")
    p.add_argument("--min-spacing", type=float, default=0.0)
    p.add_argument("--lloyd", type=int, default=0, help="relaxation iterations")

    p = sub("synth", _cmd_synth, "generate a reference-matched microstructure + report")
    _add_reference_options(p)
    _add_common(p)
    p.add_argument("--method", choices=["voronoi", "growth"], default="voronoi")
    p.add_argument("--count", type=_parse_count, default="match_reference",
                   help="grain budget, or 'match_reference' (default)")
    p.add_argument("--width", type=int, help="output width (default: reference)")
    p.add_argument("--height", type=int, help="output height (default: reference)")
    p.add_argument("--metric", choices=list(METRICS), default="euclidean")
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=4)
    p.add_argument("--min-spacing", type=float, default=0.0)
    p.add_argument("--lloyd", type=int, default=0)
    p.add_argument("--no-decollide", action="store_true",
                   help="keep sampled labels in place even where neighbors collide")
    p.add_argument("--bins", type=int, default=10)

    p = sub("compare", _cmd_compare, "statistics report for two palette-matched grids")
    _add_common(p)
    p.add_argument("--reference", required=True, help="reference PNG")
    p.add_argument("--generated", required=True, help="generated PNG")
    p.add_argument("--palette", required=True, help="palette CSV for both grids")
    p.add_argument("--palette-generated", help="separate palette for the generated grid")
    p.add_argument("--blank-label", type=int, default=None)
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=4)
    p.add_argument("--bins", type=int, default=10)

    p = sub("recolor", _cmd_recolor, "relabel a grid through an injective mapping")
    _add_common(p)
    p.add_argument("--image", required=True, help="input PNG")
    p.add_argument("--palette", required=True, help="palette CSV for the input")
    p.add_argument("--map", required=True, help="CSV with from,to label columns")
    p.add_argument("--palette-out", help="palette CSV for rendering the result")
    p.add_argument("--blank-label", type=int, default=None)

    return parser, registry


# ---------------------------------------------------------------------------
# config files


def _read_config(path) -> list[tuple[str, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputOutputError(f"cannot read config file {path}: {exc}") from exc
    pairs = []
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{i}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


_TRUE_WORDS = ("1", "true", "yes", "on")
_FALSE_WORDS = ("0", "false", "no", "off")


def _apply_config(argv: list[str], registry: dict[str, _Parser]) -> list[str]:
    """Expand --config into injected flags ahead of the explicit ones."""
    if not argv or argv[0] not in registry:
        return argv
    cmd, rest = argv[0], argv[1:]
    path = None
    for i, tok in enumerate(rest):
        if tok == "--config" and i + 1 < len(rest):
            path = rest[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv

    options = registry[cmd]._option_string_actions
    explicit = {tok.split("=", 1)[0] for tok in rest if tok.startswith("--")}
    injected: list[str] = []
    for key, value in _read_config(path):
        flag = "--" + key.strip("-").replace("_", "-")
        action = options.get(flag)
        if action is None or flag == "--config":
            raise InvalidInputError(f"config key {key!r} is not an option of '{cmd}'")
        if flag in explicit:
            continue
        if action.nargs == 0:  # store_true style
            low = value.lower()
            if low in _TRUE_WORDS:
                injected.append(flag)
            elif low not in _FALSE_WORDS:
                raise InvalidInputError(f"config key {key!r} expects a boolean, got {value!r}")
        else:
            injected.extend([flag, value])
    return [cmd] + injected + rest


def _log_options(args) -> None:
    skip = {"func", "cmd", "config"}
    shown = []
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(value, frozenset):
            value = ",".join(sorted(value)) or "none"
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif value is None:
            value = "none"
        shown.append(f"{key}={value}")
    print(f"[{args.cmd}] " + " ".join(shown), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser, registry = _build_parser()
    try:
        argv = _apply_config(list(argv), registry)
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_help(sys.stderr)
            return 1
        _log_options(args)
        args.func(args)
        return 0
    except SystemExit as exc:  # argparse --help
        return 0 if exc.code in (0, None) else 1
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return 2
    except InputOutputError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())
