"""Overlapping-window constraint synthesis of label grids.

The engine extracts every n-by-n window of a (optionally downsampled)
reference grid, then fills an output canvas so that each cell carries the
top-left value of some window and every adjacent pair of window choices
agrees on its overlap.  Cells start with all windows possible; observation
collapses the lowest-entropy cell to one weighted-random window and
propagation prunes neighbors to a fixpoint.  Contradictions either restart
the attempt with a derived seed or are unwound by chronological
backtracking, within a step budget.

Tile size couples resolution: the reference is majority-downsampled by
``tile_size`` before window extraction, and the solved canvas is upsampled
by the same factor with nearest-neighbor block fill.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .raster import LabelGrid, Palette, make_rng, render, save_csv, save_png

__all__ = [
    "PatternSet",
    "WaveState",
    "WfcOptions",
    "WfcResult",
    "WfcFailure",
    "SweepCell",
    "downsample",
    "extract_patterns",
    "overlap_compatible",
    "observe",
    "propagate",
    "run_wfc",
    "parameter_sweep",
    "write_sweep_outputs",
]

TILE_RANGE = (1, 5)
WIDTH_RANGE = (1, 5)
SYMMETRY_FLAGS = frozenset({"rotations", "reflections"})

# neighbor offsets; adjacency()[d][p, q] == True iff window q may sit at
# offset DIRS[d] relative to window p
DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def downsample(grid: LabelGrid, tile_size: int) -> LabelGrid:
    """Shrink by majority vote over tile_size x tile_size blocks.

    Output dims are ceil(dims / tile_size); partial edge tiles vote with
    fewer cells.  Vote ties go to the smallest label value.
    """
    lo, hi = TILE_RANGE
    if not (lo <= tile_size <= hi):
        raise InvalidInputError(f"tile_size must be in [{lo}, {hi}], got {tile_size}")
    if tile_size == 1:
        return grid
    t = tile_size
    oh = math.ceil(grid.height / t)
    ow = math.ceil(grid.width / t)
    out = np.empty((oh, ow), np.int32)
    cells = grid.cells
    for ty in range(oh):
        for tx in range(ow):
            block = cells[ty * t : (ty + 1) * t, tx * t : (tx + 1) * t]
            out[ty, tx] = np.argmax(np.bincount(block.ravel()))
    return LabelGrid.from_array(out, grid.blank_label)


def _upsample(cells: np.ndarray, tile_size: int) -> np.ndarray:
    if tile_size == 1:
        return cells
    return np.repeat(np.repeat(cells, tile_size, axis=0), tile_size, axis=1)


def _window_variants(win: np.ndarray, symmetry: frozenset) -> list[np.ndarray]:
    out = [win]
    if "rotations" in symmetry:
        out += [np.rot90(win, k) for k in (1, 2, 3)]
    if "reflections" in symmetry:
        out = out + [np.fliplr(w) for w in out]
    return out


@dataclass(eq=False)
class PatternSet:
    """Deduplicated n-by-n windows with occurrence weights.

    ``patterns`` has shape (K, n, n); index order is first occurrence during
    the row-major window scan (symmetry copies visit in a fixed order and
    count toward weights).  Treat instances as immutable.
    """

    n: int
    patterns: np.ndarray
    weights: np.ndarray
    symmetry: frozenset
    periodic_input: bool

    def __post_init__(self):
        object.__setattr__(self, "_adjacency", None)
        object.__setattr__(self, "_member_keys", None)

    @property
    def count(self) -> int:
        return len(self.patterns)

    def has_pattern(self, window: np.ndarray) -> bool:
        keys = object.__getattribute__(self, "_member_keys")
        if keys is None:
            keys = {self.patterns[i].tobytes() for i in range(self.count)}
            object.__setattr__(self, "_member_keys", keys)
        return np.ascontiguousarray(window, dtype=np.int32).tobytes() in keys

    def adjacency(self) -> list[np.ndarray]:
        """Per-direction (K, K) compatibility, computed once then cached."""
        cached = object.__getattribute__(self, "_adjacency")
        if cached is not None:
            return cached
        k, n = self.count, self.n
        right_a = self.patterns[:, :, 1:].reshape(k, -1)
        right_b = self.patterns[:, :, : n - 1].reshape(k, -1)
        down_a = self.patterns[:, 1:, :].reshape(k, -1)
        down_b = self.patterns[:, : n - 1, :].reshape(k, -1)

        def table(a, b):
            out = np.empty((k, k), bool)
            step = max(1, 2**22 // max(1, k * max(1, a.shape[1])))
            for s in range(0, k, step):
                out[s : s + step] = (a[s : s + step, None, :] == b[None, :, :]).all(-1)
            return out

        right = table(right_a, right_b)
        down = table(down_a, down_b)
        tables = [right, right.T.copy(), down, down.T.copy()]
        object.__setattr__(self, "_adjacency", tables)
        return tables


def extract_patterns(grid: LabelGrid, n: int, periodic_input: bool = False,
                     symmetry: frozenset = frozenset()) -> PatternSet:
    """Collect every n-by-n window of the grid (wrapping when periodic).

    Symmetry flags add rotated / mirrored copies of each window; every copy
    counts toward its pattern's weight.  Grids containing blank cells, or
    smaller than n without periodic input, are rejected.
    """
    lo, hi = WIDTH_RANGE
    if not (lo <= n <= hi):
        raise InvalidInputError(f"pattern width must be in [{lo}, {hi}], got {n}")
    bad = set(symmetry) - SYMMETRY_FLAGS
    if bad:
        raise InvalidInputError(f"unknown symmetry flags {sorted(bad)}")
    if grid.blank_mask.any():
        raise InvalidInputError("reference grid contains blank cells")
    if not periodic_input and (grid.height < n or grid.width < n):
        raise InvalidInputError(
            f"grid {grid.width}x{grid.height} is smaller than pattern width {n} "
            "(enable periodic input or shrink n)"
        )
    cells = grid.cells
    if periodic_input:
        padded = np.pad(cells, ((0, n - 1), (0, n - 1)), mode="wrap")
        windows = np.lib.stride_tricks.sliding_window_view(padded, (n, n))
    else:
        windows = np.lib.stride_tricks.sliding_window_view(cells, (n, n))

    index: dict[bytes, int] = {}
    patterns: list[np.ndarray] = []
    weights: list[float] = []
    sym = frozenset(symmetry)
    for wy in range(windows.shape[0]):
        for wx in range(windows.shape[1]):
            for variant in _window_variants(windows[wy, wx], sym):
                arr = np.ascontiguousarray(variant, dtype=np.int32)
                key = arr.tobytes()
                at = index.get(key)
                if at is None:
                    index[key] = len(patterns)
                    patterns.append(arr)
                    weights.append(1.0)
                else:
                    weights[at] += 1.0
    return PatternSet(
        n=n,
        patterns=np.stack(patterns),
        weights=np.array(weights, np.float64),
        symmetry=sym,
        periodic_input=periodic_input,
    )


def overlap_compatible(p: np.ndarray, q: np.ndarray, dx: int, dy: int) -> bool:
    """May window q sit at offset (dx, dy) relative to window p?

    True iff the two windows agree on every cell of their overlap region.
    Offsets must satisfy |dx|, |dy| < n.
    """
    p = np.asarray(p)
    q = np.asarray(q)
    if p.shape != q.shape or p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise InvalidInputError("windows must be equal square arrays")
    n = p.shape[0]
    if abs(dx) >= n or abs(dy) >= n:
        raise InvalidInputError(f"offsets must satisfy |dx|,|dy| < {n}")
    pa = p[max(0, dy) : n + min(0, dy), max(0, dx) : n + min(0, dx)]
    qa = q[max(0, -dy) : n + min(0, -dy), max(0, -dx) : n + min(0, -dx)]
    return bool(np.array_equal(pa, qa))


# ---------------------------------------------------------------------------
# wave state


class WaveState:
    """Mutable per-cell candidate domains plus entropy bookkeeping.

    ``wave[y, x, p]`` says window p is still possible at anchor cell (x, y).
    Entropy ties break on a per-cell noise field (magnitude 1e-6) drawn once
    from the attempt's generator, so runs are fully reproducible.
    """

    def __init__(self, width: int, height: int, ps: PatternSet,
                 periodic_output: bool, rng: np.random.Generator):
        if width < 1 or height < 1:
            raise InvalidInputError(f"wave dims must be positive, got {width}x{height}")
        k = ps.count
        self.width = width
        self.height = height
        self.periodic = periodic_output
        self.weights = ps.weights
        self.wlogw = ps.weights * np.log(ps.weights)
        self.wave = np.ones((height, width, k), bool)
        self.counts = np.full((height, width), k, np.int32)
        self.sumw = np.full((height, width), float(ps.weights.sum()))
        self.sumwlogw = np.full((height, width), float(self.wlogw.sum()))
        self.noise = rng.random((height, width)) * 1e-6

    def is_solved(self) -> bool:
        return bool((self.counts == 1).all())

    def candidates(self, x: int, y: int) -> np.ndarray:
        return np.nonzero(self.wave[y, x])[0]

    def ban(self, x: int, y: int, p: int, journal: list) -> None:
        self.wave[y, x, p] = False
        self.counts[y, x] -= 1
        self.sumw[y, x] -= self.weights[p]
        self.sumwlogw[y, x] -= self.wlogw[p]
        journal.append((x, y, p))

    def ban_many(self, x: int, y: int, mask: np.ndarray, journal: list) -> None:
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            return
        self.wave[y, x, idx] = False
        self.counts[y, x] -= len(idx)
        self.sumw[y, x] -= float(self.weights[idx].sum())
        self.sumwlogw[y, x] -= float(self.wlogw[idx].sum())
        journal.extend((x, y, int(p)) for p in idx)

    def undo(self, journal: list) -> None:
        for x, y, p in reversed(journal):
            self.wave[y, x, p] = True
            self.counts[y, x] += 1
            self.sumw[y, x] += self.weights[p]
            self.sumwlogw[y, x] += self.wlogw[p]

    def entropies(self) -> np.ndarray:
        """Shannon entropy of each cell's weighted candidates, solved = +inf."""
        with np.errstate(divide="ignore", invalid="ignore"):
            h = np.log(self.sumw) - self.sumwlogw / self.sumw
        h = np.where(self.counts > 1, h + self.noise, np.inf)
        return h


def observe(state: WaveState, ps: PatternSet, rng: np.random.Generator,
            journal: list | None = None) -> tuple[int, int, int]:
    """Collapse the minimum-entropy unsolved cell to one weighted pick.

    Returns (x, y, pattern).  All other candidates at the cell are banned
    (recorded in ``journal`` when given); callers must propagate afterwards.
    """
    if journal is None:
        journal = []
    h = state.entropies()
    flat = int(np.argmin(h))
    if not np.isfinite(h.ravel()[flat]):
        raise InvalidInputError("observe() called with no unsolved cells")
    y, x = divmod(flat, state.width)
    cands = state.candidates(x, y)
    w = state.weights[cands]
    cum = np.cumsum(w)
    r = rng.random() * cum[-1]
    pick = int(cands[min(int(np.searchsorted(cum, r, side="right")), len(cands) - 1)])
    mask = state.wave[y, x].copy()
    mask[pick] = False
    state.ban_many(x, y, mask, journal)
    return x, y, pick


def propagate(state: WaveState, ps: PatternSet, start, journal: list | None = None) -> bool:
    """Arc-consistency to fixpoint from recently restricted cell(s).

    ``start`` is one (x, y) cell or an iterable of cells.  Domains only ever
    shrink.  Returns False as soon as any cell's domain empties (the grid is
    then contradictory); True once the worklist drains.
    """
    if journal is None:
        journal = []
    tables = ps.adjacency()
    w, h = state.width, state.height
    if isinstance(start, tuple) and len(start) == 2 and isinstance(start[0], int):
        start = [start]
    queue = deque(start)
    queued = np.zeros((h, w), bool)
    for x, y in queue:
        queued[y, x] = True
    while queue:
        x, y = queue.popleft()
        queued[y, x] = False
        if state.counts[y, x] == 0:
            return False
        here = state.wave[y, x]
        for d, (dx, dy) in enumerate(DIRS):
            nx, ny = x + dx, y + dy
            if state.periodic:
                nx %= w
                ny %= h
            elif not (0 <= nx < w and 0 <= ny < h):
                continue
            supported = tables[d][here].any(axis=0)
            doomed = state.wave[ny, nx] & ~supported
            if doomed.any():
                state.ban_many(nx, ny, doomed, journal)
                if state.counts[ny, nx] == 0:
                    return False
                if not queued[ny, nx]:
                    queued[ny, nx] = True
                    queue.append((nx, ny))
    return True


# ---------------------------------------------------------------------------
# the full solve


@dataclass(frozen=True)
class WfcOptions:
    """Knobs for one synthesis run; ranges are checked at construction."""

    tile_size: int = 1
    pattern_width: int = 3
    seed: int = 0
    max_attempts: int = 20
    backtracking: str = "chronological"  # or "none"
    step_budget: int | None = None  # per-attempt undo budget; default 10x cells
    periodic_input: bool = False
    periodic_output: bool = False
    symmetry: frozenset = frozenset()

    def __post_init__(self):
        if not (TILE_RANGE[0] <= self.tile_size <= TILE_RANGE[1]):
            raise InvalidInputError(
                f"tile_size must be in {TILE_RANGE}, got {self.tile_size}"
            )
        if not (WIDTH_RANGE[0] <= self.pattern_width <= WIDTH_RANGE[1]):
            raise InvalidInputError(
                f"pattern_width must be in {WIDTH_RANGE}, got {self.pattern_width}"
            )
        if self.max_attempts < 1:
            raise InvalidInputError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.backtracking not in ("none", "chronological"):
            raise InvalidInputError(
                f"backtracking must be 'none' or 'chronological', got {self.backtracking!r}"
            )
        if self.step_budget is not None and self.step_budget < 1:
            raise InvalidInputError("step_budget must be positive when given")
        bad = set(self.symmetry) - SYMMETRY_FLAGS
        if bad:
            raise InvalidInputError(f"unknown symmetry flags {sorted(bad)}")
        make_rng(self.seed)  # validates range
        object.__setattr__(self, "symmetry", frozenset(self.symmetry))


@dataclass(frozen=True)
class WfcFailure:
    """All attempts exhausted; counters describe the whole run."""

    attempts: int
    contradictions: int


@dataclass(frozen=True, eq=False)
class WfcResult:
    grid: LabelGrid  # upsampled to the requested output dims
    pre_upsample: LabelGrid  # one cell per solved anchor
    pattern_set: PatternSet
    attempts: int
    contradictions: int


def _solve_attempt(state: WaveState, ps: PatternSet, rng: np.random.Generator,
                   backtrack: bool, budget: int) -> tuple[bool, int]:
    """One attempt; returns (solved, contradiction count)."""
    contradictions = 0
    levels: list[list] = [[]]
    decisions: list[tuple[int, int, int]] = []
    undone = 0

    all_cells = [(x, y) for y in range(state.height) for x in range(state.width)]
    if not propagate(state, ps, all_cells, levels[0]):
        return False, 1

    while not state.is_solved():
        level: list = []
        x, y, p = observe(state, ps, rng, level)
        levels.append(level)
        decisions.append((x, y, p))
        ok = propagate(state, ps, (x, y), level)
        while not ok:
            contradictions += 1
            if not backtrack or not decisions:
                return False, max(contradictions, 1)
            undone += 1
            if undone > budget:
                return False, contradictions
            lvl = levels.pop()
            bx, by, bp = decisions.pop()
            state.undo(lvl)
            current = levels[-1]
            state.ban(bx, by, bp, current)  # the failed choice is off the table
            if state.counts[by, bx] == 0:
                ok = False
                continue
            ok = propagate(state, ps, (bx, by), current)
    return True, contradictions


def _decode(state: WaveState, ps: PatternSet) -> LabelGrid:
    idx = np.argmax(state.wave, axis=2)
    labels = ps.patterns[idx, 0, 0]
    return LabelGrid.from_array(labels.astype(np.int32))


def run_wfc(reference: LabelGrid, opts: WfcOptions, out_dims: tuple[int, int]):
    """Synthesize an out_dims grid in the texture of the reference.

    ``out_dims`` is the final (width, height); ``opts.tile_size`` must
    divide both, since the canvas is solved at 1/tile_size scale and block
    upsampled.  Returns a WfcResult, or a WfcFailure once ``max_attempts``
    seeded attempts (seed, seed+1, ...) all dead-end.
    """
    out_w, out_h = int(out_dims[0]), int(out_dims[1])
    if out_w < 1 or out_h < 1:
        raise InvalidInputError(f"output dims must be positive, got {out_dims}")
    t = opts.tile_size
    if out_w % t or out_h % t:
        raise InvalidInputError(
            f"tile_size {t} must divide output dims {out_w}x{out_h} exactly"
        )
    small = downsample(reference, t)
    ps = extract_patterns(small, opts.pattern_width, opts.periodic_input, opts.symmetry)
    wave_w, wave_h = out_w // t, out_h // t
    budget = opts.step_budget if opts.step_budget is not None else 10 * wave_w * wave_h
    backtrack = opts.backtracking == "chronological"

    total_contradictions = 0
    for attempt in range(opts.max_attempts):
        rng = make_rng((opts.seed + attempt) % 2**64)
        state = WaveState(wave_w, wave_h, ps, opts.periodic_output, rng)
        solved, contradictions = _solve_attempt(state, ps, rng, backtrack, budget)
        total_contradictions += contradictions
        if solved:
            pre = _decode(state, ps)
            final = LabelGrid.from_array(_upsample(pre.cells, t))
            return WfcResult(
                grid=final,
                pre_upsample=pre,
                pattern_set=ps,
                attempts=attempt + 1,
                contradictions=total_contradictions,
            )
    return WfcFailure(attempts=opts.max_attempts, contradictions=total_contradictions)


# ---------------------------------------------------------------------------
# parameter sweep


@dataclass(frozen=True, eq=False)
class SweepCell:
    tile_size: int
    width: int
    status: str  # "ok" | "failed" | "error"
    attempts: int
    contradictions: int
    millis: float
    grid: LabelGrid | None


def parameter_sweep(reference: LabelGrid, tile_sizes, widths,
                    out_dims: tuple[int, int], seed: int, *,
                    max_attempts: int = 8,
                    backtracking: str = "chronological",
                    periodic_input: bool = False,
                    periodic_output: bool = False,
                    symmetry: frozenset = frozenset()) -> list[SweepCell]:
    """Run one synthesis per (tile_size, width) pair.

    Geometrically impossible combinations (tile does not divide the output
    dims, downsampled reference smaller than the window) show up as
    status="error" cells rather than aborting the sweep; attempt exhaustion
    is status="failed".  Cell seeds derive deterministically from ``seed``.
    """
    tile_sizes = [int(t) for t in tile_sizes]
    widths = [int(w) for w in widths]
    if not tile_sizes or not widths:
        raise InvalidInputError("sweep needs at least one tile size and one width")
    for t in tile_sizes:
        if not (TILE_RANGE[0] <= t <= TILE_RANGE[1]):
            raise InvalidInputError(f"tile_size must be in {TILE_RANGE}, got {t}")
    for wd in widths:
        if not (WIDTH_RANGE[0] <= wd <= WIDTH_RANGE[1]):
            raise InvalidInputError(f"width must be in {WIDTH_RANGE}, got {wd}")

    seed_rng = make_rng(seed)
    cells = []
    for t in tile_sizes:
        for wd in widths:
            cell_seed = int(seed_rng.integers(0, 2**64, dtype=np.uint64))
            t0 = time.perf_counter()
            status, attempts, contradictions, grid = "ok", 0, 0, None
            try:
                opts = WfcOptions(
                    tile_size=t,
                    pattern_width=wd,
                    seed=cell_seed,
                    max_attempts=max_attempts,
                    backtracking=backtracking,
                    periodic_input=periodic_input,
                    periodic_output=periodic_output,
                    symmetry=symmetry,
                )
                outcome = run_wfc(reference, opts, out_dims)
            except InvalidInputError:
                status = "error"
            else:
                if isinstance(outcome, WfcFailure):
                    status = "failed"
                    attempts = outcome.attempts
                    contradictions = outcome.contradictions
                else:
                    attempts = outcome.attempts
                    contradictions = outcome.contradictions
                    grid = outcome.grid
            millis = (time.perf_counter() - t0) * 1000.0
            cells.append(SweepCell(t, wd, status, attempts, contradictions, millis, grid))
    return cells


_SWEEP_FILLS = {"error": (70, 70, 70), "failed": (150, 60, 60)}
SWEEP_HEADER = ["tile_size", "width", "status", "attempts", "contradictions", "millis"]


def write_sweep_outputs(cells: list[SweepCell], palette: Palette,
                        out_dims: tuple[int, int], out_dir) -> None:
    """montage.png (tile sizes as rows, widths as columns) plus sweep.csv."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tile_sizes = sorted({c.tile_size for c in cells})
    widths = sorted({c.width for c in cells})
    cw, ch = int(out_dims[0]), int(out_dims[1])
    gap = 2
    rows, cols = len(tile_sizes), len(widths)
    canvas = np.full(
        (rows * ch + (rows + 1) * gap, cols * cw + (cols + 1) * gap, 3), 255, np.uint8
    )
    pos = {(t, w): (i, j) for i, t in enumerate(tile_sizes) for j, w in enumerate(widths)}
    for c in cells:
        i, j = pos[(c.tile_size, c.width)]
        y0 = gap + i * (ch + gap)
        x0 = gap + j * (cw + gap)
        if c.grid is not None:
            tile = render(c.grid, palette)
        else:
            tile = np.full((ch, cw, 3), _SWEEP_FILLS[c.status], np.uint8)
        canvas[y0 : y0 + ch, x0 : x0 + cw] = tile
    save_png(out / "montage.png", canvas)
    save_csv(
        out / "sweep.csv",
        SWEEP_HEADER,
        [
            [c.tile_size, c.width, c.status, c.attempts, c.contradictions,
             f"{c.millis:.3f}"]
            for c in cells
        ],
    )
