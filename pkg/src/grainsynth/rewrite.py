"""Grid rewriting with small pattern rules, in the style of sequential
rule-based procedural generators.

A rule maps an input patch (with ``?`` wildcards) to an output patch (with
``.`` keep-markers).  Nodes group rules and run in one of two regimes:

* ``one``  - pick a single uniformly-random placement of the first rule
             that matches anywhere, apply it.
* ``all``  - pool every placement of every rule in the node and apply a
             maximal conflict-free subset in seeded random order.

A program is an ordered node list with restart-from-the-top sequencing: after
any node acts, control returns to the first node; the run ends when no node
can act (fixpoint) or a step cap is hit.

The flagship program built here grows grains outward from seed cells, one
ring per ``all`` step, which reproduces a nearest-seed tessellation under
the 4-neighbor (Manhattan) geodesic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .raster import LabelGrid
from .tessellation import CentroidSet

__all__ = [
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
    "parse_program",
    "format_program",
]

WILDCARD = -1  # input cell that matches any label
KEEP = -2  # output cell that leaves the grid untouched

MAX_RULE_SIDE = 3


def _as_rule_array(value, *, is_input: bool) -> np.ndarray:
    arr = np.array(value, dtype=np.int32, copy=True)  # rules freeze their patches
    if arr.ndim != 2:
        raise InvalidInputError(f"rule patches must be 2D, got shape {arr.shape}")
    h, w = arr.shape
    if not (1 <= h <= MAX_RULE_SIDE and 1 <= w <= MAX_RULE_SIDE):
        raise InvalidInputError(
            f"rule patches are limited to {MAX_RULE_SIDE}x{MAX_RULE_SIDE}, got {h}x{w}"
        )
    low = KEEP if not is_input else WILDCARD
    if arr.min() < low or (is_input and (arr == KEEP).any()) or (
        not is_input and (arr == WILDCARD).any()
    ):
        kind = "input" if is_input else "output"
        raise InvalidInputError(f"invalid sentinel in rule {kind} patch")
    return arr


@dataclass(frozen=True, eq=False)
class RewriteRule:
    """One rewrite: ``input`` patch -> ``output`` patch of the same shape.

    Symmetry flags expand the rule into rotated / mirrored variants at match
    time.  A rule must be able to change something: at least one output cell
    is a literal that either overwrites a wildcard or differs from the input
    literal underneath.
    """

    input: np.ndarray
    output: np.ndarray
    rotations: bool = False
    reflections: bool = False

    def __post_init__(self):
        inp = _as_rule_array(self.input, is_input=True)
        out = _as_rule_array(self.output, is_input=False)
        if inp.shape != out.shape:
            raise InvalidInputError(
                f"rule input {inp.shape} and output {out.shape} shapes differ"
            )
        effective = (out != KEEP) & ((inp == WILDCARD) | (out != inp))
        if not effective.any():
            raise InvalidInputError("rule can never change the grid (trivial rule)")
        inp.flags.writeable = False
        out.flags.writeable = False
        object.__setattr__(self, "input", inp)
        object.__setattr__(self, "output", out)
        object.__setattr__(self, "_variants", None)

    def variants(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Distinct (input, output) orientations in a fixed order.

        Order: identity, then 90/180/270 rotations when enabled, then the
        mirrored copies of those when reflections are enabled.  Duplicates
        (symmetric patches) are kept once, first occurrence wins.  The list
        is computed once and cached.
        """
        cached = object.__getattribute__(self, "_variants")
        if cached is not None:
            return cached
        base = [(self.input, self.output)]
        if self.rotations:
            for k in (1, 2, 3):
                base.append((np.rot90(self.input, k), np.rot90(self.output, k)))
        if self.reflections:
            base = base + [(np.fliplr(i), np.fliplr(o)) for i, o in base]
        out, seen = [], set()
        for i, o in base:
            key = (i.shape, i.tobytes(), o.tobytes())
            if key not in seen:
                seen.add(key)
                out.append((np.ascontiguousarray(i), np.ascontiguousarray(o)))
        object.__setattr__(self, "_variants", out)
        return out


@dataclass(frozen=True)
class RuleNode:
    kind: str  # "one" | "all"
    rules: tuple[RewriteRule, ...]
    step_limit: int | None = None  # max times this node may act per run

    def __post_init__(self):
        if self.kind not in ("one", "all"):
            raise InvalidInputError(f"node kind must be 'one' or 'all', got {self.kind!r}")
        if not self.rules:
            raise InvalidInputError("node must hold at least one rule")
        if self.step_limit is not None and self.step_limit < 1:
            raise InvalidInputError("step_limit must be positive when given")
        object.__setattr__(self, "rules", tuple(self.rules))


@dataclass(frozen=True)
class RuleProgram:
    nodes: tuple[RuleNode, ...]

    def __post_init__(self):
        if not self.nodes:
            raise InvalidInputError("program must hold at least one node")
        object.__setattr__(self, "nodes", tuple(self.nodes))


# ---------------------------------------------------------------------------
# matching


def _variant_match_mask(cells: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """Boolean (H-h+1, W-w+1) mask of positions where pattern matches."""
    gh, gw = cells.shape
    h, w = pattern.shape
    if gh < h or gw < w:
        return np.zeros((0, 0), bool)
    mask = np.ones((gh - h + 1, gw - w + 1), bool)
    for dy in range(h):
        for dx in range(w):
            v = pattern[dy, dx]
            if v == WILDCARD:
                continue
            mask &= cells[dy : dy + mask.shape[0], dx : dx + mask.shape[1]] == v
    return mask


def find_matches(grid: LabelGrid, rule: RewriteRule) -> list[tuple[int, int, int]]:
    """All placements of the rule: (x, y, variant_index) triples.

    Enumeration order is row-major by anchor position (the variant's
    top-left cell), then by variant index, and is fully deterministic.
    """
    cells = grid.cells
    found = []
    for vi, (pat, _) in enumerate(rule.variants()):
        mask = _variant_match_mask(cells, pat)
        if mask.size == 0:
            continue
        ys, xs = np.nonzero(mask)
        for y, x in zip(ys.tolist(), xs.tolist()):
            found.append((x, y, vi))
    found.sort(key=lambda t: (t[1], t[0], t[2]))
    return found


def _apply_placement(cells: np.ndarray, rule: RewriteRule, placement) -> None:
    x, y, vi = placement
    _, out = rule.variants()[vi]
    h, w = out.shape
    region = cells[y : y + h, x : x + w]
    write = out != KEEP
    region[write] = out[write]


def _constrained_cells(rule: RewriteRule, placement) -> list[tuple[int, int]]:
    """Cells a placement depends on or modifies: literal reads plus writes."""
    x, y, vi = placement
    inp, out = rule.variants()[vi]
    pins = (inp != WILDCARD) | (out != KEEP)
    ys, xs = np.nonzero(pins)
    return [(x + int(dx), y + int(dy)) for dy, dx in zip(ys, xs)]


def apply_one(grid: LabelGrid, node: RuleNode, rng: np.random.Generator
              ) -> tuple[LabelGrid, bool]:
    """Apply one uniformly-random placement of the first rule that matches.

    Returns (new grid, acted).  With no match anywhere the grid is returned
    unchanged and acted is False.
    """
    for rule in node.rules:
        matches = find_matches(grid, rule)
        if matches:
            pick = matches[int(rng.integers(len(matches)))]
            cells = grid.cells.copy()
            _apply_placement(cells, rule, pick)
            return LabelGrid.from_array(cells, grid.blank_label), True
    return grid, False


def apply_all(grid: LabelGrid, node: RuleNode, rng: np.random.Generator
              ) -> tuple[LabelGrid, bool]:
    """Apply a maximal conflict-free subset of all placements in the node.

    Placements of every rule are pooled against the step's starting grid,
    visited in seeded random order, and applied unless an earlier placement
    already wrote one of their constrained cells (literal-input or written
    cells); skipped placements simply lose the race.  One call advances
    every live match front a single synchronous step.
    """
    pool: list[tuple[RewriteRule, tuple[int, int, int]]] = []
    for rule in node.rules:
        for placement in find_matches(grid, rule):
            pool.append((rule, placement))
    if not pool:
        return grid, False
    order = rng.permutation(len(pool))
    cells = grid.cells.copy()
    written = np.zeros(cells.shape, bool)
    acted = False
    for oi in order:
        rule, placement = pool[int(oi)]
        pins = _constrained_cells(rule, placement)
        if any(written[y, x] for x, y in pins):
            continue
        x0, y0, vi = placement
        _, out = rule.variants()[vi]
        h, w = out.shape
        _apply_placement(cells, rule, placement)
        wmask = out != KEEP
        written[y0 : y0 + h, x0 : x0 + w] |= wmask
        acted = True
    return LabelGrid.from_array(cells, grid.blank_label), acted


def run_program(grid: LabelGrid, program: RuleProgram, rng: np.random.Generator,
                max_steps: int = 100_000) -> tuple[LabelGrid, int, str]:
    """Run to fixpoint or step cap.

    Each step executes the first node (in program order) able to act, then
    control returns to the top of the program.  Returns
    (final grid, steps executed, "fixpoint" | "step_cap").
    """
    if max_steps < 1:
        raise InvalidInputError(f"max_steps must be >= 1, got {max_steps}")
    node_uses = [0] * len(program.nodes)
    steps = 0
    while steps < max_steps:
        acted = False
        for i, node in enumerate(program.nodes):
            if node.step_limit is not None and node_uses[i] >= node.step_limit:
                continue
            fn = apply_one if node.kind == "one" else apply_all
            grid, did = fn(grid, node, rng)
            if did:
                node_uses[i] += 1
                steps += 1
                acted = True
                break
        if not acted:
            return grid, steps, "fixpoint"
    return grid, steps, "step_cap"


# ---------------------------------------------------------------------------
# grain growth


def grain_growth_program(cs: CentroidSet, neighborhood: int = 4
                         ) -> tuple[LabelGrid, RuleProgram]:
    """Seed grid plus growth program for outward grain growth.

    The grid starts blank except for one stamped cell per centroid (the cell
    containing the point).  The program is a single ``all`` node holding,
    for every seed label, a rule turning a blank cell next to that label
    into the label; rotations cover the 4-neighborhood, and
    ``neighborhood=8`` adds diagonal variants (Chebyshev growth).  Run to
    fixpoint, every non-tied cell ends up with the label of its nearest
    seed under the corresponding grid geodesic.
    """
    if neighborhood not in (4, 8):
        raise InvalidInputError(f"neighborhood must be 4 or 8, got {neighborhood}")
    if len(cs.dims) != 2:
        raise InvalidInputError("grain growth expects a 2D centroid set")
    w, h = cs.dims
    blank = int(cs.labels.max()) + 1
    cells = np.full((h, w), blank, np.int32)
    seen = set()
    for i in range(cs.count):
        x = min(int(cs.positions[i, 0]), w - 1)
        y = min(int(cs.positions[i, 1]), h - 1)
        if (x, y) in seen:
            raise InvalidInputError(
                f"duplicate centroid cell ({x}, {y}); seeds must occupy distinct cells"
            )
        seen.add((x, y))
        cells[y, x] = int(cs.labels[i])

    rules = []
    for label in sorted(set(int(l) for l in cs.labels)):
        rules.append(
            RewriteRule(
                input=np.array([[label, blank]], np.int32),
                output=np.array([[KEEP, label]], np.int32),
                rotations=True,
            )
        )
        if neighborhood == 8:
            rules.append(
                RewriteRule(
                    input=np.array([[label, WILDCARD], [WILDCARD, blank]], np.int32),
                    output=np.array([[KEEP, KEEP], [KEEP, label]], np.int32),
                    rotations=True,
                )
            )
    program = RuleProgram((RuleNode("all", tuple(rules)),))
    return LabelGrid.from_array(cells, blank_label=blank), program


# ---------------------------------------------------------------------------
# plain-text serialization
#
# Programs serialize as node headers "[one]" / "[all]" (optionally with a
# step limit, e.g. "[all 12]") followed by one rule per line:
#
#     IN=>OUT[;flags]
#
# Patches spell one character per cell with rows separated by "/": digits
# 0-9 then letters a-z encode labels 0..35, "?" is the input wildcard and
# "." the output keep-marker.  Flags are comma-separated from {rot,mirror}.
# "#" starts a comment; blank lines are ignored.

_CHARS = "0123456789abcdefghijklmnopqrstuvwxyz"


def _label_to_char(v: int) -> str:
    if 0 <= v < len(_CHARS):
        return _CHARS[v]
    raise InvalidInputError(f"label {v} cannot be serialized (max {len(_CHARS) - 1})")


def _patch_to_text(arr: np.ndarray, *, is_input: bool) -> str:
    rows = []
    for row in arr:
        out = []
        for v in row:
            if v == WILDCARD:
                out.append("?")
            elif v == KEEP:
                out.append(".")
            else:
                out.append(_label_to_char(int(v)))
        rows.append("".join(out))
    return "/".join(rows)


def _text_to_patch(text: str, *, is_input: bool, line_no: int) -> np.ndarray:
    rows = text.split("/")
    width = len(rows[0])
    cells = []
    for row in rows:
        if len(row) != width or width == 0:
            raise InvalidInputError(f"line {line_no}: ragged rule patch {text!r}")
        vals = []
        for ch in row:
            if ch == "?":
                if not is_input:
                    raise InvalidInputError(f"line {line_no}: '?' only allowed in inputs")
                vals.append(WILDCARD)
            elif ch == ".":
                if is_input:
                    raise InvalidInputError(f"line {line_no}: '.' only allowed in outputs")
                vals.append(KEEP)
            elif ch in _CHARS:
                vals.append(_CHARS.index(ch))
            else:
                raise InvalidInputError(f"line {line_no}: bad cell character {ch!r}")
        cells.append(vals)
    return np.array(cells, np.int32)


def format_program(program: RuleProgram) -> str:
    lines = []
    for node in program.nodes:
        head = f"[{node.kind}"
        if node.step_limit is not None:
            head += f" {node.step_limit}"
        lines.append(head + "]")
        for rule in node.rules:
            text = (
                _patch_to_text(rule.input, is_input=True)
                + "=>"
                + _patch_to_text(rule.output, is_input=False)
            )
            flags = [f for f, on in (("rot", rule.rotations), ("mirror", rule.reflections)) if on]
            if flags:
                text += ";" + ",".join(flags)
            lines.append(text)
    return "\n".join(lines) + "\n"


def parse_program(text: str) -> RuleProgram:
    nodes: list[RuleNode] = []
    kind: str | None = None
    limit: int | None = None
    rules: list[RewriteRule] = []

    def flush(line_no):
        nonlocal kind, limit, rules
        if kind is not None:
            if not rules:
                raise InvalidInputError(f"line {line_no}: node [{kind}] has no rules")
            nodes.append(RuleNode(kind, tuple(rules), limit))
        kind, limit, rules = None, None, []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise InvalidInputError(f"line {line_no}: malformed node header {line!r}")
            flush(line_no)
            parts = line[1:-1].split()
            if not parts or parts[0] not in ("one", "all") or len(parts) > 2:
                raise InvalidInputError(f"line {line_no}: malformed node header {line!r}")
            kind = parts[0]
            if len(parts) == 2:
                try:
                    limit = int(parts[1])
                except ValueError:
                    raise InvalidInputError(
                        f"line {line_no}: bad step limit {parts[1]!r}"
                    ) from None
            continue
        if kind is None:
            raise InvalidInputError(f"line {line_no}: rule before any node header")
        if "=>" not in line:
            raise InvalidInputError(f"line {line_no}: rule must contain '=>'")
        body, _, flag_text = line.partition(";")
        lhs, _, rhs = body.partition("=>")
        flags = {f.strip() for f in flag_text.split(",") if f.strip()}
        bad = flags - {"rot", "mirror"}
        if bad:
            raise InvalidInputError(f"line {line_no}: unknown flags {sorted(bad)}")
        rules.append(
            RewriteRule(
                input=_text_to_patch(lhs.strip(), is_input=True, line_no=line_no),
                output=_text_to_patch(rhs.strip(), is_input=False, line_no=line_no),
                rotations="rot" in flags,
                reflections="mirror" in flags,
            )
        )
    flush(line_no="end")
    if not nodes:
        raise InvalidInputError("program text holds no nodes")
    return RuleProgram(tuple(nodes))
