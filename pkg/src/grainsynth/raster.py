"""Label rasters, palettes, color quantization, and PNG/CSV plumbing.

Everything downstream works on a ``LabelGrid``: a dense row-major grid of
small integer labels plus an optional in-band blank label.  A ``Palette``
maps labels to RGB colors.  Quantization reduces an RGB image to at most
``k`` labels with a deterministic median-cut, so the same image always
yields the same grid and palette.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InvalidInputError, InputOutputError

__all__ = [
    "LabelGrid",
    "Palette",
    "PaletteEntry",
    "make_rng",
    "quantize_image",
    "render",
    "match_to_palette",
    "default_palette",
    "load_png",
    "save_png",
    "save_csv",
    "load_palette_csv",
    "save_palette_csv",
]

# Blank cells render as pure black; a palette that itself contains pure
# black would make the rendering ambiguous, so render() rejects that combo.
BLANK_RGB = (0, 0, 0)


def make_rng(seed: int) -> np.random.Generator:
    """Return the package-wide deterministic generator (PCG64).

    The same seed always yields the same stream, independent of platform.
    All randomized operations in this package take either a seed or a
    generator created here; none consult the wall clock.
    """
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise InvalidInputError(f"seed must be an integer, got {seed!r}")
    if seed < 0 or seed >= 2**64:
        raise InvalidInputError(f"seed must fit in 64 bits, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Immutable 2D grid of integer labels.

    ``cells`` has shape ``(height, width)`` (row-major).  ``blank_label``,
    when set, marks cells that carry no label yet (growth frontiers,
    unindexed pixels); it is an ordinary small integer reserved by the
    caller, conventionally one past the last palette label.
    """

    width: int
    height: int
    cells: np.ndarray
    blank_label: int | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(
                f"grid dims must be positive, got {self.width}x{self.height}"
            )
        # private copy: freezing a caller-owned array would be a rude surprise
        arr = np.array(self.cells, dtype=np.int32, order="C", copy=True)
        if arr.shape != (self.height, self.width):
            raise InvalidInputError(
                f"cells shape {arr.shape} does not match dims "
                f"(height={self.height}, width={self.width})"
            )
        if arr.size and arr.min() < 0:
            raise InvalidInputError("labels must be non-negative")
        if self.blank_label is not None and self.blank_label < 0:
            raise InvalidInputError("blank_label must be non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "cells", arr)

    @classmethod
    def from_array(cls, arr, blank_label: int | None = None) -> "LabelGrid":
        a = np.asarray(arr)
        if a.ndim != 2:
            raise InvalidInputError(f"expected a 2D array, got shape {a.shape}")
        return cls(width=a.shape[1], height=a.shape[0], cells=a, blank_label=blank_label)

    @classmethod
    def full(cls, width: int, height: int, label: int,
             blank_label: int | None = None) -> "LabelGrid":
        return cls(width, height, np.full((height, width), label, np.int32), blank_label)

    def __eq__(self, other):
        if not isinstance(other, LabelGrid):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.blank_label == other.blank_label
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None  # mutable-array semantics

    @property
    def blank_mask(self) -> np.ndarray:
        if self.blank_label is None:
            return np.zeros((self.height, self.width), bool)
        return self.cells == self.blank_label

    def blank_count(self) -> int:
        return int(self.blank_mask.sum())

    def validate_labels(self, palette_size: int) -> None:
        """Every non-blank cell must name a palette entry."""
        vals = self.cells[~self.blank_mask]
        if vals.size and int(vals.max()) >= palette_size:
            raise InvalidInputError(
                f"label {int(vals.max())} out of range for palette of size {palette_size}"
            )

    def label_counts(self) -> dict[int, int]:
        """Occurrences of each non-blank label, ascending by label."""
        vals = self.cells[~self.blank_mask]
        if vals.size == 0:
            return {}
        counts = np.bincount(vals)
        return {int(l): int(c) for l, c in enumerate(counts) if c > 0}

    def tobytes(self) -> bytes:
        return self.cells.tobytes()


@dataclass(frozen=True)
class PaletteEntry:
    label: int
    color: tuple[int, int, int]
    name: str


@dataclass(frozen=True)
class Palette:
    """Ordered color table; labels are consecutive from zero."""

    entries: tuple[PaletteEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise InvalidInputError("palette must have at least one entry")
        for i, e in enumerate(self.entries):
            if e.label != i:
                raise InvalidInputError(
                    f"palette labels must be consecutive from 0, entry {i} has label {e.label}"
                )
            if len(e.color) != 3 or any(not (0 <= c <= 255) for c in e.color):
                raise InvalidInputError(f"bad color {e.color!r} at label {i}")
        colors = [tuple(e.color) for e in self.entries]
        if len(set(colors)) != len(colors):
            raise InvalidInputError("palette colors must be pairwise distinct")

    @classmethod
    def from_colors(cls, colors, names=None) -> "Palette":
        entries = []
        for i, c in enumerate(colors):
            c = tuple(int(v) for v in c)
            name = names[i] if names is not None else "#%02x%02x%02x" % c
            entries.append(PaletteEntry(i, c, name))
        return cls(tuple(entries))

    @property
    def size(self) -> int:
        return len(self.entries)

    def color_array(self) -> np.ndarray:
        return np.array([e.color for e in self.entries], dtype=np.uint8)

    def has_color(self, rgb) -> bool:
        rgb = tuple(int(v) for v in rgb)
        return any(tuple(e.color) == rgb for e in self.entries)


def default_palette(k: int) -> Palette:
    """A deterministic palette of k visually distinct colors (never pure black)."""
    if k < 1:
        raise InvalidInputError(f"palette size must be >= 1, got {k}")
    import colorsys

    colors, seen = [], set()
    i = 0
    while len(colors) < k:
        hue = (i * 0.61803398875) % 1.0  # golden-ratio hop around the wheel
        val = 0.95 if i % 2 == 0 else 0.65
        r, g, b = colorsys.hsv_to_rgb(hue, 0.85, val)
        c = (int(r * 255), int(g * 255), int(b * 255))
        if c != BLANK_RGB and c not in seen:
            seen.add(c)
            colors.append(c)
        i += 1
    return Palette.from_colors(colors)


# ---------------------------------------------------------------------------
# quantization


def _split_box(colors: np.ndarray, counts: np.ndarray, box: np.ndarray):
    """Split one median-cut box (indices into the distinct-color table).

    The split channel is the widest one (ties: lowest channel index); the
    cut sits after the distinct color containing the median pixel, where an
    even pixel count takes the lower middle.  Colors are atomic: a distinct
    color never straddles the cut.
    """
    sub = colors[box]
    spans = sub.max(axis=0).astype(np.int64) - sub.min(axis=0).astype(np.int64)
    chan = int(np.argmax(spans))  # argmax -> first max -> lowest channel wins ties
    # order by channel value, then full RGB for a stable tie order
    order = np.lexsort((sub[:, 2], sub[:, 1], sub[:, 0], sub[:, chan]))
    box = box[order]
    cnt = counts[box]
    cum = np.cumsum(cnt)
    total = int(cum[-1])
    median_pix = (total - 1) // 2  # lower middle at even counts
    cut = int(np.searchsorted(cum, median_pix, side="right"))
    if cut >= len(box) - 1:
        cut = len(box) - 2  # keep the right side non-empty
    return box[: cut + 1], box[cut + 1 :]


def quantize_image(pixels: np.ndarray, k: int) -> tuple[LabelGrid, Palette]:
    """Median-cut quantization of an RGB image to at most ``k`` labels.

    Parameters
    ----------
    pixels : (H, W, 3) uint8 array
    k : maximum palette size, >= 1

    Returns
    -------
    (LabelGrid, Palette)
        Every cell's label maps to the palette color nearest its original
        pixel in squared RGB distance (ties: lowest label).  Labels are
        numbered by first occurrence in row-major pixel order, so equal
        images always quantize identically.  If the image has at most ``k``
        distinct colors the mapping is lossless.
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) pixels, got shape {pixels.shape}")
    if pixels.size == 0:
        raise InvalidInputError("cannot quantize an empty image")
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidInputError(f"k must be a positive integer, got {k!r}")
    pixels = pixels.astype(np.uint8, copy=False)
    h, w, _ = pixels.shape

    flat = pixels.reshape(-1, 3)
    colors, inverse, counts = np.unique(
        flat, axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.ravel()

    boxes = [np.arange(len(colors))]
    while len(boxes) < k:
        # split the most populous box that still holds >= 2 distinct colors
        weights = [counts[b].sum() if len(b) > 1 else -1 for b in boxes]
        i = int(np.argmax(weights))
        if weights[i] < 0:
            break
        left, right = _split_box(colors, counts, boxes[i])
        boxes[i] = left
        boxes.append(right)

    # candidate palette colors: pixel-weighted mean per box, rounded half-up
    cand = []
    for b in boxes:
        tot = int(counts[b].sum())
        sums = (colors[b].astype(np.int64) * counts[b][:, None]).sum(axis=0)
        cand.append(tuple(int((s + tot // 2) // tot) for s in sums))
    # identical means collapse into one entry (first box wins)
    uniq, seen = [], set()
    for c in cand:
        if c not in seen:
            seen.add(c)
            uniq.append(c)
    cand_arr = np.array(uniq, dtype=np.int64)

    # nearest candidate per distinct color; argmin keeps the lowest index on ties
    d = ((colors[:, None, :].astype(np.int64) - cand_arr[None, :, :]) ** 2).sum(axis=2)
    color_to_cand = np.argmin(d, axis=1)
    cand_per_pixel = color_to_cand[inverse]

    # relabel by first occurrence in row-major order; unused candidates drop out
    first_seen, remap = [], {}
    for c in cand_per_pixel:
        c = int(c)
        if c not in remap:
            remap[c] = len(first_seen)
            first_seen.append(c)
        if len(first_seen) == len(cand_arr):
            break
    lut = np.full(len(cand_arr), -1, np.int32)
    for old, new in remap.items():
        lut[old] = new
    labels = lut[cand_per_pixel].reshape(h, w)

    palette = Palette.from_colors([tuple(int(v) for v in cand_arr[c]) for c in first_seen])
    return LabelGrid.from_array(labels), palette


# ---------------------------------------------------------------------------
# rendering and exact palette matching


def render(grid: LabelGrid, palette: Palette) -> np.ndarray:
    """Map labels to palette colors; blank cells become pure black.

    Raises if a label exceeds the palette or if blanks are present while the
    palette itself contains pure black (the sentinel would be ambiguous).
    """
    grid.validate_labels(palette.size)
    blanks = grid.blank_mask
    if blanks.any() and palette.has_color(BLANK_RGB):
        raise InvalidInputError(
            "palette contains pure black, which is reserved for blank cells"
        )
    lut = np.zeros((palette.size + 1, 3), np.uint8)
    lut[: palette.size] = palette.color_array()
    lut[palette.size] = BLANK_RGB
    idx = np.where(blanks, palette.size, np.minimum(grid.cells, palette.size - 1))
    return lut[idx]


def match_to_palette(pixels: np.ndarray, palette: Palette,
                     blank_label: int | None = None) -> LabelGrid:
    """Inverse of render(): recover labels from an exactly palette-colored image.

    With ``blank_label`` set, pure black pixels map to that label (only
    valid while the palette has no black entry).  Any other color not in
    the palette is an error naming the color and its position.
    """
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) pixels, got shape {pixels.shape}")
    if blank_label is not None and palette.has_color(BLANK_RGB):
        raise InvalidInputError("palette contains pure black; blank recovery is ambiguous")
    code = (
        pixels[..., 0].astype(np.int64) << 16
    ) | (pixels[..., 1].astype(np.int64) << 8) | pixels[..., 2].astype(np.int64)
    table = {}
    for e in palette.entries:
        r, g, b = e.color
        table[(r << 16) | (g << 8) | b] = e.label
    if blank_label is not None:
        table[0] = blank_label
    labels = np.empty(code.shape, np.int32)
    for key in np.unique(code):
        key = int(key)
        if key not in table:
            ys, xs = np.nonzero(code == key)
            r, g, b = (key >> 16) & 255, (key >> 8) & 255, key & 255
            raise InvalidInputError(
                f"pixel ({int(xs[0])}, {int(ys[0])}) has color ({r}, {g}, {b}) "
                "not present in the palette"
            )
        labels[code == key] = table[key]
    return LabelGrid.from_array(labels, blank_label=blank_label)


# ---------------------------------------------------------------------------
# file I/O


def load_png(path) -> np.ndarray:
    """Read an 8-bit RGB(A) PNG as an (H, W, 3) array; alpha is discarded."""
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt != "PNG":
                raise InputOutputError(f"{path}: unsupported format {fmt or 'unknown'}, expected PNG")
            mode = im.mode
            if mode not in ("RGB", "RGBA"):
                raise InputOutputError(
                    f"{path}: unsupported PNG mode {mode!r}, expected 8-bit RGB or RGBA"
                )
            im.load()
            arr = np.asarray(im)
    except InputOutputError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise InputOutputError(f"cannot read PNG {path}: {e}") from e
    return np.ascontiguousarray(arr[..., :3])


def save_png(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) pixels, got shape {pixels.shape}")
    try:
        Image.fromarray(pixels, "RGB").save(path, format="PNG")
    except OSError as e:
        raise InputOutputError(f"cannot write PNG {path}: {e}") from e


def save_csv(path, header, rows) -> None:
    """Write UTF-8, LF-terminated CSV with a header row."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise InputOutputError(f"cannot write CSV {path}: {e}") from e


def load_csv(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as e:
        raise InputOutputError(f"cannot read CSV {path}: {e}") from e
    if not rows:
        raise InputOutputError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def save_palette_csv(path, palette: Palette) -> None:
    save_csv(
        path,
        ["label", "r", "g", "b", "name"],
        [[e.label, e.color[0], e.color[1], e.color[2], e.name] for e in palette.entries],
    )


def load_palette_csv(path) -> Palette:
    header, rows = load_csv(path)
    if header[:4] != ["label", "r", "g", "b"]:
        raise InputOutputError(f"{path}: not a palette CSV (header {header})")
    entries = []
    try:
        for row in rows:
            label = int(row[0])
            color = (int(row[1]), int(row[2]), int(row[3]))
            name = row[4] if len(row) > 4 else "#%02x%02x%02x" % color
            entries.append(PaletteEntry(label, color, name))
    except (ValueError, IndexError) as e:
        raise InputOutputError(f"{path}: malformed palette row: {e}") from e
    entries.sort(key=lambda e: e.label)
    return Palette(tuple(entries))
