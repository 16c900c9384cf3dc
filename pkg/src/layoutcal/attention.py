"""Attention-map data model, merging, discrepancy check and localization.

Maps carry one grid per prompt token.  Pre-softmax scores ("logits") and
post-softmax weights ("probs") are kept apart by a kind tag because the
check/locate math runs on probs while rectification edits logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KindMismatch, ShapeMismatch, WindowTooLarge
from .geometry import PixelRegion, RelBox, to_pixel_region

LOGITS = "logits"
PROBS = "probs"


@dataclass
class AttnMap:
    """Per-token attention grids at one layer: ``values[token, row, col]``."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ShapeMismatch(f"expected (tokens, H, W) array, got shape {v.shape}")
        if self.kind not in (LOGITS, PROBS):
            raise ValueError(f"kind must be 'logits' or 'probs', got {self.kind!r}")
        if not np.isfinite(v).all():
            raise ValueError("attention values must be finite")
        if self.kind == PROBS and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("probs values must lie in [0, 1]")
        v.setflags(write=False)
        self.values = v

    @property
    def tokens(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def token_grid(self, k: int) -> np.ndarray:
        return self.values[k]


@dataclass
class AttnStack:
    """Ordered per-layer maps for one denoising step."""

    layers: tuple[AttnMap, ...]
    step: int

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if not self.layers:
            raise ShapeMismatch("stack needs at least one layer")
        kinds = {m.kind for m in self.layers}
        if len(kinds) != 1:
            raise KindMismatch("stack mixes logits and probs layers")
        tokens = {m.tokens for m in self.layers}
        if len(tokens) != 1:
            raise ShapeMismatch("stack layers disagree on token count")

    @property
    def kind(self) -> str:
        return self.layers[0].kind

    @property
    def tokens(self) -> int:
        return self.layers[0].tokens

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def resolutions(self) -> list[tuple[int, int]]:
        return [(m.width, m.height) for m in self.layers]


def resize_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers, edges clamped.

    Works on a single (H, W) grid or a batch (..., H, W).
    """
    grid = np.asarray(grid, dtype=np.float64)
    in_h, in_w = grid.shape[-2:]
    if (in_h, in_w) == (out_h, out_w):
        return grid.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0.0, in_h - 1)
    sx = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0.0, in_w - 1)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (sy - y0).reshape(-1, 1)
    fx = (sx - x0).reshape(1, -1)
    tl = grid[..., y0[:, None], x0[None, :]]
    tr = grid[..., y0[:, None], x1[None, :]]
    bl = grid[..., y1[:, None], x0[None, :]]
    br = grid[..., y1[:, None], x1[None, :]]
    top = tl * (1 - fx) + tr * fx
    bot = bl * (1 - fx) + br * fx
    return top * (1 - fy) + bot * fy


def layered_merge(stack: AttnStack) -> AttnMap:
    """Average all layers after upsampling each to the first layer's size."""
    if stack.kind != PROBS:
        raise KindMismatch("layered_merge expects probs, got logits")
    h, w = stack.layers[0].height, stack.layers[0].width
    acc = np.zeros((stack.tokens, h, w), dtype=np.float64)
    for m in stack.layers:
        acc += resize_bilinear(m.values, h, w)
    acc /= stack.num_layers
    return AttnMap(np.clip(acc, 0.0, 1.0), PROBS)


def temporal_merge(maps: list[AttnMap]) -> AttnMap:
    """Element-wise mean over maps stored across the localization steps."""
    if not maps:
        raise ShapeMismatch("temporal_merge needs at least one map")
    shape = maps[0].values.shape
    for m in maps[1:]:
        if m.values.shape != shape:
            raise ShapeMismatch(
                f"map shapes differ: {m.values.shape} vs {shape}"
            )
    acc = np.zeros(shape, dtype=np.float64)
    for m in maps:
        acc += m.values
    acc /= len(maps)
    return AttnMap(acc, maps[0].kind)


def check_discrepancy(
    merged: AttnMap,
    boxes: dict[int, RelBox],
    threshold: float,
) -> dict[int, tuple[bool, float]]:
    """Per-token verdicts: is enough activation mass inside the target box?

    ``boxes`` maps token index to target box.  Returns token ->
    ``(misplaced, inside_fraction)`` where the fraction is the activation
    sum inside the box over the total; an all-zero map counts as misplaced.
    """
    if merged.kind != PROBS:
        raise KindMismatch("check_discrepancy expects probs")
    out: dict[int, tuple[bool, float]] = {}
    for k, box in boxes.items():
        if not (0 <= k < merged.tokens):
            raise ShapeMismatch(
                f"token index {k} out of range for {merged.tokens} tokens"
            )
        grid = merged.token_grid(k)
        region = to_pixel_region(box, merged.width, merged.height)
        total = float(grid.sum())
        if total <= 0.0:
            out[k] = (True, 0.0)
            continue
        rs, cs = region.as_slices()
        frac = float(grid[rs, cs].sum()) / total
        out[k] = (frac < threshold, frac)
    return out


def locate_region(grid: np.ndarray, window: tuple[int, int]) -> PixelRegion:
    """Find the window placement with the maximum activation sum.

    ``window`` is (width, height) in cells.  The sweep uses a summed-area
    table, stride 1; ties resolve to the smallest (row_start, col_start).
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ShapeMismatch(f"expected a single-token (H, W) grid, got {grid.shape}")
    h, w = grid.shape
    ww, wh = window
    if ww < 1 or wh < 1:
        raise WindowTooLarge("window must be at least 1x1")
    if wh > h or ww > w:
        raise WindowTooLarge(
            f"window {ww}x{wh} exceeds map {w}x{h}"
        )
    sat = np.zeros((h + 1, w + 1), dtype=np.float64)
    sat[1:, 1:] = grid.cumsum(axis=0).cumsum(axis=1)
    sums = (
        sat[wh:, ww:]
        - sat[: h + 1 - wh, ww:]
        - sat[wh:, : w + 1 - ww]
        + sat[: h + 1 - wh, : w + 1 - ww]
    )
    flat = int(np.argmax(sums))  # first max in row-major order
    r0, c0 = divmod(flat, sums.shape[1])
    return PixelRegion(r0, r0 + wh, c0, c0 + ww)


def probs_from_logits(stack: AttnStack) -> AttnStack:
    """Per-position softmax across the token axis, numerically stabilized."""
    if stack.kind != LOGITS:
        raise KindMismatch("probs_from_logits expects logits")
    layers = []
    for m in stack.layers:
        v = m.values.astype(np.float64)
        v = v - v.max(axis=0, keepdims=True)
        e = np.exp(v)
        p = e / e.sum(axis=0, keepdims=True)
        layers.append(AttnMap(np.clip(p, 0.0, 1.0), PROBS))
    return AttnStack(tuple(layers), stack.step)


def center_of_mass(grid: np.ndarray) -> tuple[float, float]:
    """Activation centroid in relative (x, y) coordinates, cell centers."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    total = grid.sum()
    if total <= 0.0:
        return (0.5, 0.5)
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    x = float((grid.sum(axis=0) * xs).sum() / total)
    y = float((grid.sum(axis=1) * ys).sum() / total)
    return (x, y)
