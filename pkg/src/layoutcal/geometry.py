"""Relative boxes on the unit square and their pixel-grid counterparts."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class RelBox:
    """Axis-aligned box in relative coordinates.

    ``(cx, cy)`` is the center, ``(w, h)`` the width and height, all in
    [0, 1].  The y axis points down (row 0 of an attention map is the top
    of the image), so "above" means smaller ``cy``.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"RelBox.{name}={v!r} outside [0, 1]")
        if self.w * self.h <= 0.0:
            raise ValueError("RelBox must have positive area")

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2.0

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2.0

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2.0

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2.0

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class PixelRegion:
    """Half-open cell bounds ``[row_start, row_end) x [col_start, col_end)``."""

    row_start: int
    row_end: int
    col_start: int
    col_end: int

    def __post_init__(self):
        if not (0 <= self.row_start < self.row_end):
            raise ValueError(f"empty or negative row range {self}")
        if not (0 <= self.col_start < self.col_end):
            raise ValueError(f"empty or negative col range {self}")

    @property
    def height(self) -> int:
        return self.row_end - self.row_start

    @property
    def width(self) -> int:
        return self.col_end - self.col_start

    def fits(self, height: int, width: int) -> bool:
        return self.row_end <= height and self.col_end <= width

    def as_slices(self) -> tuple[slice, slice]:
        return (slice(self.row_start, self.row_end),
                slice(self.col_start, self.col_end))


def to_pixel_region(box: RelBox, width: int, height: int) -> PixelRegion:
    """Convert a relative box to cell bounds on a ``width x height`` grid.

    Starts floor, ends ceil, both clamped so the region is never empty:
    ``col_start = floor((cx - w/2) * width)`` clamped to [0, width-1] and
    ``col_end = ceil((cx + w/2) * width)`` clamped to [1, width]; rows
    analogous.
    """
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be >= 1")
    col_start = min(max(math.floor(box.x0 * width), 0), width - 1)
    col_end = min(max(math.ceil(box.x1 * width), 1), width)
    row_start = min(max(math.floor(box.y0 * height), 0), height - 1)
    row_end = min(max(math.ceil(box.y1 * height), 1), height)
    if col_end <= col_start:
        col_end = col_start + 1
    if row_end <= row_start:
        row_end = row_start + 1
    return PixelRegion(row_start, row_end, col_start, col_end)


def region_to_relbox(region: PixelRegion, width: int, height: int) -> RelBox:
    """Inverse-ish of :func:`to_pixel_region`: cell bounds back to a RelBox."""
    w = region.width / width
    h = region.height / height
    cx = (region.col_start + region.col_end) / 2.0 / width
    cy = (region.row_start + region.row_end) / 2.0 / height
    return RelBox(cx, cy, w, h)
