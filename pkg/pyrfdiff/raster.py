# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Sub-pixel area-coverage rasterization and board validity."""

#pylint: disable-msg=invalid-name

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple
import numpy as np
from .core import BoardGrid, BoardLayout, FeedSet, GeometryError


PAD_PIXELS = 3
"""Side of the square feed pad, in pixels."""

VIA_SUBSAMPLES = 4
"""Per-axis subsample count used for via coverage."""

FEED_THRESHOLD = 0.5


@dataclass(frozen=True)
class RectMM:
    """Axis-aligned rectangle in board coordinates (mm)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError(f'Degenerate rectangle ({self.x0}, {self.y0},'
                                f' {self.x1}, {self.y1})')

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2

    def clipped(self, side_mm: float) -> Optional['RectMM']:
        """Intersect with the board, None if nothing remains."""
        x0, y0 = max(self.x0, 0.0), max(self.y0, 0.0)
        x1, y1 = min(self.x1, side_mm), min(self.y1, side_mm)
        if x0 >= x1 or y0 >= y1:
            return None
        return RectMM(x0, y0, x1, y1)

    def contains(self, other: 'RectMM', tol: float = 1e-9) -> bool:
        return (self.x0 <= other.x0 + tol and self.y0 <= other.y0 + tol and
                self.x1 >= other.x1 - tol and self.y1 >= other.y1 - tol)


@dataclass(frozen=True)
class ViaMM:
    """Plated via, as a disc in board coordinates (mm)."""

    cx: float
    cy: float
    radius_mm: float

    def __post_init__(self):
        if not self.radius_mm > 0:
            raise GeometryError(f'Invalid via radius {self.radius_mm}')


def _interval_union(intervals: List[Tuple[float, float]]) \
        -> List[Tuple[float, float]]:
    merged = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            if hi > merged[-1][1]:
                merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))
    return merged


def _coverage(boxes: Sequence[Tuple[float, float, float, float]],
              nx: int, ny: int) -> np.ndarray:
    """Exact coverage of the union of boxes, in pixel units, over a
       ny x nx window whose origin is the window's lower-left corner."""
    cover = np.zeros((ny, nx))
    boxes = [(max(x0, 0.0), max(y0, 0.0), min(x1, nx), min(y1, ny))
             for x0, y0, x1, y1 in boxes]
    boxes = [b for b in boxes if b[0] < b[2] and b[1] < b[3]]
    if not boxes:
        return cover
    # slab boundaries: every box edge plus every crossed row boundary
    ybreaks = {float(k) for k in range(ny + 1)}
    for _, y0, _, y1 in boxes:
        ybreaks.add(y0)
        ybreaks.add(y1)
    ybreaks = sorted(ybreaks)
    left = np.arange(nx, dtype=float)
    right = left + 1.0
    for ya, yb in zip(ybreaks[:-1], ybreaks[1:]):
        height = yb - ya
        if height <= 0:
            continue
        spans = [(x0, x1) for x0, y0, x1, y1 in boxes
                 if y0 <= ya and y1 >= yb]
        if not spans:
            continue
        row = min(int(np.floor(ya)), ny - 1)
        for xa, xb in _interval_union(spans):
            cols = np.clip(np.minimum(xb, right) - np.maximum(xa, left),
                           0.0, None)
            cover[row] += cols * height
    return np.clip(cover, 0.0, 1.0)


def _pixel_boxes(rects: Iterable[RectMM], grid: BoardGrid,
                 ox: int = 0, oy: int = 0) \
        -> List[Tuple[float, float, float, float]]:
    pitch = grid.pitch_mm
    return [(r.x0 / pitch - ox, r.y0 / pitch - oy,
             r.x1 / pitch - ox, r.y1 / pitch - oy) for r in rects]


def rasterize_rects(rects: Iterable[RectMM], grid: BoardGrid) -> np.ndarray:
    """Rasterize the union of rectangles as exact area coverage.

       :param rects: rectangles, parts outside the board are ignored
       :param grid: the board grid
       :return: n x n coverage in [0, 1]
    """
    return _coverage(_pixel_boxes(rects, grid), grid.n, grid.n)


def rasterize_window(rects: Iterable[RectMM], grid: BoardGrid,
                     ix0: int, iy0: int, ix1: int, iy1: int) -> np.ndarray:
    """Rasterize the pixel window [iy0:iy1, ix0:ix1] only.

       The result equals the matching slice of :func:`rasterize_rects`.
    """
    ix0, iy0 = max(ix0, 0), max(iy0, 0)
    ix1, iy1 = min(ix1, grid.n), min(iy1, grid.n)
    if ix1 <= ix0 or iy1 <= iy0:
        return np.zeros((max(iy1 - iy0, 0), max(ix1 - ix0, 0)))
    boxes = _pixel_boxes(rects, grid, ix0, iy0)
    return _coverage(boxes, ix1 - ix0, iy1 - iy0)


def rasterize_vias(vias: Iterable[ViaMM], grid: BoardGrid) -> np.ndarray:
    """Rasterize via discs, approximating coverage with 4x4 subsamples.

       :return: n x n coverage in [0, 1]
    """
    n, pitch = grid.n, grid.pitch_mm
    hits = np.zeros((n * VIA_SUBSAMPLES, n * VIA_SUBSAMPLES), dtype=bool)
    sub = pitch / VIA_SUBSAMPLES
    centers = (np.arange(n * VIA_SUBSAMPLES) + 0.5) * sub
    for via in vias:
        lo = np.searchsorted(centers, [via.cx - via.radius_mm,
                                       via.cy - via.radius_mm])
        hi = np.searchsorted(centers, [via.cx + via.radius_mm,
                                       via.cy + via.radius_mm], side='right')
        xs, ys = centers[lo[0]:hi[0]], centers[lo[1]:hi[1]]
        if not xs.size or not ys.size:
            continue
        inside = ((xs[None, :] - via.cx) ** 2 +
                  (ys[:, None] - via.cy) ** 2) <= via.radius_mm ** 2
        hits[lo[1]:hi[1], lo[0]:hi[0]] |= inside
    counts = hits.reshape(n, VIA_SUBSAMPLES, n, VIA_SUBSAMPLES).sum(
        axis=(1, 3))
    return counts / float(VIA_SUBSAMPLES * VIA_SUBSAMPLES)


def feed_pad_box(grid: BoardGrid, x_mm: float, y_mm: float) \
        -> Tuple[int, int, int, int]:
    """Pixel box (ix0, iy0, ix1, iy1), end excluded, of the 3x3 feed pad
       centred on the pixel holding a port. Pads are shifted inwards at
       the board edges so they always span 3x3 pixels.
    """
    ix, iy = grid.pixel_of(x_mm, y_mm)
    half = PAD_PIXELS // 2
    ix0 = min(max(ix - half, 0), grid.n - PAD_PIXELS)
    iy0 = min(max(iy - half, 0), grid.n - PAD_PIXELS)
    return ix0, iy0, ix0 + PAD_PIXELS, iy0 + PAD_PIXELS


def feed_pad_rect(grid: BoardGrid, x_mm: float, y_mm: float) -> RectMM:
    """Feed pad of a port, in mm."""
    ix0, iy0, ix1, iy1 = feed_pad_box(grid, x_mm, y_mm)
    pitch = grid.pitch_mm
    return RectMM(ix0 * pitch, iy0 * pitch, ix1 * pitch, iy1 * pitch)


def feed_pad_mask(grid: BoardGrid, feeds: FeedSet) -> np.ndarray:
    """Boolean n x n mask of the pads of all active ports."""
    mask = np.zeros((grid.n, grid.n), dtype=bool)
    for x_mm, y_mm in feeds.active_ports():
        ix0, iy0, ix1, iy1 = feed_pad_box(grid, x_mm, y_mm)
        mask[iy0:iy1, ix0:ix1] = True
    return mask


def feed_valid(layout: BoardLayout, feeds: FeedSet) -> bool:
    """Tell whether every active port is covered by usable metal: the feed
       pixel and at least one of its 4-neighbours reach 0.5.
    """
    metal, n = layout.metal, layout.grid.n
    for x_mm, y_mm in feeds.active_ports():
        ix, iy = layout.grid.pixel_of(x_mm, y_mm)
        if metal[iy, ix] < FEED_THRESHOLD:
            return False
        neighbours = [(iy + dy, ix + dx)
                      for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))
                      if 0 <= ix + dx < n and 0 <= iy + dy < n]
        if not any(metal[pos] >= FEED_THRESHOLD for pos in neighbours):
            return False
    return True
