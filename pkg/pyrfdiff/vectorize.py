# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Grayscale board to rectangles, sub-pixel refinement and fabrication
   export (Gerber RS-274X, Excellon)."""

#pylint: disable-msg=too-many-locals
#pylint: disable-msg=invalid-name

from logging import getLogger
from math import ceil, floor, pi, sqrt
from typing import Dict, List, Sequence, Tuple
import numpy as np
from scipy.ndimage import label
from .core import BoardGrid, GeometryError
from .raster import RectMM, ViaMM, rasterize_rects, rasterize_window


BINARY_THRESHOLD = 0.5
MIN_SIDE_MM = 0.05
REFINE_ITERATIONS = 200
REFINE_TOLERANCE = 1e-10
BACKTRACK_STEPS = 20
MIN_EXTENT_PX = 1e-3
"""Smallest rectangle side refinement may leave, in pixels."""

GERBER_SCALE = 1e6
"""4.6 fixed format: integer millionths of a millimetre."""

_logger = getLogger('pyrfdiff.vectorize')


def _largest_rectangle(mask: np.ndarray) -> Tuple[int, int, int, int, int]:
    """Largest all-true rectangle, as (area, ix0, iy0, ix1, iy1) with
       exclusive ends, found by a histogram sweep over the rows."""
    ny, nx = mask.shape
    heights = np.zeros(nx, dtype=int)
    best = (0, 0, 0, 0, 0)
    for iy in range(ny):
        heights = np.where(mask[iy], heights + 1, 0)
        stack: List[int] = []
        for ix in range(nx + 1):
            height = heights[ix] if ix < nx else 0
            while stack and heights[stack[-1]] >= height:
                top = heights[stack.pop()]
                left = stack[-1] + 1 if stack else 0
                area = int(top) * (ix - left)
                if area > best[0]:
                    best = (area, left, iy - int(top) + 1, ix, iy + 1)
            stack.append(ix)
    return best


def extract_rects(metal: np.ndarray, grid: BoardGrid,
                  threshold: float = BINARY_THRESHOLD) -> List[RectMM]:
    """Decompose the binarized metal channel into pixel aligned rectangles.

       The largest remaining rectangle is repeatedly taken out of the mask,
       so the rectangles are interior-disjoint and tile the mask exactly.
    """
    mask = np.asarray(metal) >= threshold
    pitch = grid.pitch_mm
    rects = []
    while mask.any():
        _, ix0, iy0, ix1, iy1 = _largest_rectangle(mask)
        mask[iy0:iy1, ix0:ix1] = False
        rects.append(RectMM(ix0 * pitch, iy0 * pitch,
                            ix1 * pitch, iy1 * pitch))
    return rects


def _overlaps(lo: float, hi: float, first: int, last: int) -> np.ndarray:
    """Length of [lo, hi] inside each unit cell first..last-1."""
    cells = np.arange(first, last, dtype=float)
    return np.clip(np.minimum(hi, cells + 1.0) - np.maximum(lo, cells),
                   0.0, None)


class _EdgeRefiner:
    """Coordinate descent of F = sum (render - target)^2 over the edges of
       a rectangle set, in pixel units."""

    def __init__(self, rects: Sequence[RectMM], target: np.ndarray,
                 grid: BoardGrid):
        self.grid = grid
        self.pitch = grid.pitch_mm
        self.edges = [[r.x0 / self.pitch, r.y0 / self.pitch,
                       r.x1 / self.pitch, r.y1 / self.pitch] for r in rects]
        self.target = np.asarray(target, dtype=float)
        self.render = rasterize_rects(self.rects(), grid)

    def rects(self) -> List[RectMM]:
        p = self.pitch
        return [RectMM(x0 * p, y0 * p, x1 * p, y1 * p)
                for x0, y0, x1, y1 in self.edges]

    def objective(self) -> float:
        return float(np.sum((self.render - self.target) ** 2))

    def _window(self, rect: int, side: int, cell: int) \
            -> Tuple[Tuple[int, int, int, int], np.ndarray]:
        """Pixel window touched by moving one edge inside one cell, and the
           derivative of the rectangle coverage there."""
        x0, y0, x1, y1 = self.edges[rect]
        sign = -1.0 if side < 2 else 1.0
        n = self.grid.n
        if side % 2 == 0:
            r0, r1 = max(int(floor(y0)), 0), min(int(ceil(y1)), n)
            window = (cell, r0, cell + 1, r1)
            deriv = sign * _overlaps(y0, y1, r0, r1)[:, None]
        else:
            c0, c1 = max(int(floor(x0)), 0), min(int(ceil(x1)), n)
            window = (c0, cell, c1, cell + 1)
            deriv = sign * _overlaps(x0, x1, c0, c1)[None, :]
        return window, deriv

    def _limits(self, rect: int, side: int, cell: int) -> Tuple[float, float]:
        edges = self.edges[rect]
        lo, hi = float(cell), float(cell + 1)
        if side < 2:
            hi = min(hi, edges[side + 2] - MIN_EXTENT_PX)
        else:
            lo = max(lo, edges[side - 2] + MIN_EXTENT_PX)
        return lo, hi

    def improve(self, rect: int, side: int) -> float:
        """Try to move one edge; return the decrease of F, zero if the
           edge did not move."""
        pos = self.edges[rect][side]
        near = round(pos)
        cells = [near - 1, near] if abs(pos - near) < 1e-9 else \
            [int(floor(pos))]
        best = None
        for cell in cells:
            if not 0 <= cell < self.grid.n:
                continue
            lo, hi = self._limits(rect, side, cell)
            if lo >= hi:
                continue
            (ix0, iy0, ix1, iy1), deriv = self._window(rect, side, cell)
            current = self.render[iy0:iy1, ix0:ix1]
            residual = current - self.target[iy0:iy1, ix0:ix1]
            curvature = float(np.sum(deriv ** 2))
            if curvature <= 0.0:
                continue
            step = -float(np.sum(residual * deriv)) / curvature
            before = float(np.sum(residual ** 2))
            for _ in range(BACKTRACK_STEPS):
                trial = min(max(pos + step, lo), hi)
                if trial == pos:
                    break
                self.edges[rect][side] = trial
                patch = rasterize_window(self.rects(), self.grid,
                                         ix0, iy0, ix1, iy1)
                self.edges[rect][side] = pos
                gain = before - float(np.sum(
                    (patch - self.target[iy0:iy1, ix0:ix1]) ** 2))
                if gain > 0.0:
                    if best is None or gain > best[0]:
                        best = (gain, trial, (ix0, iy0, ix1, iy1), patch)
                    break
                step /= 2.0
        if best is None:
            return 0.0
        gain, trial, (ix0, iy0, ix1, iy1), patch = best
        self.edges[rect][side] = trial
        self.render[iy0:iy1, ix0:ix1] = patch
        return gain


def refine_rects(rects: Sequence[RectMM], metal_target: np.ndarray,
                 grid: BoardGrid,
                 iters: int = REFINE_ITERATIONS) -> List[RectMM]:
    """Move rectangle edges to sub-pixel positions that best reproduce a
       grayscale target.

       Each edge takes Gauss-Newton steps within its pixel cell, using the
       coverage derivative of its own rectangle; a move is kept only if
       the exact objective strictly decreases.

       :param rects: initial rectangles, usually from :func:`extract_rects`
       :param metal_target: n x n coverage to reproduce
       :param iters: maximum number of sweeps over all edges
       :return: refined rectangles, same count and order
    """
    if not rects:
        return []
    refiner = _EdgeRefiner(rects, metal_target, grid)
    start = refiner.objective()
    for sweep in range(iters):
        gain = sum(refiner.improve(rect, side)
                   for rect in range(len(rects)) for side in range(4))
        if gain < REFINE_TOLERANCE:
            break
    else:
        sweep = iters
    _logger.debug('Refined %d rects in %d sweeps, F %.3g -> %.3g',
                  len(rects), sweep, start, refiner.objective())
    return refiner.rects()


def drc_filter(rects: Sequence[RectMM], min_side_mm: float = MIN_SIDE_MM) \
        -> Tuple[List[RectMM], List[str]]:
    """Drop rectangles with a side below the minimum feature size.

       :return: the kept rectangles and one warning per dropped one
    """
    kept, warnings = [], []
    for rect in rects:
        if min(rect.width, rect.height) < min_side_mm:
            warnings.append('Dropped %.4fx%.4f mm rect at (%.4f, %.4f): '
                            'side below %.3f mm' %
                            (rect.width, rect.height, rect.x0, rect.y0,
                             min_side_mm))
        else:
            kept.append(rect)
    for warning in warnings:
        _logger.warning('%s', warning)
    return kept, warnings


def extract_vias(via: np.ndarray, grid: BoardGrid,
                 threshold: float = BINARY_THRESHOLD) -> List[ViaMM]:
    """Locate vias as 8-connected blobs of the via channel; the radius is
       that of the disc with the blob area."""
    labels, count = label(np.asarray(via) >= threshold,
                          structure=np.ones((3, 3), dtype=bool))
    pitch = grid.pitch_mm
    vias = []
    for blob in range(1, count + 1):
        iys, ixs = np.nonzero(labels == blob)
        vias.append(ViaMM((float(ixs.mean()) + 0.5) * pitch,
                          (float(iys.mean()) + 0.5) * pitch,
                          sqrt(ixs.size / pi) * pitch))
    return vias


def _check_inside(grid: BoardGrid, points: Sequence[Tuple[float, float]]):
    for x_mm, y_mm in points:
        if not grid.contains(x_mm, y_mm):
            raise GeometryError(f'({x_mm}, {y_mm}) lies outside the board')


def gerber_lines(rects: Sequence[RectMM], grid: BoardGrid) -> List[str]:
    """Gerber RS-274X flash program of a rectangle set.

       One rectangular aperture per distinct size, in order of first use.
    """
    _check_inside(grid, [(r.x0, r.y0) for r in rects] +
                  [(r.x1, r.y1) for r in rects])
    apertures: Dict[str, int] = {}
    flashes: Dict[int, List[str]] = {}
    for rect in rects:
        size = '%.6fX%.6f' % (rect.width, rect.height)
        dcode = apertures.setdefault(size, 10 + len(apertures))
        cx, cy = rect.center
        flashes.setdefault(dcode, []).append(
            'X%dY%dD03*' % (round(cx * GERBER_SCALE),
                            round(cy * GERBER_SCALE)))
    lines = ['%FSLAX46Y46*%', '%MOMM*%', '%LPD*%']
    lines.extend('%%ADD%dR,%s*%%' % (dcode, size)
                 for size, dcode in apertures.items())
    for dcode, hits in flashes.items():
        lines.append('D%d*' % dcode)
        lines.extend(hits)
    lines.append('M02*')
    return lines


def excellon_lines(vias: Sequence[ViaMM], grid: BoardGrid) -> List[str]:
    """Excellon drill program, one tool per distinct diameter."""
    _check_inside(grid, [(v.cx, v.cy) for v in vias])
    tools: Dict[str, int] = {}
    hits: Dict[int, List[str]] = {}
    for via in vias:
        tool = tools.setdefault('%.3f' % (2.0 * via.radius_mm),
                                1 + len(tools))
        hits.setdefault(tool, []).append('X%.3fY%.3f' % (via.cx, via.cy))
    lines = ['M48', 'METRIC,TZ']
    lines.extend('T%dC%s' % (tool, diameter)
                 for diameter, tool in tools.items())
    lines.extend(['%', 'G90', 'G05'])
    for tool, points in hits.items():
        lines.append('T%d' % tool)
        lines.extend(points)
    lines.append('M30')
    return lines


def _write_lines(lines: List[str], path: str) -> None:
    with open(path, 'wt', newline='\n') as ofp:
        ofp.write('\n'.join(lines))
        ofp.write('\n')


def to_gerber(rects: Sequence[RectMM], grid: BoardGrid, path: str) -> None:
    """Write rectangles as an RS-274X copper layer."""
    _write_lines(gerber_lines(rects, grid), path)


def to_excellon(vias: Sequence[ViaMM], grid: BoardGrid, path: str) -> None:
    """Write vias as an Excellon drill file."""
    _write_lines(excellon_lines(vias, grid), path)
