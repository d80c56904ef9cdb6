# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""S-parameter preserving dataset augmentations."""

#pylint: disable-msg=invalid-name

from logging import getLogger
from typing import Tuple
import numpy as np
from scipy.ndimage import binary_dilation
from .core import BoardLayout, FeedSet, GeometryError, SParamSet
from .raster import RectMM, feed_pad_mask, rasterize_rects


ISOLATION_PIXELS = 2
"""Chebyshev clearance between added structures and existing metal."""

PRIOR_METAL_THRESHOLD = 0.01
PLACEMENT_ATTEMPTS = 64
STRUCTURE_SIZE_MM = (0.25, 1.0)

# port swap permutation of the (S11, S21, S12, S22) storage order
SWAP_ORDER = [3, 2, 1, 0]


def _rotate_point(x: float, y: float, side: float,
                  k: int) -> Tuple[float, float]:
    for _ in range(k % 4):
        x, y = y, side - x
    return x, y


def rotate90(layout: BoardLayout, feeds: FeedSet,
             k: int) -> Tuple[BoardLayout, FeedSet]:
    """Rotate the board by k quarter turns; a feed at (x, y) moves to
       (y, side - x) on each turn."""
    side = layout.grid.side_mm
    rotated = BoardLayout(layout.grid, np.rot90(layout.metal, k).copy(),
                          np.rot90(layout.via, k).copy())
    ports = [_rotate_point(x, y, side, k) for x, y in feeds.ports]
    return rotated, FeedSet(ports, feeds.active_mask)


def reflect(layout: BoardLayout, feeds: FeedSet,
            axis: str) -> Tuple[BoardLayout, FeedSet]:
    """Mirror the board.

       :param axis: ``V`` maps x to side - x, ``H`` maps y to side - y
    """
    side = layout.grid.side_mm
    axis = axis.upper()
    if axis == 'V':
        flip, ports = 1, [(side - x, y) for x, y in feeds.ports]
    elif axis == 'H':
        flip, ports = 0, [(x, side - y) for x, y in feeds.ports]
    else:
        raise GeometryError(f'Invalid reflection axis {axis}')
    reflected = BoardLayout(layout.grid, np.flip(layout.metal, flip).copy(),
                            np.flip(layout.via, flip).copy())
    return reflected, FeedSet(ports, feeds.active_mask)


def port_swap(feeds: FeedSet,
              sparams: SParamSet) -> Tuple[FeedSet, SParamSet]:
    """Exchange port 1 and port 2.

       :raise GeometryError: if fewer than two ports are active
    """
    if feeds.count != 2:
        raise GeometryError('Port swap needs two active ports')
    swapped = SParamSet(sparams.data[SWAP_ORDER],
                        sparams.valid_mask[SWAP_ORDER],
                        sparams.point_mask[SWAP_ORDER])
    return feeds.swapped(), swapped


def add_isolated_structure(layout: BoardLayout, feeds: FeedSet,
                           seed: int) -> Tuple[BoardLayout, bool]:
    """Add one to three random rectangles kept clear of every existing
       metal pixel and feed pad.

       The structures never belong to the circuit, so the S-parameters of
       the board are unchanged.

       :return: the new layout and a flag telling that nothing could be
                placed, in which case the layout is returned unchanged
    """
    grid = layout.grid
    rng = np.random.default_rng(seed)
    occupied = (layout.metal >= PRIOR_METAL_THRESHOLD) | \
        feed_pad_mask(grid, feeds)
    size = 2 * ISOLATION_PIXELS + 1
    forbidden = binary_dilation(occupied,
                                structure=np.ones((size, size), dtype=bool))
    count = int(rng.integers(1, 4))
    side = grid.side_mm
    placed = []
    for _ in range(count):
        for _ in range(PLACEMENT_ATTEMPTS):
            width, height = rng.uniform(*STRUCTURE_SIZE_MM, size=2)
            x0 = rng.uniform(0.0, side - width)
            y0 = rng.uniform(0.0, side - height)
            rect = RectMM(x0, y0, x0 + width, y0 + height)
            if not np.any(forbidden & (rasterize_rects([rect], grid) > 0)):
                placed.append(rect)
                break
        else:
            break
    if not placed:
        getLogger('pyrfdiff.augment').debug('No room for an isolated '
                                            'structure')
        return layout, True
    metal = np.clip(layout.metal + rasterize_rects(placed, grid), 0.0, 1.0)
    return BoardLayout(grid, metal, layout.via.copy()), False


def random_augment(layout: BoardLayout, feeds: FeedSet, sparams: SParamSet,
                   rng: np.random.Generator, probability: float = 0.5) \
        -> Tuple[BoardLayout, FeedSet, SParamSet]:
    """Apply each augmentation with the given probability.

       Every random draw is taken up front so the stream consumption does
       not depend on which transforms fire.
    """
    draws = rng.random(4)
    turns = int(rng.integers(1, 4))
    axis = 'HV'[int(rng.integers(0, 2))]
    seed = int(rng.integers(0, 1 << 63))
    if draws[0] < probability:
        layout, feeds = rotate90(layout, feeds, turns)
    if draws[1] < probability:
        layout, feeds = reflect(layout, feeds, axis)
    if draws[2] < probability and feeds.count == 2:
        feeds, sparams = port_swap(feeds, sparams)
    if draws[3] < probability:
        layout, _ = add_isolated_structure(layout, feeds, seed)
    return layout, feeds, sparams
