#!/usr/bin/env python3
# -*- coding: utf-8 -*-

# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

#pylint: disable-msg=missing-docstring

import logging
from os import environ
from sys import stdout
from unittest import TestCase, TestLoader, TestSuite, main as ut_main
import numpy as np
from scipy.ndimage import binary_dilation
from pyrfdiff import RfDiffLogger
from pyrfdiff.augment import (add_isolated_structure, port_swap, reflect,
                              random_augment, rotate90)
from pyrfdiff.core import (BoardGrid, BoardLayout, FeedSet, GeometryError,
                           SParamSet, TemplateId)
from pyrfdiff.misc import to_bool
from pyrfdiff.raster import feed_valid
from pyrfdiff.templates import emit_layout, sample_template


def _random_layout(seed, grid=BoardGrid()):
    rng = np.random.default_rng(seed)
    return BoardLayout(grid, rng.random((grid.n, grid.n)),
                       rng.random((grid.n, grid.n)))


def _random_sparams(seed):
    rng = np.random.default_rng(seed)
    return SParamSet(rng.normal(size=(4, 51)) + 1j * rng.normal(size=(4, 51)))


class GeometricTestCase(TestCase):

    def setUp(self):
        self.layout = _random_layout(1)
        self.feeds = FeedSet([(1.0, 2.0), (8.0, 5.0)])

    def test_rotate(self):
        same, feeds = rotate90(self.layout, self.feeds, 0)
        self.assertEqual(same, self.layout)
        self.assertEqual(feeds, self.feeds)
        layout, feeds = self.layout, self.feeds
        for _ in range(4):
            layout, feeds = rotate90(layout, feeds, 1)
        self.assertEqual(layout, self.layout)
        self.assertEqual(feeds, self.feeds)
        _, turned = rotate90(self.layout, FeedSet([(1.0, 2.0)]), 1)
        self.assertEqual(turned.ports[0], (2.0, 7.0))

    def test_rotate_pixels(self):
        grid = self.layout.grid
        rotated, _ = rotate90(self.layout, self.feeds, 1)
        for x_mm, y_mm in ((1.3, 2.6), (7.9, 0.1), (4.05, 4.05)):
            ix0, iy0 = grid.pixel_of(x_mm, y_mm)
            ix1, iy1 = grid.pixel_of(y_mm, 8.0 - x_mm)
            self.assertEqual(self.layout.metal[iy0, ix0],
                             rotated.metal[iy1, ix1])

    def test_reflect(self):
        once, feeds = reflect(self.layout, self.feeds, 'V')
        self.assertEqual(feeds.ports[0], (7.0, 2.0))
        twice, feeds = reflect(once, feeds, 'V')
        self.assertEqual(twice, self.layout)
        self.assertEqual(feeds, self.feeds)
        layout, feeds = reflect(*reflect(self.layout, self.feeds, 'H'), 'V')
        half, turned = rotate90(self.layout, self.feeds, 2)
        self.assertEqual(layout, half)
        self.assertEqual(feeds, turned)
        self.assertRaises(GeometryError, reflect, self.layout, self.feeds,
                          'D')

    def test_dihedral_group(self):
        def apply(element, layout, feeds):
            turns, mirror = element
            layout, feeds = rotate90(layout, feeds, turns)
            return reflect(layout, feeds, 'V') if mirror else (layout, feeds)

        elements = [(k, m) for k in range(4) for m in (False, True)]
        images = [apply(e, self.layout, self.feeds)[0] for e in elements]
        keys = {layout.metal.tobytes() for layout in images}
        self.assertEqual(len(keys), 8)
        for first in elements:
            for second in elements:
                layout, _ = apply(second,
                                  *apply(first, self.layout, self.feeds))
                self.assertIn(layout.metal.tobytes(), keys)

    def test_template_validity(self):
        feeds = FeedSet([(0.0, 3.5625), (8.0, 3.5625)])
        layout = emit_layout(sample_template(TemplateId.L_MATCH, feeds, 2))
        for k in range(4):
            self.assertTrue(feed_valid(*rotate90(layout, feeds, k)))
        for axis in 'HV':
            self.assertTrue(feed_valid(*reflect(layout, feeds, axis)))


class PortSwapTestCase(TestCase):

    def test_swap(self):
        feeds = FeedSet([(0.0, 4.0), (8.0, 4.0)])
        sparams = _random_sparams(3)
        swapped_feeds, swapped = port_swap(feeds, sparams)
        self.assertEqual(swapped_feeds.ports, ((8.0, 4.0), (0.0, 4.0)))
        self.assertTrue(np.array_equal(swapped.component('S11'),
                                       sparams.component('S22')))
        self.assertTrue(np.array_equal(swapped.component('S21'),
                                       sparams.component('S12')))
        self.assertEqual(port_swap(*port_swap(feeds, sparams))[1], sparams)
        data = sparams.data.copy()
        data[3], data[2] = data[0], data[1]
        symmetric = SParamSet(data)
        self.assertEqual(port_swap(feeds, symmetric)[1], symmetric)
        self.assertRaises(GeometryError, port_swap, FeedSet([(0.0, 4.0)]),
                          sparams)


class IsolatedStructureTestCase(TestCase):

    def test_free_quadrant(self):
        grid = BoardGrid()
        metal = np.ones((64, 64))
        metal[32:, 32:] = 0.0
        layout = BoardLayout(grid, metal)
        feeds = FeedSet([(0.0, 1.0)])
        for seed in range(5):
            added, skipped = add_isolated_structure(layout, feeds, seed)
            self.assertFalse(skipped)
            changed = added.metal != layout.metal
            self.assertTrue(changed.any())
            self.assertFalse(changed[:34].any())
            self.assertFalse(changed[:, :34].any())
            self.assertTrue(np.array_equal(added.via, layout.via))

    def test_clearance(self):
        grid = BoardGrid()
        feeds = FeedSet([(0.0, 4.0), (8.0, 4.0)])
        layout = emit_layout(sample_template(TemplateId.MLINE, feeds, 6))
        added, skipped = add_isolated_structure(layout, feeds, 8)
        self.assertFalse(skipped)
        new = (added.metal - layout.metal) > 0
        near = binary_dilation(layout.metal >= 0.01,
                               structure=np.ones((5, 5), dtype=bool))
        self.assertFalse(np.any(new & near))
        self.assertTrue(feed_valid(added, feeds))

    def test_full_board(self):
        layout = BoardLayout(BoardGrid(), np.ones((64, 64)))
        feeds = FeedSet([(0.0, 4.0)])
        added, skipped = add_isolated_structure(layout, feeds, 1)
        self.assertTrue(skipped)
        self.assertEqual(added, layout)


class RandomAugmentTestCase(TestCase):

    def test_probability(self):
        feeds = FeedSet([(0.0, 4.0), (8.0, 4.0)])
        layout = emit_layout(sample_template(TemplateId.OPEN_STUB_BSF, feeds,
                                             1))
        sparams = _random_sparams(4)
        rng0, rng1 = np.random.default_rng(5), np.random.default_rng(5)
        same = random_augment(layout, feeds, sparams, rng0, 0.0)
        self.assertEqual(same[0], layout)
        self.assertEqual(same[1], feeds)
        self.assertEqual(same[2], sparams)
        changed = random_augment(layout, feeds, sparams, rng1, 1.0)
        self.assertNotEqual(changed[2], sparams)
        self.assertTrue(feed_valid(changed[0], changed[1]))
        # draws do not depend on which transforms fired
        self.assertEqual(rng0.integers(1 << 62), rng1.integers(1 << 62))


def suite():
    suite_ = TestSuite()
    loader = TestLoader()
    for testcase in (GeometricTestCase, PortSwapTestCase,
                     IsolatedStructureTestCase, RandomAugmentTestCase):
        suite_.addTest(loader.loadTestsFromTestCase(testcase))
    return suite_


def main():
    if to_bool(environ.get('RFDIFF_DEBUG', 'off')):
        RfDiffLogger.log.addHandler(logging.StreamHandler(stdout))
    level = environ.get('RFDIFF_LOGLEVEL', 'warning').upper()
    try:
        loglevel = getattr(logging, level)
    except AttributeError as exc:
        raise ValueError('Invalid log level: %s' % level) from exc
    RfDiffLogger.set_level(loglevel)
    ut_main(defaultTest='suite')


if __name__ == '__main__':
    main()
