#!/usr/bin/env python3
# -*- coding: utf-8 -*-

# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

#pylint: disable-msg=missing-docstring

import logging
from doctest import testmod
from os import environ
from sys import modules, stdout
from unittest import TestCase, TestLoader, TestSuite, main as ut_main
import numpy as np
from pyrfdiff import RfDiffLogger
from pyrfdiff.config import load_config, parse_substrate, substrate_preset
from pyrfdiff.core import (BoardGrid, BoardLayout, ConditioningBundle,
                           DatasetStats, FeedSet, FrequencyGrid,
                           GeometryError, NumericError, SParamSet,
                           SubstrateSpec, TemplateId, UsageError,
                           CH_DIELECTRIC, CH_FEED, CH_SPARAMS, CH_TEMPLATE,
                           compute_stats, encode_conditioning_channels,
                           encode_sparams, magnitude_db, mask_components,
                           summarize_sparams, template_channel_value,
                           template_from_channel)
from pyrfdiff.misc import EasyDict, derive_seed, to_bool, to_floats


class GridTestCase(TestCase):

    def test_board_grid(self):
        grid = BoardGrid()
        self.assertEqual(grid.n, 64)
        self.assertAlmostEqual(grid.side_mm, 8.0)
        self.assertEqual(grid.pixel_of(0.0, 0.0), (0, 0))
        self.assertEqual(grid.pixel_of(8.0, 8.0), (63, 63))
        self.assertEqual(grid.pixel_of(0.2, 4.0), (1, 32))
        self.assertRaises(GeometryError, grid.pixel_of, 8.1, 1.0)
        self.assertRaises(GeometryError, BoardGrid, 7)
        self.assertRaises(GeometryError, BoardGrid, 64, 0.0)
        self.assertEqual(grid.scaled(4), BoardGrid(16, 0.5))
        self.assertRaises(GeometryError, grid.scaled, 3)

    def test_frequency_grid(self):
        freqs = FrequencyGrid()
        self.assertEqual(len(freqs), 51)
        self.assertAlmostEqual(freqs.f_ghz[0], 1.0)
        self.assertAlmostEqual(freqs.f_ghz[-1], 20.0)
        self.assertAlmostEqual(freqs.f_ghz[1] - freqs.f_ghz[0], 0.38)
        self.assertRaises(GeometryError, FrequencyGrid, 5.0, 1.0)


class SParamTestCase(TestCase):

    def test_magnitude_db(self):
        self.assertAlmostEqual(float(magnitude_db(np.array(0.1))), -20.0)
        self.assertAlmostEqual(float(magnitude_db(np.array(0j))), -80.0)
        self.assertAlmostEqual(float(magnitude_db(np.array(1j))), 0.0)

    def test_masks(self):
        data = np.full((4, 51), 0.5 + 0.5j)
        self.assertRaises(GeometryError, SParamSet, data, [False] * 4)
        self.assertRaises(GeometryError, SParamSet, np.zeros((2, 51)))
        sparams = SParamSet(data, [True, True, False, False])
        self.assertEqual(int(sparams.effective_mask.sum()), 102)
        self.assertIsNone(mask_components(sparams, [False, False, True,
                                                    True]))
        kept = mask_components(sparams, [True, False, True, True])
        self.assertListEqual(list(kept.valid_mask),
                             [True, False, False, False])

    def test_matrix(self):
        rng = np.random.default_rng(1)
        smat = rng.normal(size=(51, 2, 2)) + 1j * rng.normal(size=(51, 2, 2))
        sparams = SParamSet.from_matrix(smat)
        self.assertTrue(np.array_equal(sparams.component('S21'),
                                       smat[:, 1, 0]))
        self.assertTrue(np.array_equal(sparams.matrix(), smat))
        self.assertEqual(sparams.copy(), sparams)

    def test_stats(self):
        data = np.full((4, 51), 0.1 + 0j)
        data[1] = 1.0
        stats = compute_stats([SParamSet(data)])
        self.assertAlmostEqual(stats.mu_db, -15.0)
        self.assertAlmostEqual(stats.sigma_db, 5.0 * np.sqrt(3.0))
        flat = compute_stats([SParamSet(np.ones((4, 51)))])
        self.assertEqual(flat.mu_db, 0.0)
        self.assertEqual(flat.sigma_db, 1.0)
        self.assertRaises(NumericError, compute_stats, [])
        self.assertRaises(NumericError, DatasetStats, 0.0, 0.0)

    def test_encode(self):
        stats = DatasetStats(-20.0, 10.0)
        data = np.full((4, 51), 1j)
        sparams = SParamSet(data, [True, True, True, False])
        features, mask = encode_sparams(sparams, stats)
        self.assertEqual(features.shape, (4, 51, 3))
        self.assertListEqual(list(mask), [True, True, True, False])
        self.assertTrue(np.allclose(features[0, :, 0], 2.0))
        self.assertTrue(np.allclose(features[0, :, 1], 1.0))
        self.assertTrue(np.allclose(features[0, :, 2], 0.0))
        self.assertFalse(features[3].any())
        summary = summarize_sparams(sparams, stats)
        self.assertTrue(np.allclose(summary[1], [2.0, 1.0, 0.0]))
        self.assertFalse(summary[3].any())
        self.assertFalse(summarize_sparams(None, stats).any())


class FeedTestCase(TestCase):

    def test_feedset(self):
        feeds = FeedSet([(0.0, 4.0)])
        self.assertEqual(feeds.count, 1)
        self.assertEqual(feeds.active_mask, (True, False))
        self.assertListEqual(feeds.active_ports(), [(0.0, 4.0)])
        pair = FeedSet([(0.0, 4.0), (8.0, 4.0)])
        self.assertEqual(pair.swapped().ports, ((8.0, 4.0), (0.0, 4.0)))
        self.assertRaises(GeometryError, FeedSet, [(0.0, 1.0)], [False])
        self.assertRaises(GeometryError, FeedSet, [])
        self.assertRaises(GeometryError,
                          FeedSet([(9.0, 4.0)]).validate, BoardGrid())
        pair.validate(BoardGrid())

    def test_substrate(self):
        self.assertRaises(GeometryError, SubstrateSpec, 0.5, 0.0, 1.0)
        self.assertRaises(GeometryError, SubstrateSpec, 3.0, -0.1, 1.0)
        self.assertRaises(GeometryError, SubstrateSpec, 3.0, 0.0, 0.0)


class LayoutTestCase(TestCase):

    def test_invariants(self):
        grid = BoardGrid()
        self.assertRaises(GeometryError, BoardLayout, grid,
                          np.full((64, 64), 1.5))
        self.assertRaises(GeometryError, BoardLayout, grid,
                          np.zeros((32, 32)))
        layout = BoardLayout.from_array(grid, np.full((2, 64, 64), 2.0))
        self.assertTrue(np.all(layout.metal == 1.0))
        self.assertEqual(layout.as_array().shape, (2, 64, 64))

    def test_resample(self):
        rng = np.random.default_rng(3)
        small = BoardLayout(BoardGrid(16, 0.5), rng.random((16, 16)),
                            rng.random((16, 16)))
        big = small.upsample(4)
        self.assertEqual(big.grid, BoardGrid(64, 0.125))
        self.assertTrue(np.allclose(big.downsample(4).metal, small.metal))
        self.assertTrue(np.allclose(big.downsample(4).via, small.via))
        self.assertEqual(big.copy(), big)


class ConditioningTestCase(TestCase):

    def test_template_channel(self):
        self.assertEqual(template_channel_value(TemplateId.NULL), -1.0)
        self.assertEqual(template_channel_value(TemplateId.L_MATCH), 0.125)
        for tid in TemplateId:
            self.assertIs(template_from_channel(template_channel_value(tid)),
                          tid)
        self.assertEqual(TemplateId.NULL.embedding_row, 5)
        self.assertEqual(TemplateId.MLINE.token, 'mline')
        self.assertEqual(len(TemplateId.families()), 5)

    def test_channels(self):
        grid = BoardGrid()
        stats = DatasetStats(-20.0, 10.0)
        feeds = FeedSet([(0.0, 4.0), (8.0, 4.0)])
        substrate = SubstrateSpec(3.55, 0.0027, 0.203)
        sparams = SParamSet(np.full((4, 51), 0.1 + 0j))
        bundle = ConditioningBundle(feeds, substrate, sparams,
                                    TemplateId.STEPPED_LPF)
        channels = encode_conditioning_channels(bundle, grid, stats)
        self.assertEqual(channels.shape, (17, 64, 64))
        self.assertEqual(channels[CH_FEED].sum(), 2.0)
        self.assertEqual(channels[CH_FEED, 32, 0], 1.0)
        self.assertEqual(channels[CH_FEED, 32, 63], 1.0)
        self.assertTrue(np.allclose(channels[CH_DIELECTRIC, 5, 7], 0.355))
        self.assertTrue(np.allclose(channels[CH_DIELECTRIC + 1], 0.027))
        self.assertTrue(np.allclose(channels[CH_DIELECTRIC + 2], 0.203))
        # zero z-score, zero phase: (0, 0, 1) per component
        self.assertTrue(np.allclose(channels[CH_SPARAMS + 2], 1.0))
        self.assertTrue(np.allclose(channels[CH_SPARAMS], 0.0))
        self.assertTrue(np.allclose(channels[CH_TEMPLATE], 1.0 / 32.0))
        empty = ConditioningBundle(feeds, substrate)
        channels = encode_conditioning_channels(empty, grid, stats)
        self.assertFalse(channels[CH_SPARAMS:CH_TEMPLATE].any())
        self.assertTrue(np.all(channels[CH_TEMPLATE] == -1.0))
        offboard = ConditioningBundle(FeedSet([(8.5, 4.0)]), substrate)
        self.assertRaises(GeometryError, encode_conditioning_channels,
                          offboard, grid, stats)


class ConfigTestCase(TestCase):

    def test_defaults(self):
        config = load_config()
        self.assertEqual(config.sampler.dpmpp.steps, 20)
        self.assertEqual(config.sampler.dpmpp.candidates, 128)
        self.assertEqual(config.sampler.langevin.candidates, 16)
        ro4003c = substrate_preset('RO4003C', config)
        self.assertEqual(ro4003c, SubstrateSpec(3.55, 0.0027, 0.203))
        self.assertEqual(parse_substrate('fr4', config),
                         SubstrateSpec(4.4, 0.02, 1.6))
        self.assertEqual(parse_substrate('custom:2.2,0.001,0.5', config),
                         SubstrateSpec(2.2, 0.001, 0.5))
        self.assertRaises(UsageError, parse_substrate, 'teflon', config)
        self.assertRaises(UsageError, parse_substrate, 'custom:2.2,x,1',
                          config)

    def test_merge(self):
        base = EasyDict.copy({'a': {'b': 1, 'c': 2}, 'd': [1, 2]})
        merged = base.merge({'a': {'c': 3}})
        self.assertEqual(merged.a.b, 1)
        self.assertEqual(merged.a.c, 3)
        self.assertEqual(base.a.c, 2)

    def test_helpers(self):
        self.assertTrue(to_bool('on'))
        self.assertFalse(to_bool('off', permissive=False))
        self.assertRaises(ValueError, to_bool, 'maybe', False)
        self.assertListEqual(to_floats('1, 2.5,-3e-1', 3), [1.0, 2.5, -0.3])
        self.assertRaises(ValueError, to_floats, '1,2', 3)
        self.assertEqual(derive_seed(7, 3), derive_seed(7, 3))
        self.assertNotEqual(derive_seed(7, 3), derive_seed(7, 4))
        self.assertNotEqual(derive_seed(7, 3), derive_seed(8, 3))
        self.assertLess(derive_seed(-1, 0), 1 << 64)


def suite():
    suite_ = TestSuite()
    loader = TestLoader()
    for testcase in (GridTestCase, SParamTestCase, FeedTestCase,
                     LayoutTestCase, ConditioningTestCase, ConfigTestCase):
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
    testmod(modules[__name__])
    ut_main(defaultTest='suite')


if __name__ == '__main__':
    main()
