#!/usr/bin/env python3
# -*- coding: utf-8 -*-

# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

#pylint: disable-msg=missing-docstring
#pylint: disable-msg=invalid-name

import logging
from math import sqrt
from os import environ
from sys import stdout
from unittest import TestCase, TestLoader, TestSuite, main as ut_main
import numpy as np
from pyrfdiff import RfDiffLogger
from pyrfdiff.config import load_config
from pyrfdiff.core import BoardGrid, FeedSet, NumericError, UsageError
from pyrfdiff.diffusion import (NoiseSchedule, SamplerConfig, SamplerKind,
                                analytic_gaussian_denoiser, annealed_langevin,
                                clamp_projector, dpmpp_2m, dpmpp_times,
                                dpmpp_2m_sample, langevin_levels,
                                langevin_sample, project_feeds,
                                sample_layouts)
from pyrfdiff.misc import to_bool
from pyrfdiff.raster import feed_pad_mask, feed_valid


def _sample_count():
    # Monte-Carlo checks use 10k samples when slow tests are enabled
    return 10000 if to_bool(environ.get('RFDIFF_SLOW', 'off')) else 2000


def _tolerances(std, count):
    """Mean and std tolerances: 2% of the scale plus four standard errors."""
    return (0.02 * std + 4 * std / sqrt(count),
            0.02 * std + 4 * std / sqrt(2 * count))


class ScheduleTestCase(TestCase):

    def setUp(self):
        self.schedule = NoiseSchedule()

    def test_limits(self):
        self.assertAlmostEqual(self.schedule.alpha_bar(0.0), 1.0, places=12)
        self.assertLess(self.schedule.alpha_bar(1.0), 1e-6)
        self.assertGreater(self.schedule.alpha_bar(1.0), 0.0)

    def test_monotonic(self):
        alpha_bar = self.schedule.alpha_bar(np.linspace(0.0, 1.0, 200))
        self.assertTrue(np.all(np.diff(alpha_bar) < 0.0))
        sigma = self.schedule.sigma(np.linspace(0.0, 1.0, 200))
        self.assertTrue(np.allclose(sigma ** 2 + alpha_bar, 1.0,
                                    rtol=0, atol=1e-12))

    def test_inverse(self):
        times = np.linspace(0.0, 0.98, 50)
        self.assertTrue(np.allclose(
            self.schedule.t_of_alpha_bar(self.schedule.alpha_bar(times)),
            times, rtol=0, atol=1e-8))
        inner = times[1:]
        self.assertTrue(np.allclose(
            self.schedule.t_of_logsnr(self.schedule.logsnr(inner)),
            inner, rtol=0, atol=1e-8))
        self.assertTrue(np.allclose(
            self.schedule.t_of_sigma(self.schedule.sigma(inner)),
            inner, rtol=0, atol=1e-6))

    def test_dpmpp_times(self):
        times = dpmpp_times(20)
        self.assertEqual(len(times), 21)
        self.assertEqual(times[0], 1.0)
        self.assertEqual(times[-1], 0.0)
        self.assertTrue(np.all(np.diff(times) < 0.0))
        logsnr = self.schedule.logsnr(times[1:-1])
        self.assertTrue(np.allclose(np.diff(logsnr), np.diff(logsnr)[0],
                                    atol=1e-6))
        uniform = dpmpp_times(20, 'time')
        self.assertEqual(len(uniform), 20)
        self.assertTrue(np.allclose(np.diff(uniform), -1.0 / 19))


class AnalyticDenoiserTestCase(TestCase):

    def setUp(self):
        self.schedule = NoiseSchedule()

    def test_point_mass(self):
        denoiser = analytic_gaussian_denoiser([0.3], [0.0])
        x_t = np.array([[-2.0], [0.1], [1.7]])
        for t in (0.9, 0.5, 0.05):
            self.assertTrue(np.allclose(denoiser.posterior_mean(x_t, t),
                                        0.3))

    def test_eps_matches_posterior_mean(self):
        denoiser = analytic_gaussian_denoiser([0.3, -0.2], [0.1, 0.6])
        rng = np.random.default_rng(4)
        x_t = rng.normal(size=(5, 2))
        for t in (0.95, 0.4, 0.01):
            alpha = float(self.schedule.alpha(t))
            sigma = float(self.schedule.sigma(t))
            expect = (x_t - alpha * denoiser.posterior_mean(x_t, t)) / sigma
            self.assertTrue(np.allclose(denoiser(x_t, t), expect,
                                        rtol=1e-9, atol=1e-12))

    def test_score_finite_differences(self):
        mu, std = np.array([0.3, -0.2]), np.array([0.1, 0.6])
        denoiser = analytic_gaussian_denoiser(mu, std)
        rng = np.random.default_rng(9)
        delta = 1e-5
        for t in (0.8, 0.3, 0.05):
            alpha = float(self.schedule.alpha(t))
            sigma = float(self.schedule.sigma(t))
            var = alpha ** 2 * std ** 2 + sigma ** 2

            def log_density(x, alpha=alpha, var=var):
                return float(np.sum(-0.5 * (x - alpha * mu) ** 2 / var))
            x = rng.normal(size=2)
            implied = -denoiser(x[None], t)[0] / sigma
            for coord in range(2):
                step = np.zeros(2)
                step[coord] = delta
                numeric = (log_density(x + step) -
                           log_density(x - step)) / (2 * delta)
                self.assertLess(abs(implied[coord] - numeric),
                                1e-4 * abs(numeric) + 1e-9)

    def test_negative_std(self):
        self.assertRaises(NumericError, analytic_gaussian_denoiser,
                          [0.0], [-1.0])


class SamplerConfigTestCase(TestCase):

    def test_validation(self):
        self.assertRaises(UsageError, SamplerConfig, steps=1)
        self.assertRaises(UsageError, SamplerConfig, candidates=0)
        self.assertRaises(UsageError, SamplerConfig, batch=0)
        self.assertRaises(UsageError, SamplerConfig, spacing='karras')
        self.assertRaises(UsageError, SamplerConfig, kind='langevin',
                          steps=100, levels=10, steps_per_level=20)

    def test_from_config(self):
        config = load_config()
        dpmpp = SamplerConfig.from_config('dpmpp', config)
        self.assertIs(dpmpp.kind, SamplerKind.DPMPP_2M)
        self.assertEqual(dpmpp.steps, 20)
        self.assertEqual(dpmpp.candidates, 128)
        langevin = SamplerConfig.from_config('langevin', config,
                                             candidates=3, levels=2,
                                             steps_per_level=5, seed=None)
        self.assertEqual(langevin.steps, 10)
        self.assertEqual(langevin.candidates, 3)
        self.assertTrue(langevin.projection)
        self.assertEqual(langevin.eps0, 2e-5)
        self.assertRaises(UsageError, SamplerConfig.from_config, 'ddim',
                          config)
        self.assertRaises(UsageError, SamplerConfig.from_config, 'dpmpp',
                          config, guidance=2.0)


class DpmSolverTestCase(TestCase):

    def test_gaussian_moments(self):
        count = _sample_count()
        denoiser = analytic_gaussian_denoiser([0.3], [0.1])
        config = SamplerConfig(steps=20, candidates=count, batch=count,
                               seed=11)
        samples = dpmpp_2m(denoiser, None, (1,), config)[:, 0]
        tol_mean, tol_std = _tolerances(0.1, count)
        self.assertLess(abs(samples.mean() - 0.3), tol_mean)
        self.assertLess(abs(samples.std() - 0.1), tol_std)

    def test_time_spacing(self):
        """Uniform time nodes keep the mean but shrink the spread.

           With 20 uniform nodes N(0.3, 0.1^2) comes out with a standard
           deviation near 0.072, while the log-SNR ladder, the default,
           reaches 0.1.
        """
        count = _sample_count()
        denoiser = analytic_gaussian_denoiser([0.3], [0.1])
        config = SamplerConfig(steps=20, candidates=count, batch=count,
                               spacing='time', seed=11)
        samples = dpmpp_2m(denoiser, None, (1,), config)[:, 0]
        tol_mean, _ = _tolerances(0.1, count)
        self.assertLess(abs(samples.mean() - 0.3), tol_mean)
        self.assertGreater(samples.std(), 0.06)
        self.assertLess(samples.std(), 0.085)
        self.assertEqual(SamplerConfig().spacing, 'logsnr')

    def test_point_mass(self):
        denoiser = analytic_gaussian_denoiser([0.3, -0.5], [0.0, 0.0])
        config = SamplerConfig(steps=20, candidates=50, batch=50, seed=2)
        samples = dpmpp_2m(denoiser, None, (2,), config)
        self.assertTrue(np.all(np.abs(samples - [0.3, -0.5]) < 1e-3))

    def test_determinism(self):
        denoiser = analytic_gaussian_denoiser(np.zeros((2, 4)),
                                              np.full((2, 4), 0.4))
        config = SamplerConfig(steps=8, candidates=11, batch=3, seed=5)
        first = dpmpp_2m(denoiser, None, (2, 4), config)
        again = dpmpp_2m(denoiser, None, (2, 4), config)
        self.assertTrue(np.array_equal(first, again))
        regrouped = SamplerConfig(steps=8, candidates=11, batch=5,
                                  workers=3, seed=5)
        self.assertTrue(np.array_equal(
            first, dpmpp_2m(denoiser, None, (2, 4), regrouped)))
        other = SamplerConfig(steps=8, candidates=11, batch=3, seed=6)
        self.assertFalse(np.array_equal(
            first, dpmpp_2m(denoiser, None, (2, 4), other)))

    def test_clip(self):
        denoiser = analytic_gaussian_denoiser([0.0], [3.0])
        config = SamplerConfig(steps=10, candidates=200, batch=200, seed=1)
        samples = dpmpp_2m(denoiser, None, (1,), config, clip=1.0)
        self.assertLessEqual(float(np.abs(samples).max()), 1.0)

    def test_bad_denoiser(self):
        config = SamplerConfig(steps=4, candidates=2, batch=2)
        self.assertRaises(NumericError, dpmpp_2m,
                          lambda x, t, c: np.full(x.shape, np.nan), None,
                          (3,), config)
        self.assertRaises(NumericError, dpmpp_2m,
                          lambda x, t, c: x[..., :1], None, (3,), config)


class LangevinTestCase(TestCase):

    @staticmethod
    def _config(count, seed):
        return SamplerConfig(kind='langevin', steps=1000, levels=10,
                             steps_per_level=100, eps0=3e-3,
                             candidates=count, batch=count, seed=seed)

    def test_gaussian_moments(self):
        count = _sample_count()
        denoiser = analytic_gaussian_denoiser([0.3], [0.5])
        samples = annealed_langevin(denoiser, None, (1,),
                                    self._config(count, 21))[:, 0]
        tol_mean, tol_std = _tolerances(0.5, count)
        self.assertLess(abs(samples.mean() - 0.3), tol_mean)
        self.assertLess(abs(samples.std() - 0.5), tol_std)

    def test_clamped_coordinate(self):
        count = _sample_count()
        denoiser = analytic_gaussian_denoiser([0.2, -0.1], [0.3, 0.5])
        samples = annealed_langevin(denoiser, None, (2,),
                                    self._config(count, 22),
                                    projector=clamp_projector(0, 0.8))
        self.assertTrue(np.allclose(samples[:, 0], 0.8))
        tol_mean, tol_std = _tolerances(0.5, count)
        self.assertLess(abs(samples[:, 1].mean() + 0.1), tol_mean)
        self.assertLess(abs(samples[:, 1].std() - 0.5), tol_std)

    def test_levels(self):
        schedule = NoiseSchedule()
        config = self._config(1, 0)
        times, sigmas = langevin_levels(config)
        self.assertEqual(len(times), 10)
        self.assertEqual(times[0], 1.0)
        self.assertEqual(times[-1], 0.02)
        ratios = sigmas[1:] / sigmas[:-1]
        self.assertTrue(np.allclose(ratios, ratios[0], rtol=1e-6))
        self.assertAlmostEqual(sigmas[-1], float(schedule.sigma(0.02)))


class BoardSamplingTestCase(TestCase):

    GRID = BoardGrid(16, 0.5)

    def setUp(self):
        self.feeds = FeedSet([(0.0, 4.0), (8.0, 4.0)])
        # data sits at -1 (no metal) with a little spread
        self.denoiser = analytic_gaussian_denoiser(
            np.full((2, 16, 16), -1.0), np.full((2, 16, 16), 0.2))

    def test_project_feeds(self):
        x = np.zeros((2, 16, 16))
        mask = feed_pad_mask(self.GRID, self.feeds)
        out = project_feeds(x, self.feeds, 0.0, self.GRID)
        self.assertTrue(np.allclose(out[0][mask], 1.0))
        self.assertTrue(np.array_equal(out[0][~mask], x[0][~mask]))
        self.assertTrue(np.array_equal(out[1], x[1]))
        self.assertTrue(np.array_equal(x, np.zeros((2, 16, 16))))
        half = project_feeds(x, self.feeds, 0.5, self.GRID)
        alpha = float(NoiseSchedule().alpha(0.5))
        self.assertTrue(np.allclose(half[0][mask], alpha))

    def test_single_port(self):
        x = np.zeros((2, 16, 16))
        feeds = FeedSet([(0.0, 4.0), (8.0, 4.0)], [True, False])
        out = project_feeds(x, feeds, 0.0, self.GRID)
        self.assertTrue(np.all(out[0, :, 8:] == 0.0))
        self.assertGreater(int(np.count_nonzero(out[0, :, :8])), 0)

    def test_projection_validity(self):
        config = SamplerConfig(kind='langevin', steps=10, levels=2,
                               steps_per_level=5, candidates=6, batch=4,
                               projection=True, seed=3)
        layouts = langevin_sample(self.denoiser, None, self.feeds, config,
                                  self.GRID)
        self.assertEqual(len(layouts), 6)
        mask = feed_pad_mask(self.GRID, self.feeds)
        for layout in layouts:
            self.assertTrue(feed_valid(layout, self.feeds))
            self.assertTrue(np.all(layout.metal[mask] == 1.0))

    def test_dpmpp_projection(self):
        config = SamplerConfig(steps=6, candidates=2, batch=2, seed=5,
                               projection=True)
        layouts = dpmpp_2m_sample(self.denoiser, None, config, self.GRID,
                                  self.feeds)
        self.assertEqual(len(layouts), 2)
        for layout in layouts:
            self.assertTrue(feed_valid(layout, self.feeds))
        self.assertRaises(UsageError, dpmpp_2m_sample, self.denoiser, None,
                          config, self.GRID)
        langevin = SamplerConfig(kind='langevin', steps=4, levels=2,
                                 steps_per_level=2, candidates=2)
        self.assertRaises(UsageError, dpmpp_2m_sample, self.denoiser, None,
                          langevin, self.GRID, self.feeds)

    def test_dispatch(self):
        config = SamplerConfig(steps=6, candidates=3, batch=3, seed=8)
        layouts = sample_layouts(self.denoiser, None, self.feeds, config,
                                 self.GRID)
        self.assertEqual(len(layouts), 3)
        for layout in layouts:
            self.assertEqual(layout.grid, self.GRID)
            self.assertTrue(np.all((layout.metal >= 0.0) &
                                   (layout.metal <= 1.0)))
            # the data mean is no metal
            self.assertFalse(feed_valid(layout, self.feeds))
        self.assertRaises(UsageError, langevin_sample, self.denoiser, None,
                          self.feeds, config, self.GRID)


def suite():
    suite_ = TestSuite()
    loader = TestLoader()
    for testcase in (ScheduleTestCase, AnalyticDenoiserTestCase,
                     SamplerConfigTestCase, DpmSolverTestCase,
                     LangevinTestCase, BoardSamplingTestCase):
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
