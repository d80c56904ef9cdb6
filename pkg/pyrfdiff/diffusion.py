# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Variance preserving diffusion: noise schedule, samplers and projectors.

   Samplers work on arrays of any data shape, one row per candidate. The
   board level entry points map the two data channels (metal, via) from
   [-1, 1] back to [0, 1] densities.

   Denoisers are callables ``denoiser(x_t, t, cond) -> eps`` where `x_t`
   is a (B, ...) batch, `t` a scalar time shared by the batch and `cond`
   an opaque conditioning object handed over unchanged.
"""

#pylint: disable-msg=too-many-arguments
#pylint: disable-msg=too-many-locals
#pylint: disable-msg=too-many-instance-attributes
#pylint: disable-msg=invalid-name

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from logging import getLogger
from math import cos, log, pi, sqrt
from typing import Callable, List, Optional, Sequence, Tuple, Union
import numpy as np
from scipy.special import expit
from .core import (BoardGrid, BoardLayout, FeedSet, NumericError,
                   UsageError)
from .misc import EasyDict, derive_seed
from .raster import feed_pad_mask


Denoiser = Callable[[np.ndarray, float, object], np.ndarray]
Projector = Callable[[np.ndarray, float], np.ndarray]

COSINE_OFFSET = 0.008
ALPHA_BAR_FLOOR = 1e-8

T_EPS = 1e-3
"""Last non-zero node of the log-SNR ladder."""

START_LOGSNR = -2.5
"""Top of the uniform log-SNR ladder; the first step jumps there from t=1."""

_logger = getLogger('pyrfdiff.diffusion')


class NoiseSchedule:
    """Cosine variance preserving schedule over t in [0, 1].

       alpha_bar(t) = cos^2((t + s)/(1 + s) pi/2) / cos^2(s/(1 + s) pi/2),
       floored at 1e-8 so that every quantity stays finite at t = 1.
    """

    def __init__(self, offset: float = COSINE_OFFSET,
                 floor: float = ALPHA_BAR_FLOOR):
        self._offset = offset
        self._floor = floor
        self._norm = cos(offset / (1.0 + offset) * pi / 2) ** 2

    def _angle(self, t):
        return (np.asarray(t, dtype=float) + self._offset) / \
            (1.0 + self._offset) * pi / 2

    def alpha_bar(self, t):
        value = np.cos(self._angle(t)) ** 2 / self._norm
        value = np.clip(value, self._floor, 1.0)
        return float(value) if np.ndim(value) == 0 else value

    def alpha(self, t):
        return np.sqrt(self.alpha_bar(t))

    def sigma(self, t):
        return np.sqrt(1.0 - self.alpha_bar(t))

    def logsnr(self, t):
        """Half log signal to noise ratio, log(alpha / sigma)."""
        with np.errstate(divide='ignore'):
            return np.log(self.alpha(t)) - np.log(self.sigma(t))

    def t_of_alpha_bar(self, alpha_bar):
        alpha_bar = np.clip(np.asarray(alpha_bar, dtype=float), self._floor,
                            1.0)
        angle = np.arccos(np.clip(np.sqrt(alpha_bar * self._norm), 0.0, 1.0))
        t = np.clip(angle * 2 / pi * (1.0 + self._offset) - self._offset,
                    0.0, 1.0)
        return float(t) if np.ndim(t) == 0 else t

    def t_of_sigma(self, sigma):
        return self.t_of_alpha_bar(1.0 - np.asarray(sigma, dtype=float) ** 2)

    def t_of_logsnr(self, logsnr):
        return self.t_of_alpha_bar(expit(2.0 * np.asarray(logsnr,
                                                          dtype=float)))


class SamplerKind(Enum):
    """Supported samplers."""

    DPMPP_2M = 'dpmpp'
    LANGEVIN = 'langevin'


@dataclass
class SamplerConfig:
    """Sampler settings.

       `batch` candidates share each denoiser call; `workers` threads
       process batches concurrently. Neither changes the result.
    """

    kind: SamplerKind = SamplerKind.DPMPP_2M
    steps: int = 20
    candidates: int = 128
    levels: int = 10
    steps_per_level: int = 100
    eps0: float = 2e-5
    t_min: float = 0.02
    projection: bool = False
    seed: int = 0
    workers: int = 1
    batch: int = 16
    spacing: str = 'logsnr'

    def __post_init__(self):
        self.kind = SamplerKind(self.kind)
        if self.steps < 2:
            raise UsageError(f'At least 2 sampler steps needed, got '
                             f'{self.steps}')
        if self.candidates < 1:
            raise UsageError(f'Invalid candidate count {self.candidates}')
        if self.batch < 1 or self.workers < 1:
            raise UsageError('Invalid batch or worker count')
        if self.kind is SamplerKind.LANGEVIN:
            if self.levels * self.steps_per_level != self.steps:
                raise UsageError(f'{self.levels} levels of '
                                 f'{self.steps_per_level} steps do not '
                                 f'make {self.steps} steps')
            if not 0.0 < self.t_min < 1.0 or not self.eps0 > 0:
                raise UsageError('Invalid Langevin ladder')
        elif self.spacing not in ('logsnr', 'time'):
            raise UsageError(f'Unknown step spacing {self.spacing}')

    @classmethod
    def from_config(cls, kind: Union[str, SamplerKind], config: EasyDict,
                    **overrides) -> 'SamplerConfig':
        """Build from the ``sampler`` section of a configuration tree.

           :param kind: sampler kind or its token
           :param config: the whole configuration tree
           :param overrides: values that replace configured ones, None
                             values being ignored
        """
        try:
            kind = SamplerKind(kind)
        except ValueError as exc:
            raise UsageError(f"Unknown sampler '{kind}'") from exc
        values = dict(config.sampler[kind.value])
        values.update({k: v for k, v in overrides.items() if v is not None})
        if kind is SamplerKind.LANGEVIN and overrides.get('steps') is None:
            values['steps'] = values['levels'] * values['steps_per_level']
        names = set(cls.__dataclass_fields__)  #pylint: disable-msg=no-member
        unknown = set(values) - names
        if unknown:
            raise UsageError(f"Unknown sampler option(s): "
                             f"{', '.join(sorted(unknown))}")
        return cls(kind=kind, **values)


class AnalyticGaussianDenoiser:
    """Exact denoiser of Gaussian data N(mu, diag(std^2)).

       A zero standard deviation describes a point mass.
    """

    def __init__(self, mu, std, schedule: Optional[NoiseSchedule] = None):
        self.mu = np.asarray(mu, dtype=float)
        self.std = np.asarray(std, dtype=float)
        if np.any(self.std < 0):
            raise NumericError('Negative standard deviation')
        self.schedule = schedule or NoiseSchedule()

    def _moments(self, t: float) -> Tuple[float, float, np.ndarray]:
        alpha = float(self.schedule.alpha(t))
        sigma = float(self.schedule.sigma(t))
        return alpha, sigma, alpha ** 2 * self.std ** 2 + sigma ** 2

    def posterior_mean(self, x_t: np.ndarray, t: float) -> np.ndarray:
        """E[x0 | x_t]."""
        alpha, _, var = self._moments(t)
        gain = np.divide(alpha * self.std ** 2, var,
                         out=np.zeros(np.broadcast(self.std, var).shape),
                         where=var > 0)
        return self.mu + gain * (x_t - alpha * self.mu)

    def score(self, x_t: np.ndarray, t: float) -> np.ndarray:
        """Gradient of the log density of the noised marginal."""
        alpha, _, var = self._moments(t)
        return -(x_t - alpha * self.mu) / var

    def __call__(self, x_t: np.ndarray, t: float, cond=None) -> np.ndarray:
        alpha, sigma, var = self._moments(t)
        return np.divide(sigma * (x_t - alpha * self.mu), var,
                         out=np.zeros(np.broadcast(x_t, var).shape),
                         where=var > 0)


def analytic_gaussian_denoiser(mu, sigma_diag,
                               schedule: Optional[NoiseSchedule] = None) \
        -> AnalyticGaussianDenoiser:
    """Exact eps prediction for N(mu, diag(sigma_diag^2)) data."""
    return AnalyticGaussianDenoiser(mu, sigma_diag, schedule)


def clamp_projector(index, value: float,
                    schedule: Optional[NoiseSchedule] = None) -> Projector:
    """Projector pinning data coordinates to the noised mean of `value`.

       :param index: index (or index tuple) into the per-candidate data
    """
    schedule = schedule or NoiseSchedule()
    key = (Ellipsis,) + (index if isinstance(index, tuple) else (index,))

    def _project(x: np.ndarray, t: float) -> np.ndarray:
        x[key] = float(schedule.alpha(t)) * value
        return x
    return _project


def project_feeds(x_t: np.ndarray, feeds: FeedSet, t: float,
                  grid: BoardGrid,
                  schedule: Optional[NoiseSchedule] = None) -> np.ndarray:
    """Clamp the metal channel of every active feed pad to the noised mean
       of full metallization.

       :param x_t: (..., 2, n, n) data in [-1, 1] space
       :return: a projected copy, other entries untouched
    """
    return feed_projector(feeds, grid, schedule)(np.array(x_t), t)


def feed_projector(feeds: FeedSet, grid: BoardGrid,
                   schedule: Optional[NoiseSchedule] = None) -> Projector:
    """In place variant of :func:`project_feeds` for the samplers."""
    schedule = schedule or NoiseSchedule()
    mask = feed_pad_mask(grid, feeds)

    def _project(x: np.ndarray, t: float) -> np.ndarray:
        metal = x[..., 0, :, :]
        metal[..., mask] = float(schedule.alpha(t))
        return x
    return _project


def _predict_eps(denoiser: Denoiser, x: np.ndarray, t: float,
                 cond) -> np.ndarray:
    eps = np.asarray(denoiser(x, t, cond), dtype=float)
    if eps.shape != x.shape:
        raise NumericError(f'Denoiser output shape {eps.shape} differs from '
                           f'input {x.shape}')
    if not np.all(np.isfinite(eps)):
        raise NumericError(f'Non-finite denoiser output at t={t:.4f}')
    return eps


def _run_batches(config: SamplerConfig,
                 kernel: Callable[[List[np.random.Generator]], np.ndarray]) \
        -> np.ndarray:
    """Split candidates into fixed batches, each candidate with its own
       random stream, and run them on the worker pool."""
    starts = range(0, config.candidates, config.batch)
    batches = [range(start, min(start + config.batch, config.candidates))
               for start in starts]

    def _batch(indices):
        return kernel([np.random.default_rng(derive_seed(config.seed, k))
                       for k in indices])
    if config.workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            results = list(executor.map(_batch, batches))
    else:
        results = [_batch(indices) for indices in batches]
    return np.concatenate(results)


def dpmpp_times(steps: int, spacing: str = 'logsnr',
                schedule: Optional[NoiseSchedule] = None) -> np.ndarray:
    """Decreasing time nodes of the DPM-Solver++ sampler, from 1 to 0.

       ``logsnr`` spacing jumps from t=1 to the top of a uniform log-SNR
       ladder ending at t=1e-3, then steps to t=0: `steps` intervals.
       ``time`` spacing uses `steps` uniform nodes: `steps` - 1 intervals.
    """
    schedule = schedule or NoiseSchedule()
    if spacing == 'time':
        return np.linspace(1.0, 0.0, steps)
    top = max(float(schedule.logsnr(1.0)), START_LOGSNR)
    ladder = np.linspace(top, float(schedule.logsnr(T_EPS)), steps - 1)
    times = [1.0] + [schedule.t_of_logsnr(lam) for lam in ladder] + [0.0]
    return np.array(times)


def dpmpp_2m(denoiser: Denoiser, cond, shape: Sequence[int],
             config: SamplerConfig, projector: Optional[Projector] = None,
             clip: Optional[float] = None,
             schedule: Optional[NoiseSchedule] = None) -> np.ndarray:
    """Second order multistep DPM-Solver++ in data prediction form.

       The first and the last steps are first order; the last step lands
       on t=0, i.e. on the data prediction itself.

       :param denoiser: eps prediction callable
       :param cond: conditioning handed to the denoiser
       :param shape: per-candidate data shape
       :param config: sampler settings
       :param projector: optional in place constraint applied after each
                         step
       :param clip: optional bound of the data prediction magnitude
       :return: (candidates, *shape) samples
    """
    schedule = schedule or NoiseSchedule()
    times = dpmpp_times(config.steps, config.spacing, schedule)
    shape = tuple(shape)

    def _data_prediction(x, t):
        eps = _predict_eps(denoiser, x, t, cond)
        x0 = (x - float(schedule.sigma(t)) * eps) / float(schedule.alpha(t))
        return x0 if clip is None else np.clip(x0, -clip, clip)

    def _kernel(rngs):
        x = np.stack([rng.standard_normal(shape) for rng in rngs])
        prev_x0, prev_h = None, None
        for t_cur, t_next in zip(times[:-1], times[1:]):
            x0 = _data_prediction(x, t_cur)
            if t_next <= 0.0:
                x = x0
            else:
                a_cur = float(schedule.alpha(t_cur))
                s_cur = float(schedule.sigma(t_cur))
                a_next = float(schedule.alpha(t_next))
                s_next = float(schedule.sigma(t_next))
                decay = (s_next * a_cur) / (a_next * s_cur)
                h = -log(decay)
                if prev_x0 is None:
                    d = x0
                else:
                    r = prev_h / h
                    d = (1.0 + 0.5 / r) * x0 - (0.5 / r) * prev_x0
                x = (s_next / s_cur) * x - a_next * (decay - 1.0) * d
                prev_x0, prev_h = x0, h
            if projector:
                x = projector(x, float(t_next))
        return x

    _logger.debug('DPM++(2M) %d candidates, %d steps', config.candidates,
                  len(times) - 1)
    return _run_batches(config, _kernel)


def langevin_levels(config: SamplerConfig,
                    schedule: Optional[NoiseSchedule] = None) \
        -> Tuple[np.ndarray, np.ndarray]:
    """Return the (times, sigmas) of the annealing ladder, sigma being
       geometric from sigma(1) down to sigma(t_min)."""
    schedule = schedule or NoiseSchedule()
    sigmas = np.geomspace(float(schedule.sigma(1.0)),
                          float(schedule.sigma(config.t_min)), config.levels)
    times = np.array([schedule.t_of_sigma(sig) for sig in sigmas])
    times[0], times[-1] = 1.0, config.t_min
    return times, np.array([float(schedule.sigma(t)) for t in times])


def annealed_langevin(denoiser: Denoiser, cond, shape: Sequence[int],
                      config: SamplerConfig,
                      projector: Optional[Projector] = None,
                      clip: Optional[float] = None,
                      schedule: Optional[NoiseSchedule] = None) -> np.ndarray:
    """Annealed Langevin dynamics on the noised marginals.

       Each level runs ``x <- x + eta s(x) + sqrt(2 eta) z`` with the score
       ``s = -eps / sigma`` and ``eta = eps0 sigma^2 / sigma_min^2``. The
       last iterate is denoised once and projected at t=0.

       :return: (candidates, *shape) samples
    """
    schedule = schedule or NoiseSchedule()
    times, sigmas = langevin_levels(config, schedule)
    shape = tuple(shape)
    count = config.steps_per_level
    sigma_min = sigmas[-1]

    def _kernel(rngs):
        x = np.stack([rng.standard_normal(shape) for rng in rngs])
        for t_level, sigma in zip(times, sigmas):
            eta = config.eps0 * sigma ** 2 / sigma_min ** 2
            noise = np.stack([rng.standard_normal((count,) + shape)
                              for rng in rngs], axis=1)
            gain = sqrt(2.0 * eta)
            for step in range(count):
                eps = _predict_eps(denoiser, x, float(t_level), cond)
                x = x - (eta / sigma) * eps + gain * noise[step]
                if projector:
                    x = projector(x, float(t_level))
        eps = _predict_eps(denoiser, x, float(times[-1]), cond)
        x0 = (x - sigma_min * eps) / float(schedule.alpha(times[-1]))
        if clip is not None:
            x0 = np.clip(x0, -clip, clip)
        if projector:
            x0 = projector(x0, 0.0)
        return x0

    _logger.debug('Langevin %d candidates, %d levels x %d steps',
                  config.candidates, config.levels, count)
    return _run_batches(config, _kernel)


def to_layouts(samples: np.ndarray, grid: BoardGrid,
               feeds: Optional[FeedSet] = None) -> List[BoardLayout]:
    """Map (K, 2, n, n) samples from [-1, 1] to clamped [0, 1] layouts,
       forcing metal on the feed pads when `feeds` is given."""
    data = np.clip((samples + 1.0) / 2.0, 0.0, 1.0)
    if feeds is not None:
        data[:, 0, feed_pad_mask(grid, feeds)] = 1.0
    return [BoardLayout.from_array(grid, sample) for sample in data]


def _board_sample(sampler, denoiser: Denoiser, cond, feeds: Optional[FeedSet],
                  config: SamplerConfig, grid: BoardGrid) \
        -> List[BoardLayout]:
    projector = None
    if config.projection:
        if feeds is None:
            raise UsageError('Feed projection needs feeds')
        projector = feed_projector(feeds, grid)
    samples = sampler(denoiser, cond, (2, grid.n, grid.n), config,
                      projector=projector, clip=1.0)
    return to_layouts(samples, grid, feeds if config.projection else None)


def dpmpp_2m_sample(denoiser: Denoiser, cond, config: SamplerConfig,
                    grid: BoardGrid,
                    feeds: Optional[FeedSet] = None) -> List[BoardLayout]:
    """Generate candidate layouts with DPM-Solver++(2M).

       Feed projection is applied only if enabled in `config`.
    """
    if config.kind is not SamplerKind.DPMPP_2M:
        raise UsageError('Not a DPM-Solver++ configuration')
    return _board_sample(dpmpp_2m, denoiser, cond, feeds, config, grid)


def langevin_sample(denoiser: Denoiser, cond, feeds: FeedSet,
                    config: SamplerConfig,
                    grid: BoardGrid) -> List[BoardLayout]:
    """Generate candidate layouts with annealed Langevin dynamics."""
    if config.kind is not SamplerKind.LANGEVIN:
        raise UsageError('Not a Langevin configuration')
    return _board_sample(annealed_langevin, denoiser, cond, feeds, config,
                         grid)


def sample_layouts(denoiser: Denoiser, cond, feeds: FeedSet,
                   config: SamplerConfig,
                   grid: BoardGrid) -> List[BoardLayout]:
    """Dispatch on the configured sampler kind."""
    if config.kind is SamplerKind.LANGEVIN:
        return langevin_sample(denoiser, cond, feeds, config, grid)
    return dpmpp_2m_sample(denoiser, cond, config, grid, feeds)
