# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Domain types, frequency grid and conditioning encoders shared by all
   pyrfdiff modules.

   Board arrays are indexed ``[iy, ix]``: row 0 lies along the lower board
   edge, column 0 along the left edge. Physical coordinates are in mm with
   the origin at the lower-left board corner.
"""

#pylint: disable-msg=too-many-arguments
#pylint: disable-msg=invalid-name

from dataclasses import dataclass, field
from enum import IntEnum
from logging import getLogger
from math import floor
from typing import Iterable, List, Optional, Sequence, Tuple
import numpy as np


class RfDiffError(Exception):
    """Base class for all pyrfdiff errors"""


class GeometryError(RfDiffError, ValueError):
    """Invalid grid, feed or geometry definition"""


class NoFitError(RfDiffError):
    """Layout does not match the topology of a template family"""


class FormatError(RfDiffError):
    """Malformed input file or record"""


class NumericError(RfDiffError, ArithmeticError):
    """Singular or non-finite numerical result"""


class UsageError(RfDiffError, ValueError):
    """Invalid user-provided token or value"""


MAG_FLOOR_DB = -80.0
"""Magnitudes are clamped to this level before dB conversion."""

COMPONENTS = ('S11', 'S21', 'S12', 'S22')
"""Storage order of the 2-port scattering components."""

# Conditioning channel layout
CH_FEED = 0
CH_DIELECTRIC = 1
CH_SPARAMS = 4
CH_TEMPLATE = 16
CONDITIONING_CHANNELS = 17

TEMPLATE_SCALE = 32.0


class TemplateId(IntEnum):
    """Nominal template family identifier."""

    NULL = -1
    MLINE = 0
    STEPPED_LPF = 1
    OPEN_STUB_BSF = 2
    VIA_SHUNT_STUB = 3
    L_MATCH = 4

    @property
    def token(self) -> str:
        """Lower case name, as used on the command line."""
        return 'none' if self is TemplateId.NULL else self.name.lower()

    @property
    def embedding_row(self) -> int:
        """Row of the template embedding table, NULL being the last one."""
        return len(TemplateId) - 1 if self is TemplateId.NULL else int(self)

    @classmethod
    def families(cls) -> List['TemplateId']:
        """All concrete families, NULL excluded."""
        return [tid for tid in cls if tid is not cls.NULL]


@dataclass(frozen=True)
class BoardGrid:
    """Square pixel grid laid over the board."""

    n: int = 64
    pitch_mm: float = 0.125

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise GeometryError(f'Invalid grid size: {self.n}')
        if not self.pitch_mm > 0:
            raise GeometryError(f'Invalid grid pitch: {self.pitch_mm}')

    @property
    def side_mm(self) -> float:
        """Board side length in mm."""
        return self.n * self.pitch_mm

    def contains(self, x_mm: float, y_mm: float) -> bool:
        """Tell whether a point lies on the board, edges included."""
        side = self.side_mm
        return 0.0 <= x_mm <= side and 0.0 <= y_mm <= side

    def pixel_of(self, x_mm: float, y_mm: float) -> Tuple[int, int]:
        """Return the (ix, iy) pixel containing a point.

           Points on the upper or right board edge belong to the last
           pixel.
        """
        if not self.contains(x_mm, y_mm):
            raise GeometryError(f'Point ({x_mm}, {y_mm}) is off board')
        ix = min(int(floor(x_mm / self.pitch_mm)), self.n - 1)
        iy = min(int(floor(y_mm / self.pitch_mm)), self.n - 1)
        return ix, iy

    def scaled(self, factor: int) -> 'BoardGrid':
        """Grid covering the same board with `factor` times fewer pixels
           per side."""
        if self.n % factor:
            raise GeometryError(f'Cannot scale {self.n} pixels by {factor}')
        return BoardGrid(self.n // factor, self.pitch_mm * factor)


@dataclass(frozen=True)
class FrequencyGrid:
    """Fixed frequency grid, f_k = start + k * step."""

    start_ghz: float = 1.0
    stop_ghz: float = 20.0
    count: int = 51

    def __post_init__(self):
        if self.count < 2 or not self.stop_ghz > self.start_ghz > 0:
            raise GeometryError('Invalid frequency grid')

    @property
    def f_ghz(self) -> np.ndarray:
        return np.linspace(self.start_ghz, self.stop_ghz, self.count)

    @property
    def f_hz(self) -> np.ndarray:
        return self.f_ghz * 1e9

    def __len__(self) -> int:
        return self.count


def magnitude_db(values: np.ndarray, floor_db: float = MAG_FLOOR_DB) \
        -> np.ndarray:
    """Magnitude in dB of complex values, clamped below at `floor_db`."""
    mag = np.maximum(np.abs(values), 10.0 ** (floor_db / 20.0))
    return 20.0 * np.log10(mag)


@dataclass
class SParamSet:
    """2-port scattering data on a frequency grid.

       ``data`` is a complex (4, F) array in :data:`COMPONENTS` order.
       ``valid_mask`` flags the meaningful components, ``point_mask`` the
       meaningful frequency points of each component.
    """

    data: np.ndarray
    valid_mask: np.ndarray = None
    point_mask: np.ndarray = None

    def __post_init__(self):
        self.data = np.array(self.data, dtype=complex)
        if self.data.ndim != 2 or self.data.shape[0] != len(COMPONENTS):
            raise GeometryError(f'Invalid S-parameter shape: '
                                f'{self.data.shape}')
        if self.valid_mask is None:
            self.valid_mask = np.ones(len(COMPONENTS), dtype=bool)
        self.valid_mask = np.array(self.valid_mask, dtype=bool)
        if self.point_mask is None:
            self.point_mask = np.ones(self.data.shape, dtype=bool)
        self.point_mask = np.array(self.point_mask, dtype=bool)
        if self.valid_mask.shape != (len(COMPONENTS),) or \
                self.point_mask.shape != self.data.shape:
            raise GeometryError('Invalid S-parameter mask shape')
        if not self.valid_mask.any():
            raise GeometryError('No valid S-parameter component')

    @classmethod
    def from_matrix(cls, smat: np.ndarray) -> 'SParamSet':
        """Build from a (F, 2, 2) scattering matrix stack."""
        smat = np.asarray(smat)
        return cls(np.stack([smat[:, 0, 0], smat[:, 1, 0],
                             smat[:, 0, 1], smat[:, 1, 1]]))

    @property
    def effective_mask(self) -> np.ndarray:
        """(4, F) mask of entries that carry meaning."""
        return self.point_mask & self.valid_mask[:, None]

    @property
    def frequency_count(self) -> int:
        return self.data.shape[1]

    def component(self, name: str) -> np.ndarray:
        return self.data[COMPONENTS.index(name.upper())]

    def matrix(self) -> np.ndarray:
        """Return the (F, 2, 2) scattering matrix stack."""
        smat = np.empty((self.frequency_count, 2, 2), dtype=complex)
        smat[:, 0, 0], smat[:, 1, 0], smat[:, 0, 1], smat[:, 1, 1] = \
            self.data
        return smat

    def copy(self) -> 'SParamSet':
        return SParamSet(self.data.copy(), self.valid_mask.copy(),
                         self.point_mask.copy())

    def __eq__(self, other):
        if not isinstance(other, SParamSet):
            return NotImplemented
        return (np.array_equal(self.data, other.data) and
                np.array_equal(self.valid_mask, other.valid_mask) and
                np.array_equal(self.point_mask, other.point_mask))


@dataclass(frozen=True)
class DatasetStats:
    """z-score statistics of valid magnitude-dB samples."""

    mu_db: float
    sigma_db: float

    def __post_init__(self):
        if not np.isfinite(self.mu_db) or not self.sigma_db > 0:
            raise NumericError(f'Invalid dataset statistics '
                               f'({self.mu_db}, {self.sigma_db})')


def compute_stats(sparam_sets: Iterable[SParamSet]) -> DatasetStats:
    """Compute one global (mu, sigma) pair over the clamped dB magnitude of
       every valid entry.
    """
    samples = [magnitude_db(sp.data[sp.effective_mask])
               for sp in sparam_sets]
    values = np.concatenate(samples) if samples else np.empty(0)
    if not values.size:
        raise NumericError('No valid S-parameter sample')
    sigma = float(np.std(values))
    if not sigma > 0:
        getLogger('pyrfdiff.core').warning('Degenerate magnitude spread, '
                                           'using unit sigma')
        sigma = 1.0
    return DatasetStats(float(np.mean(values)), sigma)


@dataclass(frozen=True)
class FeedSet:
    """Up to two port positions in mm, each with an active flag.

       Two slots are always present; unused slots are inactive.
    """

    ports: Tuple[Tuple[float, float], ...]
    active_mask: Tuple[bool, ...] = None

    def __post_init__(self):
        ports = [(float(x), float(y)) for x, y in self.ports]
        if not 1 <= len(ports) <= 2:
            raise GeometryError(f'Invalid port count: {len(ports)}')
        active = list(self.active_mask) if self.active_mask is not None \
            else [True] * len(ports)
        if len(active) != len(ports):
            raise GeometryError('Port and mask counts differ')
        while len(ports) < 2:
            ports.append((0.0, 0.0))
            active.append(False)
        active = tuple(bool(a) for a in active)
        if not any(active):
            raise GeometryError('No active port')
        object.__setattr__(self, 'ports', tuple(ports))
        object.__setattr__(self, 'active_mask', active)

    @property
    def count(self) -> int:
        """Number of active ports."""
        return sum(self.active_mask)

    def active_ports(self) -> List[Tuple[float, float]]:
        return [port for port, active in zip(self.ports, self.active_mask)
                if active]

    def swapped(self) -> 'FeedSet':
        return FeedSet(self.ports[::-1], self.active_mask[::-1])

    def validate(self, grid: BoardGrid) -> None:
        """Check that every active port lies on the board.

           :raise GeometryError: if a port is off board
        """
        for x_mm, y_mm in self.active_ports():
            if not grid.contains(x_mm, y_mm):
                raise GeometryError(f'Feed ({x_mm}, {y_mm}) lies outside '
                                    f'the {grid.side_mm} mm board')


@dataclass(frozen=True)
class SubstrateSpec:
    """Dielectric description."""

    eps_r: float
    tan_delta: float
    h_mm: float

    def __post_init__(self):
        if not self.eps_r >= 1.0:
            raise GeometryError(f'Invalid permittivity: {self.eps_r}')
        if not self.tan_delta >= 0.0:
            raise GeometryError(f'Invalid loss tangent: {self.tan_delta}')
        if not self.h_mm > 0.0:
            raise GeometryError(f'Invalid thickness: {self.h_mm}')


@dataclass
class BoardLayout:
    """Metal and via density channels on one grid."""

    grid: BoardGrid
    metal: np.ndarray
    via: np.ndarray = None

    def __post_init__(self):
        shape = (self.grid.n, self.grid.n)
        self.metal = np.array(self.metal, dtype=float)
        self.via = np.zeros(shape) if self.via is None else \
            np.array(self.via, dtype=float)
        for name in ('metal', 'via'):
            channel = getattr(self, name)
            if channel.shape != shape:
                raise GeometryError(f'Invalid {name} channel shape '
                                    f'{channel.shape}')
            if not np.all((channel >= 0.0) & (channel <= 1.0)):
                raise GeometryError(f'{name.title()} density out of [0, 1]')

    @classmethod
    def empty(cls, grid: BoardGrid) -> 'BoardLayout':
        return cls(grid, np.zeros((grid.n, grid.n)))

    @classmethod
    def from_array(cls, grid: BoardGrid, data: np.ndarray) -> 'BoardLayout':
        """Build from a (2, n, n) array, clamping to [0, 1]."""
        data = np.clip(np.asarray(data, dtype=float), 0.0, 1.0)
        return cls(grid, data[0], data[1])

    def as_array(self) -> np.ndarray:
        """Return the (2, n, n) stack of metal and via channels."""
        return np.stack([self.metal, self.via])

    def copy(self) -> 'BoardLayout':
        return BoardLayout(self.grid, self.metal.copy(), self.via.copy())

    def downsample(self, factor: int) -> 'BoardLayout':
        """Box-average `factor` x `factor` pixel blocks."""
        grid = self.grid.scaled(factor)
        def _box(channel):
            return channel.reshape(grid.n, factor, grid.n, factor).mean(
                axis=(1, 3))
        return BoardLayout(grid, np.clip(_box(self.metal), 0.0, 1.0),
                           np.clip(_box(self.via), 0.0, 1.0))

    def upsample(self, factor: int) -> 'BoardLayout':
        """Nearest neighbour upsampling."""
        grid = BoardGrid(self.grid.n * factor, self.grid.pitch_mm / factor)
        block = np.ones((factor, factor))
        return BoardLayout(grid, np.kron(self.metal, block),
                           np.kron(self.via, block))

    def __eq__(self, other):
        if not isinstance(other, BoardLayout):
            return NotImplemented
        return (self.grid == other.grid and
                np.array_equal(self.metal, other.metal) and
                np.array_equal(self.via, other.via))


@dataclass
class ConditioningBundle:
    """Everything a layout is generated from."""

    feeds: FeedSet
    substrate: SubstrateSpec
    target: Optional[SParamSet] = None
    template: TemplateId = field(default=TemplateId.NULL)


def encode_sparams(target: SParamSet, stats: DatasetStats) \
        -> Tuple[np.ndarray, np.ndarray]:
    """Encode S-parameters as per-frequency features.

       :return: a (4, F, 3) array of (z-scored dB magnitude, sin, cos of the
                phase) and the (4,) component mask. Masked entries are all
                zero.
    """
    mask = target.effective_mask
    zmag = (magnitude_db(target.data) - stats.mu_db) / stats.sigma_db
    phase = np.angle(target.data)
    features = np.stack([zmag, np.sin(phase), np.cos(phase)], axis=-1)
    features[~mask] = 0.0
    return features, mask.any(axis=1)


def summarize_sparams(target: Optional[SParamSet],
                      stats: DatasetStats) -> np.ndarray:
    """Frequency-pooled (4, 3) summary: mean of each feature over the valid
       points of each component, zero for invalid components."""
    summary = np.zeros((len(COMPONENTS), 3))
    if target is None:
        return summary
    features, _ = encode_sparams(target, stats)
    mask = target.effective_mask
    for comp in range(len(COMPONENTS)):
        if mask[comp].any():
            summary[comp] = features[comp][mask[comp]].mean(axis=0)
    return summary


def template_channel_value(template: TemplateId) -> float:
    template = TemplateId(template)
    if template is TemplateId.NULL:
        return -1.0
    return int(template) / TEMPLATE_SCALE


def template_from_channel(value: float) -> TemplateId:
    """Decode the template id carried by a template channel value."""
    if value < 0:
        return TemplateId.NULL
    return TemplateId(int(round(value * TEMPLATE_SCALE)))


def encode_conditioning_channels(bundle: ConditioningBundle,
                                 grid: BoardGrid,
                                 stats: DatasetStats) -> np.ndarray:
    """Encode a conditioning bundle as a stack of n x n channels.

       Channel 0 holds the feed map, channels 1-3 the dielectric
       (eps_r/10, tan_delta*10, h_mm), channels 4-15 the S-parameter
       summary (per component: mean z-scored dB, sin, cos) and channel 16
       the template id.

       :raise GeometryError: if a feed lies outside the board
    """
    bundle.feeds.validate(grid)
    channels = np.zeros((CONDITIONING_CHANNELS, grid.n, grid.n))
    for x_mm, y_mm in bundle.feeds.active_ports():
        ix, iy = grid.pixel_of(x_mm, y_mm)
        channels[CH_FEED, iy, ix] = 1.0
    sub = bundle.substrate
    channels[CH_DIELECTRIC:CH_SPARAMS] = np.array(
        [sub.eps_r / 10.0, sub.tan_delta * 10.0, sub.h_mm])[:, None, None]
    summary = summarize_sparams(bundle.target, stats).reshape(-1)
    channels[CH_SPARAMS:CH_TEMPLATE] = summary[:, None, None]
    channels[CH_TEMPLATE] = template_channel_value(bundle.template)
    return channels


def mask_components(sparams: SParamSet,
                    keep: Sequence[bool]) -> Optional[SParamSet]:
    """Return a copy with only the `keep` components valid, or None if no
       component survives."""
    valid = sparams.valid_mask & np.array(keep, dtype=bool)
    if not valid.any():
        return None
    return SParamSet(sparams.data.copy(), valid, sparams.point_mask.copy())
