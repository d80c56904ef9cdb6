# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Touchstone v1 2-port (.s2p) reader and writer.

   Network data is loaded and resampled with scikit-rf. A thin parsing
   pass runs first, to report malformed content with its line number and
   to pick up the validity comments pyrfdiff writes.
"""

#pylint: disable-msg=too-few-public-methods
#pylint: disable-msg=too-many-instance-attributes

from dataclasses import dataclass, field
from logging import getLogger
from os.path import splitext
from re import match
from typing import List, Optional, TextIO, Tuple
import numpy as np
import skrf as rf
from .core import COMPONENTS, FormatError, FrequencyGrid, SParamSet


FREQ_UNITS = {'hz': 1e-9, 'khz': 1e-6, 'mhz': 1e-3, 'ghz': 1.0}
"""Multiplier from each frequency unit to GHz."""

FORMATS = ('ri', 'ma', 'db')

VALUES_PER_ROW = 1 + 2 * len(COMPONENTS)

MASK_COMMENT = 'mask'
"""Header comment flagging which components are valid."""

POINTS_COMMENT = 'points'
"""Trailing row comment flagging which components are valid at a point."""


class TouchstoneError(FormatError):
    """Malformed Touchstone file"""

    def __init__(self, msg: str, lineno: Optional[int] = None):
        super().__init__(f'line {lineno}: {msg}' if lineno else msg)
        self.lineno = lineno


def _parse_flags(text: str, lineno: int, what: str) -> List[bool]:
    flags = text.split()
    if len(flags) == 1:
        flags = list(flags[0])
    if len(flags) != len(COMPONENTS) or \
            any(flag not in ('0', '1') for flag in flags):
        raise TouchstoneError(f'Malformed {what} comment', lineno)
    return [flag == '1' for flag in flags]


@dataclass
class ParserState:
    """Variables collected while checking a Touchstone file."""

    option_line_parsed: bool = False
    frequency_unit: str = 'ghz'
    parameter: str = 's'
    format: str = 'ma'
    resistance: float = 50.0
    valid_mask: Optional[List[bool]] = None
    f: List[float] = field(default_factory=list)
    point_flags: List[List[bool]] = field(default_factory=list)

    def parse_option_line(self, line: str, lineno: int) -> None:
        if self.option_line_parsed:
            getLogger('pyrfdiff.touchstone').debug(
                'Ignoring extra option line %d', lineno)
            return
        toks = line.lower()[1:].split()
        # fill the option line with the missing defaults
        toks.extend(['ghz', 's', 'ma', 'r', '50'][len(toks):])
        if len(toks) != 5 or toks[3] != 'r':
            raise TouchstoneError(f'Malformed option line "{line}"', lineno)
        self.frequency_unit, self.parameter, self.format = toks[:3]
        if self.frequency_unit not in FREQ_UNITS:
            raise TouchstoneError(f'Illegal frequency unit '
                                  f'{self.frequency_unit}', lineno)
        if self.parameter != 's':
            raise TouchstoneError(f'Unsupported parameter {self.parameter}',
                                  lineno)
        if self.format not in FORMATS:
            raise TouchstoneError(f'Illegal format {self.format}', lineno)
        try:
            self.resistance = float(toks[4])
        except ValueError as exc:
            raise TouchstoneError(f'Illegal resistance {toks[4]}',
                                  lineno) from exc
        if self.resistance != 50.0:
            raise TouchstoneError(f'Unsupported reference impedance '
                                  f'{self.resistance}', lineno)
        self.option_line_parsed = True

    def parse_comment(self, comment: str, lineno: int) -> None:
        mo = match(r'^\s*%s\s+S11\s+S21\s+S12\s+S22\s*=\s*(.*)$' %
                   MASK_COMMENT, comment)
        if mo:
            self.valid_mask = _parse_flags(mo.group(1), lineno,
                                           MASK_COMMENT)

    def parse_data_line(self, line: str, comment: str, lineno: int) -> None:
        toks = line.split()
        if len(toks) != VALUES_PER_ROW:
            raise TouchstoneError(f'Expected {VALUES_PER_ROW} values for a '
                                  f'2-port, got {len(toks)}', lineno)
        try:
            values = [float(tok) for tok in toks]
        except ValueError as exc:
            raise TouchstoneError(f'Invalid number: {exc}', lineno) from exc
        freq = values[0] * FREQ_UNITS[self.frequency_unit]
        if self.f and freq <= self.f[-1]:
            raise TouchstoneError('Frequencies are not strictly increasing',
                                  lineno)
        self.f.append(freq)
        mo = match(r'^\s*%s\s+(.*)$' % POINTS_COMMENT, comment)
        self.point_flags.append(
            _parse_flags(mo.group(1), lineno, POINTS_COMMENT) if mo
            else [True] * len(COMPONENTS))


def parse_touchstone(stream: TextIO) -> ParserState:
    """Check a Touchstone v1 2-port stream, line by line."""
    state = ParserState()
    for lineno, line in enumerate(stream, start=1):
        line, _, comment = line.partition('!')
        line = line.strip()
        if not line:
            if comment:
                state.parse_comment(comment, lineno)
            continue
        if line.startswith('#'):
            state.parse_option_line(line, lineno)
            continue
        if line.startswith('['):
            raise TouchstoneError('Touchstone v2 keywords are not supported',
                                  lineno)
        if not state.option_line_parsed:
            getLogger('pyrfdiff.touchstone').warning(
                'No option line before data, assuming "# GHz S MA R 50"')
            state.option_line_parsed = True
        state.parse_data_line(line, comment, lineno)
    if not state.f:
        raise TouchstoneError('No network data')
    return state


def load_network(path: str) -> rf.Network:
    """Load a 2-port Touchstone file as a scikit-rf network."""
    if splitext(path)[1].lower() != '.s2p':
        raise TouchstoneError(f'Not a .s2p file: {path}')
    try:
        network = rf.Network(path)
    except Exception as exc:
        raise TouchstoneError(f'Cannot load {path}: {exc}') from exc
    if network.nports != 2:
        raise TouchstoneError(f'Expected a 2-port, got {network.nports}')
    return network


def resample(network: rf.Network, src_valid: np.ndarray,
             freqs: FrequencyGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Linearly resample a network on a frequency grid.

       A grid point is valid for a component when it lies in the network
       frequency range and both bracketing source points are valid.

       :param network: the source network
       :param src_valid: (4, Fsrc) validity of the source points
       :param freqs: the destination grid
       :return: the (4, F) data and the (4, F) point mask
    """
    f_src = network.f
    f_dst = freqs.f_hz
    if f_src.size == f_dst.size and \
            np.allclose(f_src, f_dst, rtol=1e-9, atol=0.0):
        return SParamSet.from_matrix(network.s).data, src_valid.copy()
    inside = (f_dst >= f_src[0] * (1 - 1e-12)) & \
        (f_dst <= f_src[-1] * (1 + 1e-12))
    data = np.zeros((len(COMPONENTS), f_dst.size), dtype=complex)
    mask = np.zeros((len(COMPONENTS), f_dst.size), dtype=bool)
    if not inside.any():
        return data, mask
    targets = np.clip(f_dst[inside], f_src[0], f_src[-1])
    if f_src.size == 1:
        smat = np.repeat(network.s, targets.size, axis=0)
    else:
        smat = network.interpolate(rf.Frequency.from_f(targets, unit='hz'),
                                   kind='linear').s
    data[:, inside] = SParamSet.from_matrix(smat).data
    upper = np.clip(np.searchsorted(f_src, targets, side='left'), 0,
                    f_src.size - 1)
    lower = np.clip(np.searchsorted(f_src, targets, side='right') - 1, 0,
                    f_src.size - 1)
    mask[:, inside] = src_valid[:, lower] & src_valid[:, upper]
    return data, mask


def touchstone_read(path: str, freqs: Optional[FrequencyGrid] = None) \
        -> Tuple[np.ndarray, SParamSet]:
    """Read a 2-port Touchstone file onto the frequency grid.

       Points of the grid outside the file frequency range, or next to a
       point flagged invalid, are masked invalid.

       :param path: file to read
       :param freqs: target grid, the default 51-point grid if omitted
       :return: the file frequencies in GHz and the resampled S-parameters
       :raise TouchstoneError: on malformed content
    """
    freqs = freqs or FrequencyGrid()
    try:
        with open(path, 'rt') as tfp:
            state = parse_touchstone(tfp)
    except UnicodeDecodeError as exc:
        raise TouchstoneError(f'Not a text file: {exc}') from exc
    network = load_network(path)
    if network.f.size != len(state.f):
        raise TouchstoneError(f'Expected {len(state.f)} points, loaded '
                              f'{network.f.size}')
    valid = state.valid_mask or [True] * len(COMPONENTS)
    if not any(valid):
        raise TouchstoneError('Every component is masked')
    src_valid = np.array(state.point_flags, dtype=bool).T
    data, point_mask = resample(network, src_valid, freqs)
    if not point_mask.any():
        raise TouchstoneError('File does not overlap the frequency grid')
    getLogger('pyrfdiff.touchstone').info(
        'Read %d points from %s, %d grid points in range', network.f.size,
        path, int(point_mask.any(axis=0).sum()))
    return network.f * 1e-9, SParamSet(data, valid, point_mask)


def _format_pair(value: complex, fmt: str) -> Tuple[float, float]:
    if fmt == 'ri':
        return value.real, value.imag
    angle = float(np.rad2deg(np.angle(value)))
    if fmt == 'ma':
        return abs(value), angle
    return 20.0 * np.log10(max(abs(value), 1e-300)), angle


def touchstone_write(sparams: SParamSet, path: str, fmt: str = 'RI',
                     freqs: Optional[FrequencyGrid] = None) -> None:
    """Write S-parameters as a Touchstone v1 2-port file.

       Every grid point is written. Invalid components are written as
       zeros and flagged in a mask comment; rows with invalid points carry
       a trailing points comment, one flag per component.

       :param sparams: the data, on `freqs`
       :param path: destination file
       :param fmt: RI, MA or DB
       :param freqs: the grid `sparams` lives on
    """
    fmt = fmt.lower()
    if fmt not in FORMATS:
        raise TouchstoneError(f'Unknown format {fmt}')
    freqs = freqs or FrequencyGrid()
    if len(freqs) != sparams.frequency_count:
        raise TouchstoneError('Frequency grid does not match the data')
    data = np.where(sparams.effective_mask, sparams.data, 0.0)
    lines = ['! 2-port S-parameters written by pyrfdiff',
             '! %s S11 S21 S12 S22 = %s' %
             (MASK_COMMENT, ' '.join('1' if v else '0'
                                     for v in sparams.valid_mask)),
             '# GHz S %s R 50' % fmt.upper()]
    for pos, f_ghz in enumerate(freqs.f_ghz):
        values = ['%.10g' % f_ghz]
        for comp in range(len(COMPONENTS)):
            values.extend('%.12e' % v
                          for v in _format_pair(data[comp, pos], fmt))
        flags = sparams.point_mask[:, pos]
        if not flags.all():
            values.append('! %s %s' % (POINTS_COMMENT,
                                       ''.join('1' if v else '0'
                                               for v in flags)))
        lines.append(' '.join(values))
    with open(path, 'wt', newline='\n') as tfp:
        tfp.write('\n'.join(lines))
        tfp.write('\n')
