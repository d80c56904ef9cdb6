# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Analytic microstrip circuit solver.

   Netlists of lossless microstrip lines and shunt stubs are cascaded as
   ABCD (chain) matrices, then converted to S-parameters at a real
   reference impedance. Line impedance and effective permittivity follow
   the Hammerstad-Jensen static closed form; there is no dispersion model
   and the loss tangent is ignored.

   ABCD matrices are numpy arrays of shape (..., 2, 2), one matrix per
   frequency along the leading axes.
"""

#pylint: disable-msg=invalid-name

from dataclasses import dataclass
from enum import Enum
from logging import getLogger
from math import log, pi, sqrt, exp
from typing import Iterable, Sequence, Tuple, Union
import numpy as np
from skrf.network import a2s
from .core import (FrequencyGrid, GeometryError, NumericError, SParamSet,
                   SubstrateSpec)


SPEED_OF_LIGHT = 299792458.0
ETA0 = 376.730313668
"""Free space wave impedance, in ohms."""

Z_REF = 50.0

COT_EPSILON = 1e-12
"""Shorted stubs closer than this to a cot pole are lengthened."""

STUB_PERTURBATION_MM = 1e-9

_logger = getLogger('pyrfdiff.emsolve')


class ElementKind(Enum):
    """Netlist element kinds."""

    SERIES_LINE = 'series'
    SHUNT_OPEN_STUB = 'open'
    SHUNT_SHORT_STUB = 'short'


@dataclass(frozen=True)
class NetlistElement:
    """Microstrip element of a cascade; dimensions in mm."""

    kind: ElementKind
    width_mm: float
    length_mm: float

    def __post_init__(self):
        if not (self.width_mm > 0 and self.length_mm > 0):
            raise GeometryError(f'Invalid {self.kind.name} element '
                                f'W={self.width_mm} L={self.length_mm}')


def microstrip_params(width_mm: float, substrate: SubstrateSpec) \
        -> Tuple[float, float]:
    """Static characteristic impedance and effective permittivity.

       :param width_mm: strip width
       :param substrate: the dielectric
       :return: (Z0 in ohms, eps_eff)
    """
    if not width_mm > 0:
        raise GeometryError(f'Invalid strip width {width_mm}')
    eps_r = substrate.eps_r
    u = width_mm / substrate.h_mm
    a = 1.0 + log((u**4 + (u/52.0)**2) / (u**4 + 0.432)) / 49.0 + \
        log(1.0 + (u/18.1)**3) / 18.7
    b = 0.564 * ((eps_r - 0.9) / (eps_r + 3.0)) ** 0.053
    eps_eff = (eps_r + 1.0) / 2.0 + \
        (eps_r - 1.0) / 2.0 * (1.0 + 10.0/u) ** (-a * b)
    fu = 6.0 + (2.0*pi - 6.0) * exp(-(30.666/u) ** 0.7528)
    z01 = ETA0 / (2.0*pi) * log(fu/u + sqrt(1.0 + (2.0/u)**2))
    return z01 / sqrt(eps_eff), eps_eff


def synthesize_width(z0: float, substrate: SubstrateSpec) -> float:
    """Strip width giving a characteristic impedance, by bisection.

       :raise NumericError: if `z0` is out of the realizable range
    """
    lo, hi = 1e-4 * substrate.h_mm, 1e2 * substrate.h_mm
    if not microstrip_params(hi, substrate)[0] <= z0 <= \
            microstrip_params(lo, substrate)[0]:
        raise NumericError(f'Impedance {z0} ohms is not realizable')
    for _ in range(200):
        mid = sqrt(lo * hi)
        if microstrip_params(mid, substrate)[0] > z0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * hi:
            break
    return sqrt(lo * hi)


def guided_wavelength_mm(f_ghz: float, eps_eff: float) -> float:
    """In-substrate wavelength c / (f sqrt(eps_eff)), in mm."""
    return SPEED_OF_LIGHT / (f_ghz * 1e9 * sqrt(eps_eff)) * 1e3


def propagation_constant(f_ghz: Union[float, np.ndarray],
                         eps_eff: float) -> np.ndarray:
    """Phase constant beta in rad/mm."""
    return 2.0 * pi * np.asarray(f_ghz, dtype=float) * 1e9 * \
        sqrt(eps_eff) / SPEED_OF_LIGHT * 1e-3


def identity_abcd(shape: Tuple[int, ...] = ()) -> np.ndarray:
    abcd = np.zeros(shape + (2, 2), dtype=complex)
    abcd[..., 0, 0] = 1.0
    abcd[..., 1, 1] = 1.0
    return abcd


def element_abcd(elem: NetlistElement, f_ghz: Union[float, np.ndarray],
                 substrate: SubstrateSpec) -> np.ndarray:
    """ABCD matrix of one element.

       :param elem: the element
       :param f_ghz: a frequency or a vector of frequencies
       :param substrate: the dielectric
       :return: a (2, 2) matrix, or (F, 2, 2) for a frequency vector
    """
    z0, eps_eff = microstrip_params(elem.width_mm, substrate)
    beta = propagation_constant(f_ghz, eps_eff)
    theta = beta * elem.length_mm
    abcd = identity_abcd(theta.shape)
    if elem.kind is ElementKind.SERIES_LINE:
        abcd[..., 0, 0] = np.cos(theta)
        abcd[..., 0, 1] = 1j * z0 * np.sin(theta)
        abcd[..., 1, 0] = 1j * np.sin(theta) / z0
        abcd[..., 1, 1] = np.cos(theta)
        return abcd
    if elem.kind is ElementKind.SHUNT_OPEN_STUB:
        admittance = 1j * np.tan(theta) / z0
    else:
        pole = np.abs(np.sin(theta)) < COT_EPSILON
        if np.any(pole):
            _logger.debug('Shorted stub on a cot pole, length perturbed')
            theta = np.where(pole,
                             beta * (elem.length_mm + STUB_PERTURBATION_MM),
                             theta)
        admittance = -1j / (np.tan(theta) * z0)
    abcd[..., 1, 0] = admittance
    return abcd


def cascade(matrices: Iterable[np.ndarray]) -> np.ndarray:
    """Chain ABCD matrices in netlist order.

       An empty cascade is the identity.
    """
    result = None
    for matrix in matrices:
        result = matrix.copy() if result is None else \
            np.matmul(result, matrix)
    return identity_abcd() if result is None else result


def abcd_to_s(abcd: np.ndarray, z_ref: float = Z_REF) -> np.ndarray:
    """Convert ABCD matrices to S matrices at a real reference impedance.

       :raise NumericError: if the conversion is singular
    """
    abcd = np.asarray(abcd, dtype=complex)
    a, b = abcd[..., 0, 0], abcd[..., 0, 1]
    c, d = abcd[..., 1, 0], abcd[..., 1, 1]
    den = a + b / z_ref + c * z_ref + d
    if np.any(den == 0) or not np.all(np.isfinite(den)):
        raise NumericError('Singular ABCD to S conversion')
    smat = a2s(abcd.reshape(-1, 2, 2), z_ref)
    return np.asarray(smat, dtype=complex).reshape(abcd.shape)


def solve_netlist(netlist: Sequence[NetlistElement],
                  f_ghz: np.ndarray, substrate: SubstrateSpec) -> np.ndarray:
    """Return the (F, 2, 2) S matrices of a netlist, S12 forced to S21."""
    if not netlist:
        raise GeometryError('Empty netlist')
    f_ghz = np.atleast_1d(np.asarray(f_ghz, dtype=float))
    abcd = cascade(element_abcd(elem, f_ghz, substrate) for elem in netlist)
    smat = abcd_to_s(abcd)
    smat[:, 0, 1] = smat[:, 1, 0]
    return smat


def solve(instance, freqs: Union[FrequencyGrid, np.ndarray],
          substrate: SubstrateSpec) -> SParamSet:
    """Compute the S-parameters of a template instance.

       :param instance: any object with a ``netlist`` sequence
       :param freqs: frequency grid or vector of frequencies in GHz
       :param substrate: the dielectric
    """
    f_ghz = freqs.f_ghz if isinstance(freqs, FrequencyGrid) else freqs
    return SParamSet.from_matrix(solve_netlist(instance.netlist, f_ghz,
                                               substrate))
