# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""YaML configuration: substrate presets, sampler and training defaults."""

from logging import getLogger
from os.path import dirname, join as joinpath
from typing import BinaryIO, Optional
from ruamel.yaml import YAML
from .core import SubstrateSpec, UsageError
from .misc import EasyDict, to_floats


DEFAULTS_PATH = joinpath(dirname(__file__), 'resources', 'defaults.yaml')

_DEFAULTS: Optional[EasyDict] = None


def _load_stream(stream: BinaryIO) -> EasyDict:
    try:
        ydef = YAML(typ='safe').load(stream)
    except Exception as exc:
        raise UsageError(f'Invalid configuration: {exc}') from exc
    if ydef is None:
        return EasyDict()
    if not isinstance(ydef, dict):
        raise UsageError('Invalid configuration: top level is not a mapping')
    return EasyDict.copy(ydef)


def load_config(stream: Optional[BinaryIO] = None) -> EasyDict:
    """Load the shipped defaults, optionally merged with a user file.

       :param stream: optional YaML stream whose keys override the defaults
       :return: the configuration tree
    """
    global _DEFAULTS  #pylint: disable-msg=global-statement
    if _DEFAULTS is None:
        with open(DEFAULTS_PATH, 'rb') as yfp:
            _DEFAULTS = _load_stream(yfp)
    config = EasyDict.copy(_DEFAULTS)
    if stream is not None:
        with stream:
            user = _load_stream(stream)
        getLogger('pyrfdiff.config').debug('Merging user keys: %s',
                                           ', '.join(sorted(user)))
        config = config.merge(user)
    return config


def substrate_preset(name: str,
                     config: Optional[EasyDict] = None) -> SubstrateSpec:
    """Return a named substrate preset.

       :param name: preset name, e.g. ``ro4003c``
       :param config: configuration tree, defaults if omitted
       :raise UsageError: if the preset is unknown
    """
    config = config or load_config()
    try:
        eps_r, tan_delta, h_mm = config.substrates[name.lower()]
    except KeyError as exc:
        raise UsageError(f"Unknown substrate '{name}'") from exc
    return SubstrateSpec(float(eps_r), float(tan_delta), float(h_mm))


def parse_substrate(token: str,
                    config: Optional[EasyDict] = None) -> SubstrateSpec:
    """Parse a substrate token, either a preset name or
       ``custom:eps_r,tan_delta,h_mm``.
    """
    if token.lower().startswith('custom:'):
        try:
            eps_r, tan_delta, h_mm = to_floats(token[len('custom:'):], 3)
        except ValueError as exc:
            raise UsageError(f'Invalid substrate: {exc}') from exc
        return SubstrateSpec(eps_r, tan_delta, h_mm)
    return substrate_preset(token, config)
