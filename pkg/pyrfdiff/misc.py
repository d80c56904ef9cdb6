# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Miscellaneous helpers"""

#pylint: disable-msg=invalid-name

from copy import deepcopy
from re import match
from typing import Any, List, Union


TRUE_BOOLEANS = ('on', 'true', 'yes', 'enable', '1')
FALSE_BOOLEANS = ('off', 'false', 'no', 'disable', '0')

MASK64 = (1 << 64) - 1


def to_bool(value: Union[bool, str, None], permissive: bool = True) -> bool:
    """Convert a command line or environment token into a boolean.

       :param value: a boolean, or one of the TRUE_BOOLEANS/FALSE_BOOLEANS
                     tokens, in any case
       :param permissive: map unknown tokens to False instead of raising
       :raise ValueError: on an unknown token, if not permissive
    """
    if value is None or isinstance(value, bool):
        return bool(value)
    token = str(value).strip().lower()
    if token in TRUE_BOOLEANS:
        return True
    if token in FALSE_BOOLEANS or permissive:
        return False
    raise ValueError(f'Invalid boolean value: "{value}"')


def to_floats(value: str, count: int, sep: str = ',') -> List[float]:
    """Parse a separated list of exactly `count` real values.

       :param value: the string to parse, e.g. ``3.55,0.0027,0.203``
       :param count: expected number of values
       :param sep: the separator string
       :return: the parsed values
       :raise ValueError: if the string does not hold `count` reals
    """
    parts = [p.strip() for p in value.split(sep)]
    if len(parts) != count:
        raise ValueError('Expected %d values, got %d in "%s"' %
                         (count, len(parts), value))
    floats = []
    for part in parts:
        if not match(r'^[-+]?[0-9]*\.?[0-9]+(?:[Ee][-+]?[0-9]+)?$', part):
            raise ValueError('Invalid real value "%s"' % part)
        floats.append(float(part))
    return floats


def splitmix64(value: int) -> int:
    """One round of the SplitMix64 finalizer.

       :param value: any integer, reduced modulo 2^64
       :return: the mixed 64-bit value
    """
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Derive the independent stream seed of item `index` from a global
       seed. The mapping is a pure function of both arguments.
    """
    return splitmix64((seed & MASK64) ^ splitmix64(index))


class EasyDict(dict):
    """Configuration tree node, whose keys also read as attributes."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError as exc:
            raise AttributeError(f"No '{name}' configuration key") from exc

    def __setattr__(self, name, value):
        self[name] = value

    @classmethod
    def copy(cls, tree: Any) -> 'EasyDict':
        """Deep copy a YaML tree, turning every mapping into a node."""
        return cls._convert(dict(tree))

    @classmethod
    def _convert(cls, node: Any) -> Any:
        if isinstance(node, dict):
            return cls({key: cls._convert(val) for key, val in node.items()})
        if isinstance(node, list):
            return [cls._convert(val) for val in node]
        return deepcopy(node)

    def merge(self, other: Any) -> 'EasyDict':
        """Recursively merge `other` over a copy of this node."""
        result = EasyDict.copy(self)
        for key, value in (other or {}).items():
            if isinstance(value, dict) and isinstance(result.get(key), dict):
                result[key] = result[key].merge(value)
            else:
                result[key] = self._convert(value)
        return result
