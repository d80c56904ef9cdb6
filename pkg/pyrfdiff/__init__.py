# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

#pylint: disable-msg=missing-docstring

__version__ = '0.3.0'
__title__ = 'PyRfDiff'
__description__ = 'Diffusion-based inverse design of two-layer RF PCB passives'
__uri__ = 'http://github.com/pyrfdiff/pyrfdiff'
__doc__ = __description__ + ' <' + __uri__ + '>'
__author__ = 'pyrfdiff developers'
__email__ = 'pyrfdiff@users.noreply.github.com'
__license__ = 'Modified BSD'
__copyright__ = 'Copyright (c) 2024-2026 pyrfdiff developers'


from logging import WARNING, NullHandler, getLogger


class RfDiffLogger:

    log = getLogger('pyrfdiff')
    log.addHandler(NullHandler())
    log.setLevel(level=WARNING)

    @classmethod
    def set_formatter(cls, formatter):
        handlers = list(cls.log.handlers)
        for handler in handlers:
            handler.setFormatter(formatter)

    @classmethod
    def get_level(cls):
        return cls.log.getEffectiveLevel()

    @classmethod
    def set_level(cls, level):
        cls.log.setLevel(level=level)
