# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Candidate metrics and ranking."""

from csv import writer as csv_writer
from dataclasses import dataclass
from math import inf, isfinite, sqrt
from typing import List, Optional, Sequence, TextIO, Tuple, Union
import numpy as np
from .core import BoardLayout, FeedSet, RfDiffError, SParamSet, magnitude_db
from .raster import feed_valid


WMAE_FULL_WEIGHT_DB = -20.0
WMAE_FLOOR_WEIGHT = 0.1


class MetricError(RfDiffError, ValueError):
    """Metric cannot be computed"""


def _overlap(pred: SParamSet, tgt: SParamSet) -> np.ndarray:
    if pred.data.shape != tgt.data.shape:
        raise MetricError('S-parameter sets live on different grids')
    mask = tgt.effective_mask
    if not mask.any():
        raise MetricError('Target has no valid entry')
    if (mask & ~pred.effective_mask).any():
        raise MetricError('Prediction is invalid where the target is valid')
    return mask


def rmse_ri(pred: SParamSet, tgt: SParamSet) -> float:
    """Root mean square error over the real and imaginary parts of the
       entries valid in the target."""
    mask = _overlap(pred, tgt)
    diff = pred.data[mask] - tgt.data[mask]
    return sqrt(float(np.sum(diff.real ** 2 + diff.imag ** 2)) /
                (2 * diff.size))


def wmae_weight(tgt_db: np.ndarray) -> np.ndarray:
    """Ramp from full weight at -20 dB down to 0.1 at -40 dB and below."""
    return np.clip((tgt_db - 2 * WMAE_FULL_WEIGHT_DB) /
                   -WMAE_FULL_WEIGHT_DB, WMAE_FLOOR_WEIGHT, 1.0)


def wmae_db(pred: SParamSet, tgt: SParamSet) -> float:
    """Weighted mean absolute magnitude error in dB."""
    mask = _overlap(pred, tgt)
    tgt_db = magnitude_db(tgt.data[mask])
    pred_db = magnitude_db(pred.data[mask])
    weight = wmae_weight(tgt_db)
    return float(np.sum(weight * np.abs(pred_db - tgt_db)) / np.sum(weight))


def valid_rate(layouts: Sequence[BoardLayout], feeds: FeedSet) -> float:
    """Fraction of layouts with usable metal at every active feed."""
    if not layouts:
        raise MetricError('No layout')
    return sum(feed_valid(layout, feeds) for layout in layouts) / \
        len(layouts)


@dataclass
class CandidateReport:
    """Ranking outcome of one candidate."""

    rank: int
    index: int
    rmse: float
    wmae_db: float
    valid: bool
    fitted: bool
    name: str = ''

    def as_row(self) -> List[str]:
        def _num(value):
            return '%.6f' % value if isfinite(value) else 'nan'
        return [str(self.rank), self.name or str(self.index),
                _num(self.rmse), _num(self.wmae_db),
                'yes' if self.valid else 'no']


Candidate = Tuple[BoardLayout, Union[SParamSet, Exception, None]]


def rank_candidates(cands: Sequence[Candidate], tgt: SParamSet,
                    feeds: FeedSet,
                    names: Optional[Sequence[str]] = None) \
        -> Tuple[List[int], List[CandidateReport]]:
    """Order candidates by agreement with the target.

       Fitted feed-valid candidates come first by ascending RMSE, then
       unfitted ones, then feed-invalid ones; the sort is stable.

       :param cands: (layout, predicted S-parameters) pairs, the prediction
                     being None or an exception for unfitted layouts
       :return: the ordered candidate indices and the reports, in rank order
    """
    entries = []
    for index, (layout, pred) in enumerate(cands):
        fitted = isinstance(pred, SParamSet)
        valid = feed_valid(layout, feeds)
        rmse = rmse_ri(pred, tgt) if fitted else inf
        wmae = wmae_db(pred, tgt) if fitted else inf
        group = 0 if fitted and valid else 1 if valid else 2
        entries.append((group, rmse, index, wmae, valid, fitted))
    order = sorted(range(len(entries)),
                   key=lambda pos: (entries[pos][0], entries[pos][1]))
    reports = []
    for rank, pos in enumerate(order, start=1):
        _, rmse, index, wmae, valid, fitted = entries[pos]
        name = names[index] if names else ''
        reports.append(CandidateReport(rank, index, rmse, wmae, valid,
                                       fitted, name))
    return order, reports


REPORT_HEADER = ['rank', 'file', 'rmse', 'wmae_db', 'valid']


def format_report(reports: Sequence[CandidateReport]) -> str:
    """Render a ranking as an aligned text table."""
    rows = [REPORT_HEADER] + [report.as_row() for report in reports]
    widths = [max(len(row[col]) for row in rows)
              for col in range(len(REPORT_HEADER))]
    return '\n'.join('  '.join(cell.ljust(width)
                               for cell, width in zip(row, widths)).rstrip()
                     for row in rows)


def write_report_csv(reports: Sequence[CandidateReport],
                     stream: TextIO) -> None:
    out = csv_writer(stream, lineterminator='\n')
    out.writerow(REPORT_HEADER)
    for report in reports:
        out.writerow(report.as_row())
