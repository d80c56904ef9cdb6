# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Parametric component families.

   Every family is drawn in a canonical frame where port 0 sits at
   (0, yc) and port 1 at (side, yc); the signal runs along +x. Feeds placed
   on the left/right or bottom/top board edges are brought to this frame by
   a mirror and/or a transpose. Shunt stubs grow towards +y when the line
   lies in the lower half of the board, towards -y otherwise, and start
   from the line centre.

   Parameter vectors, all lengths in mm:

   * MLINE: W, L
   * STEPPED_LPF: Wh, Wl, l1 .. l5 (hi/lo/hi/lo/hi sections)
   * OPEN_STUB_BSF, VIA_SHUNT_STUB: W, Ws, Ls, pos (stub centre / side)
   * L_MATCH: W, L1, Ws, Ls
"""

#pylint: disable-msg=too-many-arguments
#pylint: disable-msg=too-many-locals
#pylint: disable-msg=invalid-name

from dataclasses import dataclass, field
from logging import getLogger
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
from .core import (BoardGrid, BoardLayout, FeedSet, GeometryError,
                   NoFitError, TemplateId, UsageError)
from .emsolve import ElementKind, NetlistElement
from .raster import (PAD_PIXELS, RectMM, ViaMM, feed_pad_rect,
                     rasterize_rects, rasterize_vias)


FEED_WIDTH_MM = 0.375
CLEARANCE_MM = 0.25
VIA_RADIUS_MM = 0.125
JUNCTION_OFFSET_MM = 1.0
MIN_FEED_LENGTH_MM = 0.5
MAX_ATTEMPTS = 32

# profile extraction tolerances
PAD_MARGIN_MM = 0.06
SLIVER_MM = 0.11
EDGE_TOL = 1e-9

_Box = Tuple[float, float, float, float]


class TemplateError(GeometryError):
    """A template instance cannot be built on the given board and feeds"""


@dataclass(frozen=True)
class TemplateFamily:
    """Parameter schema of a family."""

    id: TemplateId
    names: Tuple[str, ...]
    bounds: Tuple[Tuple[float, float], ...]
    sections: int

    @property
    def token(self) -> str:
        return self.id.token

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        lows, highs = np.array(self.bounds).T
        return rng.uniform(lows, highs)

    def contains(self, params: Sequence[float]) -> bool:
        lows, highs = np.array(self.bounds).T
        params = np.asarray(params)
        return bool(np.all((params >= lows) & (params <= highs)))


_STUB_BOUNDS = ((0.3, 0.6), (0.2, 0.6), (1.0, 3.5), (0.25, 0.75))

FAMILIES: Dict[TemplateId, TemplateFamily] = {
    TemplateId.MLINE: TemplateFamily(
        TemplateId.MLINE, ('W', 'L'), ((0.2, 1.2), (2.0, 7.0)), 3),
    TemplateId.STEPPED_LPF: TemplateFamily(
        TemplateId.STEPPED_LPF,
        ('Wh', 'Wl', 'l1', 'l2', 'l3', 'l4', 'l5'),
        ((0.2, 0.35), (1.0, 2.0)) + ((0.6, 1.6),) * 5, 7),
    TemplateId.OPEN_STUB_BSF: TemplateFamily(
        TemplateId.OPEN_STUB_BSF, ('W', 'Ws', 'Ls', 'pos'), _STUB_BOUNDS, 3),
    TemplateId.VIA_SHUNT_STUB: TemplateFamily(
        TemplateId.VIA_SHUNT_STUB, ('W', 'Ws', 'Ls', 'pos'), _STUB_BOUNDS,
        3),
    TemplateId.L_MATCH: TemplateFamily(
        TemplateId.L_MATCH, ('W', 'L1', 'Ws', 'Ls'),
        ((0.2, 1.2), (1.5, 6.0), (0.2, 0.6), (1.0, 3.5)), 4),
}


def family_from_token(token: str) -> TemplateId:
    """Map a command line token (``mline``, ..., ``none``) to a family.

       :raise UsageError: if the token is unknown
    """
    for tid in TemplateId:
        if tid.token == token.strip().lower():
            return tid
    raise UsageError(f"Unknown template family '{token}'")


def _family(family) -> TemplateFamily:
    family = TemplateId(family)
    if family is TemplateId.NULL:
        raise TemplateError('NULL template has no geometry')
    return FAMILIES[family]


@dataclass(frozen=True)
class CanonicalFrame:
    """Mapping between board coordinates and the canonical frame."""

    side: float
    yc: float
    transpose: bool = False
    mirror: bool = False

    @property
    def direction(self) -> int:
        """Stub growth direction along canonical y."""
        return 1 if self.yc <= self.side / 2 else -1

    def to_board(self, x: float, y: float) -> Tuple[float, float]:
        if self.mirror:
            x = self.side - x
        return (y, x) if self.transpose else (x, y)

    def from_board(self, x: float, y: float) -> Tuple[float, float]:
        if self.transpose:
            x, y = y, x
        return (self.side - x, y) if self.mirror else (x, y)

    def box_to_board(self, box: _Box) -> RectMM:
        xa, ya = self.to_board(box[0], box[1])
        xb, yb = self.to_board(box[2], box[3])
        return RectMM(min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb))

    def box_from_board(self, rect: RectMM) -> _Box:
        xa, ya = self.from_board(rect.x0, rect.y0)
        xb, yb = self.from_board(rect.x1, rect.y1)
        return min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb)


def canonical_frame(feeds: FeedSet, grid: BoardGrid) -> CanonicalFrame:
    """Find the frame bringing the two feeds to (0, yc) and (side, yc).

       :raise TemplateError: if the feeds do not face each other on opposite
                             board edges
    """
    if feeds.count != 2 or not all(feeds.active_mask):
        raise TemplateError('Two-port family needs two active ports')
    feeds.validate(grid)
    side = grid.side_mm
    (x0, y0), (x1, y1) = feeds.ports

    def _at(value, edge):
        return abs(value - edge) <= EDGE_TOL

    if abs(y0 - y1) <= EDGE_TOL:
        if _at(x0, 0.0) and _at(x1, side):
            return CanonicalFrame(side, y0)
        if _at(x0, side) and _at(x1, 0.0):
            return CanonicalFrame(side, y0, mirror=True)
    if abs(x0 - x1) <= EDGE_TOL:
        if _at(y0, 0.0) and _at(y1, side):
            return CanonicalFrame(side, x0, transpose=True)
        if _at(y0, side) and _at(y1, 0.0):
            return CanonicalFrame(side, x0, transpose=True, mirror=True)
    raise TemplateError('Feeds must face each other on opposite board edges')


@dataclass
class _Geometry:
    """Family geometry in the canonical frame.

       ``through`` boxes may touch the port edges, ``body`` boxes must keep
       the edge clearance on all sides.
    """

    through: List[_Box] = field(default_factory=list)
    body: List[_Box] = field(default_factory=list)
    vias: List[Tuple[float, float, float]] = field(default_factory=list)
    netlist: List[NetlistElement] = field(default_factory=list)
    feasible: bool = True

    @property
    def boxes(self) -> List[_Box]:
        return self.through + self.body


def _line(xa: float, xb: float, yc: float, width: float) -> _Box:
    return xa, yc - width / 2, xb, yc + width / 2


def _stub(xa: float, xb: float, yc: float, tip: float) -> _Box:
    return xa, min(yc, tip), xb, max(yc, tip)


def _series(width: float, length: float) -> NetlistElement:
    return NetlistElement(ElementKind.SERIES_LINE, width, length)


def _mline(params, side, yc, _) -> _Geometry:
    width, length = params
    xa, xb = (side - length) / 2, (side + length) / 2
    geo = _Geometry()
    geo.through = [_line(0.0, xa, yc, FEED_WIDTH_MM),
                   _line(xb, side, yc, FEED_WIDTH_MM)]
    geo.body = [_line(xa, xb, yc, width)]
    geo.netlist = [_series(FEED_WIDTH_MM, xa), _series(width, length),
                   _series(FEED_WIDTH_MM, side - xb)]
    return geo


def _stepped_lpf(params, side, yc, _) -> _Geometry:
    w_hi, w_lo = params[:2]
    lengths = params[2:]
    total = float(np.sum(lengths))
    x0 = (side - total) / 2
    geo = _Geometry(feasible=x0 >= MIN_FEED_LENGTH_MM)
    geo.through = [_line(0.0, x0, yc, FEED_WIDTH_MM)]
    geo.netlist = [_series(FEED_WIDTH_MM, x0)]
    xpos = x0
    for pos, length in enumerate(lengths):
        width = w_hi if pos % 2 == 0 else w_lo
        geo.body.append(_line(xpos, xpos + length, yc, width))
        geo.netlist.append(_series(width, length))
        xpos += length
    geo.through.append(_line(xpos, side, yc, FEED_WIDTH_MM))
    geo.netlist.append(_series(FEED_WIDTH_MM, side - xpos))
    return geo


def _shunt_stub(params, side, yc, direction, shorted) -> _Geometry:
    width, stub_width, stub_length, pos = params
    xs = pos * side
    tip = yc + direction * (width / 2 + stub_length)
    kind = ElementKind.SHUNT_SHORT_STUB if shorted else \
        ElementKind.SHUNT_OPEN_STUB
    geo = _Geometry()
    geo.through = [_line(0.0, side, yc, width)]
    geo.body = [_stub(xs - stub_width / 2, xs + stub_width / 2, yc, tip)]
    if shorted:
        geo.vias = [(xs, tip - direction * VIA_RADIUS_MM, VIA_RADIUS_MM)]
    geo.netlist = [_series(width, xs),
                   NetlistElement(kind, stub_width, stub_length),
                   _series(width, side - xs)]
    return geo


def _open_stub_bsf(params, side, yc, direction) -> _Geometry:
    return _shunt_stub(params, side, yc, direction, False)


def _via_shunt_stub(params, side, yc, direction) -> _Geometry:
    return _shunt_stub(params, side, yc, direction, True)


def _l_match(params, side, yc, direction) -> _Geometry:
    width, length, stub_width, stub_length = params
    xj = side - JUNCTION_OFFSET_MM
    xl = xj - length
    tip = yc + direction * (width / 2 + stub_length)
    geo = _Geometry(feasible=xl >= MIN_FEED_LENGTH_MM and
                    length > stub_width)
    geo.through = [_line(0.0, xl, yc, FEED_WIDTH_MM),
                   _line(xj, side, yc, FEED_WIDTH_MM)]
    geo.body = [_line(xl, xj, yc, width),
                _stub(xj - stub_width, xj, yc, tip)]
    geo.netlist = [_series(FEED_WIDTH_MM, xl),
                   _series(width, length - stub_width / 2),
                   NetlistElement(ElementKind.SHUNT_OPEN_STUB, stub_width,
                                  stub_length),
                   _series(width, stub_width / 2),
                   _series(FEED_WIDTH_MM, side - xj)]
    return geo


_BUILDERS: Dict[TemplateId, Callable[..., _Geometry]] = {
    TemplateId.MLINE: _mline,
    TemplateId.STEPPED_LPF: _stepped_lpf,
    TemplateId.OPEN_STUB_BSF: _open_stub_bsf,
    TemplateId.VIA_SHUNT_STUB: _via_shunt_stub,
    TemplateId.L_MATCH: _l_match,
}


def _fits(geo: _Geometry, side: float) -> bool:
    lo, hi = CLEARANCE_MM, side - CLEARANCE_MM
    if not geo.feasible:
        return False
    for _, y0, _, y1 in geo.through:
        if y0 < lo or y1 > hi:
            return False
    for x0, y0, x1, y1 in geo.body:
        if x0 < lo or y0 < lo or x1 > hi or y1 > hi:
            return False
    for cx, cy, radius in geo.vias:
        if cx - radius < lo or cy - radius < lo or cx + radius > hi or \
                cy + radius > hi:
            return False
    return True


@dataclass
class TemplateInstance:
    """A family member: parameters plus its geometry and circuit."""

    family: TemplateId
    params: np.ndarray
    rects: List[RectMM]
    vias: List[ViaMM]
    netlist: List[NetlistElement]
    feeds: FeedSet
    grid: BoardGrid

    def __eq__(self, other):
        if not isinstance(other, TemplateInstance):
            return NotImplemented
        return (self.family == other.family and
                np.array_equal(self.params, other.params) and
                self.rects == other.rects and self.vias == other.vias and
                self.netlist == other.netlist and
                self.feeds == other.feeds and self.grid == other.grid)


def _instance(family: TemplateId, params: np.ndarray, geo: _Geometry,
              frame: CanonicalFrame, feeds: FeedSet,
              grid: BoardGrid) -> TemplateInstance:
    rects = [frame.box_to_board(box) for box in geo.boxes]
    vias = []
    for cx, cy, radius in geo.vias:
        bx, by = frame.to_board(cx, cy)
        vias.append(ViaMM(bx, by, radius))
    for x_mm, y_mm in feeds.active_ports():
        pad = feed_pad_rect(grid, x_mm, y_mm)
        if not any(rect.contains(pad) for rect in rects):
            rects.append(pad)
    return TemplateInstance(family, np.array(params, dtype=float), rects,
                            vias, list(geo.netlist), feeds, grid)


def instance_from_params(family, params: Sequence[float], feeds: FeedSet,
                         grid: Optional[BoardGrid] = None) \
        -> TemplateInstance:
    """Rebuild an instance from a parameter vector, without checking the
       schema bounds nor the edge clearance.
    """
    fam = _family(family)
    grid = grid or BoardGrid()
    params = np.array(params, dtype=float)
    if params.shape != (len(fam.names),):
        raise TemplateError(f'{fam.token} expects {len(fam.names)} '
                            f'parameters')
    frame = canonical_frame(feeds, grid)
    geo = _BUILDERS[fam.id](params, frame.side, frame.yc, frame.direction)
    return _instance(fam.id, params, geo, frame, feeds, grid)


def sample_template(family, feeds: FeedSet, seed: int,
                    grid: Optional[BoardGrid] = None) -> TemplateInstance:
    """Draw a random family member attached to the feeds.

       :param family: the template family
       :param feeds: two active ports on opposite board edges
       :param seed: PRNG seed, the result is a pure function of the inputs
       :param grid: the board grid
       :raise TemplateError: if no fitting geometry is found
    """
    fam = _family(family)
    grid = grid or BoardGrid()
    frame = canonical_frame(feeds, grid)
    rng = np.random.default_rng(seed)
    log = getLogger('pyrfdiff.templates')
    for attempt in range(MAX_ATTEMPTS):
        params = fam.sample(rng)
        geo = _BUILDERS[fam.id](params, frame.side, frame.yc,
                                 frame.direction)
        if _fits(geo, frame.side):
            return _instance(fam.id, params, geo, frame, feeds, grid)
        log.debug('%s attempt %d does not fit, resampling', fam.token,
                  attempt)
    raise TemplateError(f'Cannot fit {fam.token} on the board after '
                        f'{MAX_ATTEMPTS} attempts')


def emit_layout(instance: TemplateInstance,
                grid: Optional[BoardGrid] = None) -> BoardLayout:
    """Rasterize an instance."""
    grid = grid or instance.grid
    return BoardLayout(grid, rasterize_rects(instance.rects, grid),
                       rasterize_vias(instance.vias, grid))


@dataclass
class _Section:
    """Slice of the signal path between two x positions, with the span of
       metal crossing the line centre."""

    xa: float
    xb: float
    lo: float
    hi: float

    @property
    def length(self) -> float:
        return self.xb - self.xa

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def same_span(self, other: '_Section') -> bool:
        return abs(self.lo - other.lo) <= EDGE_TOL and \
            abs(self.hi - other.hi) <= EDGE_TOL


def _span_at(boxes: List[_Box], xa: float, xb: float,
             yc: float) -> Optional[Tuple[float, float]]:
    spans = sorted((y0, y1) for x0, y0, x1, y1 in boxes
                   if x0 <= xa + EDGE_TOL and x1 >= xb - EDGE_TOL)
    merged = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1] + EDGE_TOL:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    for lo, hi in merged:
        if lo - EDGE_TOL <= yc <= hi + EDGE_TOL:
            return lo, hi
    return None


def _merge_equal(sections: List[_Section]) -> List[_Section]:
    merged = []
    for sect in sections:
        if merged and merged[-1].same_span(sect):
            merged[-1].xb = sect.xb
        else:
            merged.append(sect)
    return merged


def _profile(boxes: List[_Box], side: float, yc: float,
             pad_len: float) -> List[_Section]:
    breaks = sorted({edge for box in boxes for edge in (box[0], box[2])})
    sections: List[Optional[_Section]] = []
    for xa, xb in zip(breaks[:-1], breaks[1:]):
        if xb - xa <= EDGE_TOL:
            continue
        span = _span_at(boxes, xa, xb, yc)
        sections.append(_Section(xa, xb, *span) if span else None)
    # keep the single run of sections crossing the line centre
    while sections and sections[0] is None:
        sections.pop(0)
    while sections and sections[-1] is None:
        sections.pop()
    if not sections or None in sections:
        raise NoFitError('Signal path is not continuous')
    sections = _merge_equal(sections)
    limit = pad_len + PAD_MARGIN_MM
    while len(sections) > 1 and sections[0].xb <= limit:
        sections.pop(0)
    while len(sections) > 1 and sections[-1].xa >= side - limit:
        sections.pop()
    sections[0].xa = 0.0
    sections[-1].xb = side
    while len(sections) > 1:
        narrow = [pos for pos, sect in enumerate(sections)
                  if sect.length < SLIVER_MM]
        if not narrow:
            break
        pos = narrow[0]
        sliver = sections.pop(pos)
        if pos == 0:
            sections[0].xa = sliver.xa
        elif pos == len(sections):
            sections[-1].xb = sliver.xb
        else:
            mid = (sliver.xa + sliver.xb) / 2
            sections[pos - 1].xb = mid
            sections[pos].xa = mid
    return _merge_equal(sections)


def _reduce(sections: List[_Section], count: int) -> List[_Section]:
    if len(sections) < count:
        raise NoFitError(f'Found {len(sections)} sections, expected {count}')
    while len(sections) > count:
        costs = [abs(a.lo - b.lo) + abs(a.hi - b.hi)
                 for a, b in zip(sections[:-1], sections[1:])]
        pos = int(np.argmin(costs))
        left, right = sections[pos], sections.pop(pos + 1)
        total = left.length + right.length
        left.lo = (left.lo * left.length + right.lo * right.length) / total
        left.hi = (left.hi * left.length + right.hi * right.length) / total
        left.xb = right.xb
    return sections


def _stub_length(sect: _Section, yc: float, width: float,
                 direction: int) -> float:
    tip = sect.hi if direction > 0 else sect.lo
    return direction * (tip - yc) - width / 2


def _fit_params(family: TemplateId, sections: List[_Section],
                frame: CanonicalFrame) -> List[float]:
    yc, direction = frame.yc, frame.direction
    if family is TemplateId.MLINE:
        return [sections[1].width, sections[1].length]
    if family is TemplateId.STEPPED_LPF:
        body = sections[1:-1]
        w_hi = np.mean([s.width for s in body[0::2]])
        w_lo = np.mean([s.width for s in body[1::2]])
        return [w_hi, w_lo] + [s.length for s in body]
    if family in (TemplateId.OPEN_STUB_BSF, TemplateId.VIA_SHUNT_STUB):
        width = (sections[0].width * sections[0].length +
                 sections[2].width * sections[2].length) / \
            (sections[0].length + sections[2].length)
        stub = sections[1]
        return [width, stub.length, _stub_length(stub, yc, width, direction),
                (stub.xa + stub.xb) / 2 / frame.side]
    width = sections[1].width
    stub = sections[2]
    return [width, sections[1].length + stub.length, stub.length,
            _stub_length(stub, yc, width, direction)]


def extract_params(family, rects: Sequence[RectMM], vias: Sequence[ViaMM],
                   feeds: FeedSet, grid: Optional[BoardGrid] = None) \
        -> np.ndarray:
    """Fit the parameters of a family to a rectangle decomposition.

       The metal crossing the line centre is profiled along the signal path
       into sections of constant span; feed pads and slivers are absorbed,
       the closest neighbouring sections are merged down to the family
       section count and the parameters are read from the section edges.

       :raise NoFitError: if the geometry does not match the family topology
    """
    fam = _family(family)
    grid = grid or BoardGrid()
    if not rects:
        raise NoFitError('No metal')
    frame = canonical_frame(feeds, grid)
    side = frame.side
    boxes = []
    for rect in rects:
        clipped = rect.clipped(side)
        if clipped:
            boxes.append(frame.box_from_board(clipped))
    sections = _profile(boxes, side, frame.yc, PAD_PIXELS * grid.pitch_mm)
    sections = _reduce(sections, fam.sections)
    params = np.array(_fit_params(fam.id, sections, frame), dtype=float)
    if not np.all(params > 0):
        raise NoFitError(f'Non-positive {fam.token} parameters')
    if fam.id is TemplateId.VIA_SHUNT_STUB and not vias:
        raise NoFitError('Shorted stub without via')
    return params
