# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Dataset generation, binary shards and JSON manifest.

   A dataset directory holds ``manifest.json`` and ``shard-NNNNN.bin``
   files. Shards are plain concatenations of fixed size little-endian
   records (:data:`RECORD_DTYPE`); the manifest lists them with their
   SHA-256 digests, along with the grids and the magnitude statistics.
"""

#pylint: disable-msg=too-many-arguments
#pylint: disable-msg=too-many-locals
#pylint: disable-msg=too-many-instance-attributes

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from hashlib import sha256
from json import dumps as json_dumps, loads as json_loads
from logging import getLogger
from os import makedirs
from os.path import isdir, join as joinpath
from typing import Iterator, List, Optional, Sequence
import numpy as np
from .augment import random_augment
from .config import load_config, substrate_preset
from .core import (COMPONENTS, BoardGrid, BoardLayout, DatasetStats,
                   FeedSet, FormatError, FrequencyGrid, SParamSet,
                   SubstrateSpec, TemplateId, UsageError, compute_stats)
from .emsolve import solve
from .misc import EasyDict, derive_seed
from .templates import TemplateError, emit_layout, sample_template


FORMAT_VERSION = 1
MANIFEST_NAME = 'manifest.json'
MAX_PARAMS = 8
SAMPLE_ATTEMPTS = 4

RECORD_DTYPE = np.dtype([
    ('template_id', '<u2'),
    ('pad0', '<u2'),
    ('params', '<f4', (MAX_PARAMS,)),
    ('ports', '<f4', (4,)),
    ('port_mask', 'u1', (2,)),
    ('pad1', '<u2'),
    ('dielectric', '<f4', (3,)),
    ('metal', '<f4', (64 * 64,)),
    ('via', '<f4', (64 * 64,)),
    ('sparams', '<f4', (len(COMPONENTS) * 51 * 2,)),
    ('s_mask', 'u1', (len(COMPONENTS),)),
])
"""Packed record layout, 34472 bytes."""

RECORD_SIZE = RECORD_DTYPE.itemsize


class ShardError(FormatError):
    """Invalid dataset shard or manifest"""


def shard_name(index: int) -> str:
    return 'shard-%05d.bin' % index


@dataclass
class DatasetRecord:
    """One board with its circuit response."""

    template: TemplateId
    params: np.ndarray
    feeds: FeedSet
    substrate: SubstrateSpec
    layout: BoardLayout
    sparams: SParamSet

    def __eq__(self, other):
        if not isinstance(other, DatasetRecord):
            return NotImplemented
        return (self.template == other.template and
                np.array_equal(self.params, other.params, equal_nan=True) and
                self.feeds == other.feeds and
                self.substrate == other.substrate and
                self.layout == other.layout and self.sparams == other.sparams)


def encode_records(records: Sequence[DatasetRecord]) -> np.ndarray:
    """Pack records into a structured array of :data:`RECORD_DTYPE`."""
    rows = np.zeros(len(records), dtype=RECORD_DTYPE)
    for pos, rec in enumerate(records):
        if rec.layout.grid.n != 64:
            raise ShardError(f'Records hold 64x64 boards, not '
                             f'{rec.layout.grid.n}')
        if rec.sparams.data.shape != (len(COMPONENTS), 51):
            raise ShardError('Records hold 51 frequency points')
        if len(rec.params) > MAX_PARAMS:
            raise ShardError('Too many template parameters')
        params = np.full(MAX_PARAMS, np.nan)
        params[:len(rec.params)] = rec.params
        sub = rec.substrate
        data = rec.sparams.data
        rows['template_id'][pos] = int(rec.template)
        rows['params'][pos] = params
        rows['ports'][pos] = np.array(rec.feeds.ports).reshape(-1)
        rows['port_mask'][pos] = rec.feeds.active_mask
        rows['dielectric'][pos] = (sub.eps_r, sub.tan_delta, sub.h_mm)
        rows['metal'][pos] = rec.layout.metal.reshape(-1)
        rows['via'][pos] = rec.layout.via.reshape(-1)
        rows['sparams'][pos] = np.stack([data.real, data.imag],
                                        axis=-1).reshape(-1)
        rows['s_mask'][pos] = rec.sparams.valid_mask
    return rows


def decode_record(row: np.void, grid: BoardGrid) -> DatasetRecord:
    """Unpack one structured record.

       :raise ShardError: if the record breaks a type invariant
    """
    try:
        template = TemplateId(int(row['template_id']))
        params = row['params'].astype(float)
        params = params[:int(np.sum(~np.isnan(params)))]
        ports = row['ports'].astype(float).reshape(2, 2)
        feeds = FeedSet([tuple(p) for p in ports],
                        [bool(m) for m in row['port_mask']])
        substrate = SubstrateSpec(*(float(v) for v in row['dielectric']))
        n = grid.n
        layout = BoardLayout(grid, row['metal'].astype(float).reshape(n, n),
                             row['via'].astype(float).reshape(n, n))
        pairs = row['sparams'].astype(float).reshape(len(COMPONENTS), -1, 2)
        sparams = SParamSet(pairs[..., 0] + 1j * pairs[..., 1],
                            row['s_mask'].astype(bool))
    except ValueError as exc:
        raise ShardError(f'Invalid record: {exc}') from exc
    return DatasetRecord(template, params, feeds, substrate, layout,
                         sparams)


@dataclass
class Manifest:
    """Dataset description, stored as JSON."""

    grid: BoardGrid
    freqs: FrequencyGrid
    record_count: int
    shards: List[dict]
    stats: DatasetStats
    seed: int
    families: List[str]
    augment: bool
    augment_probability: float
    record_size: int = RECORD_SIZE
    format_version: int = FORMAT_VERSION
    created: str = field(default_factory=lambda: datetime.now(
        timezone.utc).isoformat(timespec='seconds'))

    def to_json(self) -> str:
        return json_dumps({
            'format_version': self.format_version,
            'grid': {'n': self.grid.n, 'pitch_mm': self.grid.pitch_mm},
            'frequency': {'start_ghz': self.freqs.start_ghz,
                          'stop_ghz': self.freqs.stop_ghz,
                          'count': self.freqs.count},
            'record_size': self.record_size,
            'record_count': self.record_count,
            'shards': self.shards,
            'stats': {'mu_db': self.stats.mu_db,
                      'sigma_db': self.stats.sigma_db},
            'seed': self.seed,
            'families': self.families,
            'augment': self.augment,
            'augment_probability': self.augment_probability,
            'created': self.created,
        }, indent=2, sort_keys=True) + '\n'

    @classmethod
    def from_json(cls, text: str) -> 'Manifest':
        try:
            doc = json_loads(text)
            if doc['format_version'] != FORMAT_VERSION:
                raise ShardError(f"Unsupported dataset format "
                                 f"{doc['format_version']}")
            if doc['record_size'] != RECORD_SIZE:
                raise ShardError(f"Record size {doc['record_size']} differs "
                                 f"from {RECORD_SIZE}")
            return cls(BoardGrid(doc['grid']['n'], doc['grid']['pitch_mm']),
                       FrequencyGrid(**doc['frequency']),
                       int(doc['record_count']), list(doc['shards']),
                       DatasetStats(doc['stats']['mu_db'],
                                    doc['stats']['sigma_db']),
                       int(doc['seed']), list(doc['families']),
                       bool(doc['augment']),
                       float(doc['augment_probability']),
                       created=str(doc.get('created', '')))
        except (KeyError, TypeError, ValueError) as exc:
            raise ShardError(f'Invalid manifest: {exc}') from exc


class Dataset:
    """Read access to a dataset directory."""

    def __init__(self, path: str):
        self.log = getLogger('pyrfdiff.dataset')
        self.path = path
        try:
            with open(joinpath(path, MANIFEST_NAME), 'rt') as mfp:
                self.manifest = Manifest.from_json(mfp.read())
        except OSError as exc:
            raise ShardError(f'Cannot read dataset manifest: {exc}') from exc

    def __len__(self) -> int:
        return self.manifest.record_count

    @property
    def stats(self) -> DatasetStats:
        return self.manifest.stats

    @property
    def grid(self) -> BoardGrid:
        return self.manifest.grid

    def read_shard(self, entry: dict) -> np.ndarray:
        """Load and verify one shard.

           :raise ShardError: on a size or checksum mismatch
        """
        name = entry['file']
        with open(joinpath(self.path, name), 'rb') as sfp:
            data = sfp.read()
        if len(data) != entry['records'] * RECORD_SIZE:
            raise ShardError(f'{name}: {len(data)} bytes, expected '
                             f'{entry["records"]} records')
        if sha256(data).hexdigest() != entry['sha256']:
            raise ShardError(f'{name}: checksum mismatch')
        self.log.debug('Loaded %s, %d records', name, entry['records'])
        return np.frombuffer(data, dtype=RECORD_DTYPE)

    def records(self) -> Iterator[DatasetRecord]:
        """Yield every record in storage order."""
        for entry in self.manifest.shards:
            for row in self.read_shard(entry):
                yield decode_record(row, self.grid)


def _draw_record(index: int, families: Sequence[TemplateId], seed: int,
                 augment: bool, config: EasyDict, grid: BoardGrid,
                 freqs: FrequencyGrid) -> DatasetRecord:
    rng = np.random.default_rng(derive_seed(seed, index))
    dcfg = config.dataset
    family = families[int(rng.integers(0, len(families)))]
    sub_name = dcfg.substrates[int(rng.integers(0, len(dcfg.substrates)))]
    substrate = substrate_preset(sub_name, config)
    row_lo, row_hi = dcfg.port_rows
    for attempt in range(SAMPLE_ATTEMPTS):
        y_mm = (int(rng.integers(row_lo, row_hi + 1)) + 0.5) * grid.pitch_mm
        feeds = FeedSet([(0.0, y_mm), (grid.side_mm, y_mm)])
        try:
            instance = sample_template(family, feeds,
                                       int(rng.integers(0, 1 << 63)), grid)
            break
        except TemplateError as exc:
            if attempt == SAMPLE_ATTEMPTS - 1:
                raise
            getLogger('pyrfdiff.dataset').debug('Record %d: %s', index, exc)
    layout = emit_layout(instance, grid)
    sparams = solve(instance, freqs, substrate)
    if augment:
        layout, feeds, sparams = random_augment(
            layout, feeds, sparams, rng, dcfg.augment_probability)
    return DatasetRecord(family, instance.params, feeds, substrate, layout,
                         sparams)


def generate_dataset(families: Sequence[TemplateId], count: int, seed: int,
                     out_dir: str, augment: bool = True,
                     config: Optional[EasyDict] = None, workers: int = 1,
                     grid: Optional[BoardGrid] = None,
                     freqs: Optional[FrequencyGrid] = None) -> Manifest:
    """Generate, solve and store `count` random template boards.

       Record i only depends on (seed, i), hence shard contents do not
       depend on `workers`.

       :return: the written manifest
    """
    log = getLogger('pyrfdiff.dataset')
    config = config or load_config()
    grid = grid or BoardGrid()
    freqs = freqs or FrequencyGrid()
    families = [TemplateId(f) for f in families]
    if not families or TemplateId.NULL in families:
        raise UsageError('At least one concrete family is needed')
    if count < 1:
        raise UsageError(f'Invalid record count {count}')
    if not isdir(out_dir):
        makedirs(out_dir)

    def _draw(index):
        return _draw_record(index, families, seed, augment, config, grid,
                            freqs)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            records = list(executor.map(_draw, range(count)))
    else:
        records = [_draw(index) for index in range(count)]
    rows = encode_records(records)
    per_shard = int(config.dataset.records_per_shard)
    shards = []
    for pos, start in enumerate(range(0, count, per_shard)):
        data = rows[start:start + per_shard].tobytes()
        name = shard_name(pos)
        with open(joinpath(out_dir, name), 'wb') as sfp:
            sfp.write(data)
        shards.append({'file': name, 'records': len(data) // RECORD_SIZE,
                       'sha256': sha256(data).hexdigest()})
        log.info('Wrote %s', name)
    # statistics of the stored, float32 rounded, values
    stats = compute_stats(decode_record(row, grid).sparams for row in rows)
    manifest = Manifest(grid, freqs, count, shards, stats, seed,
                        [f.token for f in families], augment,
                        float(config.dataset.augment_probability))
    with open(joinpath(out_dir, MANIFEST_NAME), 'wt', newline='\n') as mfp:
        mfp.write(manifest.to_json())
    log.info('%d records, stats mu %.3f dB sigma %.3f dB', count,
             stats.mu_db, stats.sigma_db)
    return manifest
