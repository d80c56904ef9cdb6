#!/usr/bin/env python3
# -*- coding: utf-8 -*-

# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

#pylint: disable-msg=missing-docstring

import logging
from hashlib import sha256
from os import environ, remove
from os.path import join as joinpath
from sys import stdout
from tempfile import TemporaryDirectory
from unittest import TestCase, TestLoader, TestSuite, main as ut_main
import numpy as np
from pyrfdiff import RfDiffLogger
from pyrfdiff.config import load_config
from pyrfdiff.core import (BoardGrid, BoardLayout, TemplateId, UsageError,
                           compute_stats)
from pyrfdiff.dataset import (MANIFEST_NAME, RECORD_DTYPE, RECORD_SIZE,
                              Dataset, Manifest, ShardError, decode_record,
                              encode_records, generate_dataset, shard_name)
from pyrfdiff.misc import to_bool


FAMILIES = TemplateId.families()


class RecordTestCase(TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmpdir = TemporaryDirectory()
        config = load_config()
        config.dataset.records_per_shard = 4
        cls.config = config
        cls.path = joinpath(cls.tmpdir.name, 'ds')
        cls.manifest = generate_dataset(FAMILIES, 6, 3, cls.path,
                                        config=config)
        cls.records = list(Dataset(cls.path).records())

    @classmethod
    def tearDownClass(cls):
        cls.tmpdir.cleanup()

    def test_record_size(self):
        self.assertEqual(RECORD_SIZE, 34472)
        self.assertEqual(RECORD_DTYPE.itemsize, RECORD_SIZE)

    def test_shards(self):
        shards = self.manifest.shards
        self.assertListEqual([s['file'] for s in shards],
                             [shard_name(0), shard_name(1)])
        self.assertListEqual([s['records'] for s in shards], [4, 2])
        for entry in shards:
            with open(joinpath(self.path, entry['file']), 'rb') as sfp:
                data = sfp.read()
            self.assertEqual(len(data), entry['records'] * RECORD_SIZE)
            self.assertEqual(sha256(data).hexdigest(), entry['sha256'])

    def test_records(self):
        self.assertEqual(len(self.records), 6)
        self.assertEqual(len(Dataset(self.path)), 6)
        for rec in self.records:
            self.assertIn(rec.template, FAMILIES)
            self.assertEqual(rec.layout.grid, BoardGrid())
            self.assertTrue(np.all(np.isfinite(rec.params)))
            self.assertTrue(rec.sparams.valid_mask.all())
            norms = np.linalg.norm(rec.sparams.matrix(), ord=2, axis=(1, 2))
            self.assertTrue(np.all(norms <= 1.0 + 1e-6))
            self.assertTrue(np.any(rec.layout.metal > 0.5))

    def test_stats(self):
        stats = compute_stats(rec.sparams for rec in self.records)
        self.assertAlmostEqual(stats.mu_db, self.manifest.stats.mu_db)
        self.assertAlmostEqual(stats.sigma_db, self.manifest.stats.sigma_db)

    def test_encode_decode(self):
        rows = encode_records(self.records)
        for row, rec in zip(rows, self.records):
            self.assertEqual(decode_record(row, BoardGrid()), rec)

    def test_manifest(self):
        with open(joinpath(self.path, MANIFEST_NAME), 'rt') as mfp:
            text = mfp.read()
        manifest = Manifest.from_json(text)
        self.assertEqual(manifest.to_json(), text)
        self.assertEqual(manifest.record_count, 6)
        self.assertEqual(manifest.seed, 3)
        self.assertListEqual(manifest.families,
                             [f.token for f in FAMILIES])
        self.assertRaises(ShardError, Manifest.from_json, '{}')
        self.assertRaises(ShardError, Manifest.from_json,
                          text.replace('"record_size": 34472',
                                       '"record_size": 34470'))

    def test_wrong_grid(self):
        rec = self.records[0]
        small = BoardGrid(16, 0.5)
        rec = type(rec)(rec.template, rec.params, rec.feeds, rec.substrate,
                        BoardLayout.empty(small), rec.sparams)
        self.assertRaises(ShardError, encode_records, [rec])


class GenerationTestCase(TestCase):

    def setUp(self):
        self.tmpdir = TemporaryDirectory()

    def tearDown(self):
        self.tmpdir.cleanup()

    def _digests(self, name, **kwargs):
        manifest = generate_dataset(
            [TemplateId.MLINE, TemplateId.L_MATCH], 5, 17,
            joinpath(self.tmpdir.name, name), **kwargs)
        return [shard['sha256'] for shard in manifest.shards]

    def test_determinism(self):
        first = self._digests('a')
        self.assertListEqual(first, self._digests('b'))
        self.assertListEqual(first, self._digests('c', workers=3))

    def test_no_augmentation(self):
        path = joinpath(self.tmpdir.name, 'plain')
        manifest = generate_dataset([TemplateId.MLINE], 3, 1, path,
                                    augment=False)
        self.assertFalse(manifest.augment)
        for rec in Dataset(path).records():
            self.assertEqual(rec.template, TemplateId.MLINE)
            # unaugmented boards keep their feeds on the left and right
            # edges
            self.assertEqual(rec.feeds.ports[0][0], 0.0)
            self.assertEqual(rec.feeds.ports[1][0], 8.0)

    def test_bad_arguments(self):
        path = joinpath(self.tmpdir.name, 'bad')
        self.assertRaises(UsageError, generate_dataset, [], 3, 0, path)
        self.assertRaises(UsageError, generate_dataset, [TemplateId.NULL], 3,
                          0, path)
        self.assertRaises(UsageError, generate_dataset, FAMILIES, 0, 0, path)

    def test_corruption(self):
        path = joinpath(self.tmpdir.name, 'corrupt')
        manifest = generate_dataset([TemplateId.MLINE], 2, 0, path,
                                    augment=False)
        shard = joinpath(path, manifest.shards[0]['file'])
        with open(shard, 'rb') as sfp:
            data = bytearray(sfp.read())
        data[1000] ^= 0x01
        with open(shard, 'wb') as sfp:
            sfp.write(data)
        with self.assertRaises(ShardError):
            list(Dataset(path).records())
        with open(shard, 'wb') as sfp:
            sfp.write(data[:-8])
        with self.assertRaises(ShardError):
            list(Dataset(path).records())
        remove(joinpath(path, MANIFEST_NAME))
        self.assertRaises(ShardError, Dataset, path)


def suite():
    suite_ = TestSuite()
    loader = TestLoader()
    for testcase in (RecordTestCase, GenerationTestCase):
        suite_.addTest(loader.loadTestsFromTestCase(testcase))
    return suite_


def main():
    if to_bool(environ.get('RFDIFF_DEBUG', 'off')):
        RfDiffLogger.log.addHandler(logging.StreamHandler(stdout))
    level = environ.get('RFDIFF_LOGLEVEL', 'warning').upper()
    try:
        loglevel = getattr(logging, level)
    except AttributeError as exc:
        raise ValueError('Invalid log level: %s' % level) from exc
    RfDiffLogger.set_level(loglevel)
    ut_main(defaultTest='suite')


if __name__ == '__main__':
    main()
