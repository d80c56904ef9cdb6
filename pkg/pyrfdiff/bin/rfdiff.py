#!/usr/bin/env python3

"""Inverse design of RF PCB passives by conditional diffusion.
"""

# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

from argparse import ArgumentParser, FileType
from logging import Formatter, StreamHandler, DEBUG, ERROR
from sys import modules, stderr
from traceback import format_exc
from pyrfdiff import RfDiffLogger
from pyrfdiff.config import load_config
from pyrfdiff.core import FormatError, GeometryError, RfDiffError, UsageError
from pyrfdiff.misc import to_bool
from pyrfdiff.pipeline import (cmd_dataset_gen, cmd_eval, cmd_generate,
                               cmd_rank, cmd_train, cmd_vectorize,
                               format_eval)

#pylint: disable-msg=too-many-locals
#pylint: disable-msg=too-many-branches
#pylint: disable-msg=too-many-statements


def _add_dataset(subparsers):
    parser = subparsers.add_parser('dataset', help='generate a dataset')
    parser.add_argument('--families', action='append',
                        help='template families, comma separated, or all '
                             '(default: all)')
    parser.add_argument('--count', type=int, required=True,
                        help='number of records')
    parser.add_argument('--seed', type=int, default=0, help='random seed')
    parser.add_argument('--augment', default='on',
                        help='S-parameter preserving augmentation, on|off')
    parser.add_argument('--out', required=True, help='output directory')
    parser.add_argument('--workers', type=int, default=1,
                        help='worker threads')


def _add_train(subparsers):
    parser = subparsers.add_parser('train', help='train a denoiser')
    parser.add_argument('--dataset', required=True, help='dataset directory')
    parser.add_argument('--steps', type=int, required=True,
                        help='optimizer steps')
    parser.add_argument('--seed', type=int, default=0, help='random seed')
    parser.add_argument('--out', required=True, help='model file')
    parser.add_argument('--holdout', type=int, default=0,
                        help='trailing records kept out of training')
    parser.add_argument('--batch', type=int, help='batch size')
    parser.add_argument('--hidden', type=int, default=512,
                        help='hidden layer width')
    parser.add_argument('--loss', help='loss curve CSV file')


def _add_generate(subparsers):
    parser = subparsers.add_parser('generate', help='generate candidates')
    parser.add_argument('--model', required=True, help='model file')
    parser.add_argument('--target', help='target Touchstone file')
    parser.add_argument('--ports', required=True,
                        help='port positions in mm, "x0,y0;x1,y1"')
    parser.add_argument('--substrate', default='ro4003c',
                        help='preset name or custom:eps_r,tan_delta,h_mm')
    parser.add_argument('--template', default='none',
                        help='template family, or none')
    parser.add_argument('--sampler', default='dpmpp',
                        choices=('dpmpp', 'langevin'), help='sampler')
    parser.add_argument('--candidates', type=int,
                        help='candidate count (default: per sampler)')
    parser.add_argument('--seed', type=int, default=0, help='random seed')
    parser.add_argument('--out', required=True, help='output directory')
    parser.add_argument('--workers', type=int, default=1,
                        help='worker threads')


def _add_rank(subparsers):
    parser = subparsers.add_parser('rank', help='rank candidates')
    parser.add_argument('--candidates', required=True,
                        help='candidate directory')
    parser.add_argument('--target', required=True,
                        help='target Touchstone file')
    parser.add_argument('--template',
                        help='family to fit, none for every family '
                             '(default: the generation template)')
    parser.add_argument('--csv', help='ranking CSV file')


def _add_vectorize(subparsers):
    parser = subparsers.add_parser('vectorize',
                                   help='export a board for fabrication')
    parser.add_argument('--board', required=True, help='board file')
    parser.add_argument('--out-gerber', required=True, help='Gerber file')
    parser.add_argument('--out-drill', help='Excellon drill file')
    parser.add_argument('--iters', type=int, default=200,
                        help='edge refinement sweeps')


def _add_eval(subparsers):
    parser = subparsers.add_parser('eval', help='evaluate a model')
    parser.add_argument('--dataset', required=True, help='dataset directory')
    parser.add_argument('--model', required=True, help='model file')
    parser.add_argument('--samples', type=int, default=50,
                        help='held-out targets')
    parser.add_argument('--sampler', default='langevin',
                        choices=('dpmpp', 'langevin'), help='sampler')
    parser.add_argument('--candidates', type=int,
                        help='candidates per target (default: per sampler)')
    parser.add_argument('--seed', type=int, default=0, help='random seed')
    parser.add_argument('--efficacy', action='store_true',
                        help='compare with shuffled conditioning')
    parser.add_argument('--workers', type=int, default=1,
                        help='worker threads')


def main():
    """Main routine"""
    debug = False
    try:
        argparser = ArgumentParser(description=modules[__name__].__doc__)
        subparsers = argparser.add_subparsers(dest='command', required=True,
                                              title='Commands')
        _add_dataset(subparsers)
        _add_train(subparsers)
        _add_generate(subparsers)
        _add_rank(subparsers)
        _add_vectorize(subparsers)
        _add_eval(subparsers)

        extra = argparser.add_argument_group(title='Extras')
        extra.add_argument('-c', '--config', type=FileType('rb'),
                           help='YaML configuration merged over defaults')
        extra.add_argument('-v', '--verbose', action='count', default=0,
                           help='increase verbosity')
        extra.add_argument('-d', '--debug', action='store_true',
                           help='enable debug mode')
        args = argparser.parse_args()
        debug = args.debug

        loglevel = max(DEBUG, ERROR - (10 * args.verbose))
        loglevel = min(ERROR, loglevel)
        if debug:
            formatter = Formatter('%(asctime)s.%(msecs)03d %(name)-20s '
                                  '%(message)s', '%H:%M:%S')
        else:
            formatter = Formatter('%(message)s')
        RfDiffLogger.log.addHandler(StreamHandler(stderr))
        RfDiffLogger.set_formatter(formatter)
        RfDiffLogger.set_level(loglevel)

        config = load_config(args.config)

        if args.command == 'dataset':
            try:
                augment = to_bool(args.augment, permissive=False)
            except ValueError:
                argparser.error(f'Invalid --augment value: {args.augment}')
            manifest = cmd_dataset_gen(args.families or ['all'], args.count,
                                       args.seed, args.out, augment, config,
                                       args.workers)
            print('%d records in %s' % (manifest['record_count'], args.out))
        elif args.command == 'train':
            losses = cmd_train(args.dataset, args.steps, args.seed, args.out,
                               args.holdout, args.batch, args.hidden, config,
                               args.loss)
            if losses:
                print('final mse %.5f' % losses[-1])
        elif args.command == 'generate':
            names = cmd_generate(args.model, args.out, args.ports,
                                 args.substrate, args.target, args.template,
                                 args.sampler, args.candidates, args.seed,
                                 config, args.workers)
            print('%d candidates in %s' % (len(names), args.out))
        elif args.command == 'rank':
            cmd_rank(args.candidates, args.target, args.template, args.csv)
        elif args.command == 'vectorize':
            for warning in cmd_vectorize(args.board, args.out_gerber,
                                         args.out_drill, args.iters):
                print('Warning: %s' % warning, file=stderr)
        elif args.command == 'eval':
            report = cmd_eval(args.dataset, args.model, args.samples,
                              args.sampler, args.candidates, args.seed,
                              args.efficacy, config, args.workers)
            print(format_eval(report))

    except (UsageError, GeometryError) as exc:
        print('\nError: %s' % exc, file=stderr)
        if debug:
            print(format_exc(chain=False), file=stderr)
        exit(2)
    except FormatError as exc:
        print('\nError: %s' % exc, file=stderr)
        if debug:
            print(format_exc(chain=False), file=stderr)
        exit(3)
    except RfDiffError as exc:
        print('\nError: %s' % exc, file=stderr)
        if debug:
            print(format_exc(chain=False), file=stderr)
        exit(4)
    except (IOError, NotImplementedError, ValueError) as exc:
        print('\nError: %s' % exc, file=stderr)
        if debug:
            print(format_exc(chain=False), file=stderr)
        exit(1)
    except KeyboardInterrupt:
        exit(2)


if __name__ == '__main__':
    main()
