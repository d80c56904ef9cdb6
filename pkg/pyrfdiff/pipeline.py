# Copyright (c) 2024-2026, pyrfdiff developers
# All rights reserved.
#
# SPDX-License-Identifier: BSD-3-Clause

"""Command implementations of the rfdiff tool.

   Each ``cmd_*`` function is the library form of one sub-command; the
   command line front-end only parses arguments and maps errors to exit
   codes.
"""

#pylint: disable-msg=too-many-arguments
#pylint: disable-msg=too-many-locals

from csv import writer as csv_writer
from json import dumps as json_dumps, loads as json_loads
from logging import getLogger
from math import inf, isfinite, isqrt
from os import makedirs
from os.path import exists, isdir, join as joinpath, splitext
from typing import Dict, List, Optional, Sequence, Tuple
import numpy as np
from .config import load_config, parse_substrate
from .core import (BoardGrid, BoardLayout, ConditioningBundle, DatasetStats,
                   FeedSet, FormatError, FrequencyGrid, GeometryError,
                   NoFitError, SParamSet, SubstrateSpec, TemplateId,
                   UsageError, encode_conditioning_channels)
from .dataset import Dataset, generate_dataset
from .denoiser import (ToyDenoiser, TrainingSet, load_model, save_model,
                       train)
from .diffusion import SamplerConfig, sample_layouts
from .emsolve import solve
from .metrics import (CandidateReport, format_report, rank_candidates,
                      rmse_ri, valid_rate, write_report_csv)
from .misc import EasyDict, to_floats
from .templates import (TemplateError, extract_params, family_from_token,
                        instance_from_params)
from .touchstone import touchstone_read
from .vectorize import (drc_filter, extract_rects, extract_vias,
                        refine_rects, to_excellon, to_gerber)


BOARD_SIDE_MM = BoardGrid().side_mm
CANDIDATES_NAME = 'candidates.json'
RANKING_NAME = 'ranking.csv'

_logger = getLogger('pyrfdiff.pipeline')


def parse_ports(token: str) -> FeedSet:
    """Parse ``x0,y0;x1,y1`` (or a single ``x0,y0``) port positions in mm.

       :raise UsageError: on a malformed string
    """
    try:
        ports = [tuple(to_floats(part, 2)) for part in token.split(';')]
    except ValueError as exc:
        raise UsageError(f"Invalid port list '{token}': {exc}") from exc
    if not 1 <= len(ports) <= 2:
        raise UsageError(f"Invalid port count in '{token}'")
    return FeedSet(ports)


def parse_families(tokens: Sequence[str]) -> List[TemplateId]:
    """Parse family tokens; ``all`` stands for every family."""
    families = []
    for token in tokens:
        for part in token.split(','):
            if part.strip().lower() == 'all':
                families.extend(TemplateId.families())
            else:
                family = family_from_token(part)
                if family is TemplateId.NULL:
                    raise UsageError('NULL is not a dataset family')
                families.append(family)
    if not families:
        raise UsageError('No template family')
    return list(dict.fromkeys(families))


def write_board(layout: BoardLayout, path: str) -> None:
    """Store metal then via channels as n x n little-endian float32."""
    with open(path, 'wb') as bfp:
        bfp.write(layout.as_array().astype('<f4').tobytes())


def read_board(path: str, grid: Optional[BoardGrid] = None) -> BoardLayout:
    """Load a board file, inferring the grid of the default board side
       from the file size when none is given.

       :raise FormatError: on a size that is not a square board
    """
    with open(path, 'rb') as bfp:
        data = bfp.read()
    count = len(data) // 4
    n = isqrt(count // 2)
    if len(data) % 8 or 2 * n * n != count or (grid and grid.n != n):
        raise FormatError(f'{path}: {len(data)} bytes is not a board file')
    grid = grid or BoardGrid(n, BOARD_SIDE_MM / n)
    array = np.frombuffer(data, dtype='<f4').reshape(2, n, n)
    try:
        return BoardLayout(grid, array[0].astype(float),
                           array[1].astype(float))
    except GeometryError as exc:
        raise FormatError(f'{path}: {exc}') from exc


def write_pgm(metal: np.ndarray, path: str) -> None:
    """Write an ASCII (P2) preview, the top board edge on the first line."""
    pixels = np.rint(np.clip(metal, 0.0, 1.0) * 255).astype(int)[::-1]
    lines = ['P2', '%d %d' % (pixels.shape[1], pixels.shape[0]), '255']
    lines.extend(' '.join(str(v) for v in row) for row in pixels)
    with open(path, 'wt', newline='\n') as pfp:
        pfp.write('\n'.join(lines))
        pfp.write('\n')


def _ensure_dir(path: str) -> None:
    if not isdir(path):
        try:
            makedirs(path)
        except OSError as exc:
            raise UsageError(f'Cannot create {path}: {exc}') from exc


def sidecar_path(model_path: str) -> str:
    return splitext(model_path)[0] + '.json'


def load_model_bundle(model_path: str, config: Optional[EasyDict] = None) \
        -> Tuple[ToyDenoiser, DatasetStats, dict]:
    """Load a model with the statistics and metadata of its sidecar.

       Without a sidecar the configured fallback statistics are used.
    """
    if not exists(model_path):
        raise UsageError(f'No such model: {model_path}')
    model = load_model(model_path)
    meta = {}
    side = sidecar_path(model_path)
    if exists(side):
        with open(side, 'rt') as sfp:
            meta = json_loads(sfp.read())
        stats = DatasetStats(meta['mu_db'], meta['sigma_db'])
    else:
        config = config or load_config()
        _logger.warning('No %s, using configured statistics', side)
        stats = DatasetStats(float(config.stats.mu_db),
                             float(config.stats.sigma_db))
    return model, stats, meta


def cmd_dataset_gen(families: Sequence[str], count: int, seed: int,
                    out_dir: str, augment: bool = True,
                    config: Optional[EasyDict] = None,
                    workers: int = 1) -> dict:
    """Generate a dataset directory; return the manifest as a dict."""
    manifest = generate_dataset(parse_families(families), count, seed,
                                out_dir, augment, config, workers)
    return json_loads(manifest.to_json())


def cmd_train(dataset_dir: str, steps: int, seed: int, out_path: str,
              holdout: int = 0, batch: Optional[int] = None,
              hidden: int = 512, config: Optional[EasyDict] = None,
              loss_path: Optional[str] = None) -> List[float]:
    """Train a denoiser on a dataset; the last `holdout` records are kept
       out of training for evaluation.

       Writes the model, its JSON sidecar and the loss curve CSV.
    """
    config = config or load_config()
    tcfg = config.training
    dataset = Dataset(dataset_dir)
    if not 0 <= holdout < len(dataset):
        raise UsageError(f'Cannot hold {holdout} out of {len(dataset)} '
                         f'records')
    records = list(dataset.records())[:len(dataset) - holdout]
    training_set = TrainingSet.from_records(records, dataset.stats)
    model, losses = train(training_set, steps, batch or int(tcfg.batch),
                          seed, float(tcfg.lr),
                          float(tcfg.mask_probability),
                          float(tcfg.null_template_probability), hidden,
                          int(tcfg.log_every))
    save_model(model, out_path)
    meta = {'mu_db': dataset.stats.mu_db,
            'sigma_db': dataset.stats.sigma_db,
            'grid': {'n': model.side, 'pitch_mm': model.grid.pitch_mm},
            'dataset': dataset_dir, 'holdout': holdout, 'steps': steps,
            'seed': seed}
    with open(sidecar_path(out_path), 'wt', newline='\n') as sfp:
        sfp.write(json_dumps(meta, indent=2, sort_keys=True) + '\n')
    loss_path = loss_path or splitext(out_path)[0] + '.loss.csv'
    with open(loss_path, 'wt', newline='') as lfp:
        out = csv_writer(lfp, lineterminator='\n')
        out.writerow(['step', 'mse'])
        for step, loss in enumerate(losses):
            out.writerow([step, '%.8f' % loss])
    _logger.info('Trained %d steps, mse %.5f -> %.5f', steps,
                 losses[0] if losses else 0.0, losses[-1] if losses else 0.0)
    return losses


def generate_candidates(model: ToyDenoiser, stats: DatasetStats,
                        bundle: ConditioningBundle, sampler: SamplerConfig,
                        grid: Optional[BoardGrid] = None) \
        -> List[BoardLayout]:
    """Sample candidate boards on the model grid and upsample them to the
       board grid."""
    grid = grid or BoardGrid()
    if grid.n % model.side:
        raise UsageError(f'Model grid {model.side} does not divide '
                         f'{grid.n}')
    bundle.feeds.validate(grid)
    cond = encode_conditioning_channels(bundle, model.grid, stats)
    layouts = sample_layouts(model, cond, bundle.feeds, sampler, model.grid)
    factor = grid.n // model.side
    return [layout.upsample(factor) for layout in layouts]


def cmd_generate(model_path: str, out_dir: str, ports: str,
                 substrate: str = 'ro4003c', target_path: Optional[str] = None,
                 template: str = 'none', sampler: str = 'dpmpp',
                 candidates: Optional[int] = None, seed: int = 0,
                 config: Optional[EasyDict] = None,
                 workers: int = 1) -> List[str]:
    """Generate candidate boards; return the written board file names."""
    config = config or load_config()
    feeds = parse_ports(ports)
    sub = parse_substrate(substrate, config)
    family = family_from_token(template)
    model, stats, _ = load_model_bundle(model_path, config)
    target = touchstone_read(target_path)[1] if target_path else None
    scfg = SamplerConfig.from_config(sampler, config, candidates=candidates,
                                     seed=seed, workers=workers)
    bundle = ConditioningBundle(feeds, sub, target, family)
    layouts = generate_candidates(model, stats, bundle, scfg)
    _ensure_dir(out_dir)
    names = []
    for pos, layout in enumerate(layouts):
        name = 'candidate_%03d' % pos
        write_board(layout, joinpath(out_dir, name + '.f32'))
        write_pgm(layout.metal, joinpath(out_dir, name + '.pgm'))
        names.append(name + '.f32')
    grid = layouts[0].grid
    meta = {'grid': {'n': grid.n, 'pitch_mm': grid.pitch_mm},
            'ports': [list(p) for p in feeds.ports],
            'port_mask': list(feeds.active_mask),
            'substrate': [sub.eps_r, sub.tan_delta, sub.h_mm],
            'template': family.token, 'sampler': scfg.kind.value,
            'seed': seed, 'model': model_path, 'target': target_path,
            'candidates': names}
    with open(joinpath(out_dir, CANDIDATES_NAME), 'wt', newline='\n') as cfp:
        cfp.write(json_dumps(meta, indent=2, sort_keys=True) + '\n')
    _logger.info('Wrote %d candidates to %s', len(names), out_dir)
    return names


def fit_candidate(layout: BoardLayout, feeds: FeedSet,
                  substrate: SubstrateSpec, families: Sequence[TemplateId],
                  target: Optional[SParamSet] = None,
                  freqs: Optional[FrequencyGrid] = None) \
        -> Tuple[Optional[TemplateId], object]:
    """Fit a board to template families and solve the best fit.

       :return: the fitted family and its S-parameters, or (None, the
                last NoFitError) when no family matches
    """
    freqs = freqs or FrequencyGrid()
    rects = extract_rects(layout.metal, layout.grid)
    vias = extract_vias(layout.via, layout.grid)
    best: Tuple[float, Optional[TemplateId], object] = \
        (inf, None, NoFitError('No family tried'))
    for family in families:
        try:
            params = extract_params(family, rects, vias, feeds, layout.grid)
            instance = instance_from_params(family, params, feeds,
                                            layout.grid)
            sparams = solve(instance, freqs, substrate)
        except (NoFitError, TemplateError, GeometryError) as exc:
            if best[1] is None:
                best = (inf, None, exc)
            continue
        score = _rmse_or_zero(sparams, target)
        if best[1] is None or score < best[0]:
            best = (score, family, sparams)
    return best[1], best[2]


def _rmse_or_zero(sparams: SParamSet, target: Optional[SParamSet]) -> float:
    return rmse_ri(sparams, target) if target is not None else 0.0


def rank_layouts(layouts: Sequence[BoardLayout], target: SParamSet,
                 feeds: FeedSet, substrate: SubstrateSpec,
                 families: Sequence[TemplateId],
                 names: Optional[Sequence[str]] = None) \
        -> Tuple[List[int], List[CandidateReport]]:
    """Fit, solve and rank candidate boards against a target."""
    cands = []
    for layout in layouts:
        _, result = fit_candidate(layout, feeds, substrate, families,
                                  target)
        cands.append((layout, result))
    return rank_candidates(cands, target, feeds, names)


def _families_of(template: Optional[str]) -> List[TemplateId]:
    family = family_from_token(template or 'none')
    return TemplateId.families() if family is TemplateId.NULL else [family]


def cmd_rank(cand_dir: str, target_path: str,
             template: Optional[str] = None,
             csv_path: Optional[str] = None) -> List[CandidateReport]:
    """Rank the candidates of a directory; print and store the table.

       :param template: family to fit, the generation template if omitted,
                        every family for ``none``
    """
    try:
        with open(joinpath(cand_dir, CANDIDATES_NAME), 'rt') as cfp:
            meta = json_loads(cfp.read())
        grid = BoardGrid(meta['grid']['n'], meta['grid']['pitch_mm'])
        feeds = FeedSet([tuple(p) for p in meta['ports']],
                        meta['port_mask'])
        substrate = SubstrateSpec(*meta['substrate'])
        names = list(meta['candidates'])
    except OSError as exc:
        raise UsageError(f'Not a candidate directory: {exc}') from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f'Invalid {CANDIDATES_NAME}: {exc}') from exc
    _, target = touchstone_read(target_path)
    layouts = [read_board(joinpath(cand_dir, name), grid) for name in names]
    families = _families_of(template or meta.get('template'))
    _, reports = rank_layouts(layouts, target, feeds, substrate, families,
                              names)
    print(format_report(reports))
    with open(csv_path or joinpath(cand_dir, RANKING_NAME), 'wt',
              newline='') as rfp:
        write_report_csv(reports, rfp)
    return reports


def cmd_vectorize(board_path: str, gerber_path: str,
                  drill_path: Optional[str] = None,
                  iters: int = 200) -> List[str]:
    """Export a board file as Gerber (and Excellon when it holds vias).

       :return: the design rule warnings
    """
    layout = read_board(board_path)
    grid = layout.grid
    rects = refine_rects(extract_rects(layout.metal, grid), layout.metal,
                         grid, iters)
    rects, warnings = drc_filter(rects)
    to_gerber(rects, grid, gerber_path)
    vias = extract_vias(layout.via, grid)
    if drill_path:
        to_excellon(vias, grid, drill_path)
    elif vias:
        warnings.append('%d via(s) not exported, no drill file' % len(vias))
    _logger.info('%d rects, %d vias', len(rects), len(vias))
    return warnings


def cmd_eval(dataset_dir: str, model_path: str, samples: int,
             sampler: str = 'langevin', candidates: Optional[int] = None,
             seed: int = 0, efficacy: bool = False,
             config: Optional[EasyDict] = None,
             workers: int = 1) -> Dict[str, float]:
    """Evaluate a model on held-out dataset targets.

       Targets are the model holdout records, or the last `samples`
       records when the model has none. The report holds the valid board
       rate over every candidate and the mean/std of the best-candidate
       RMSE and WMAE over targets with at least one fitted candidate.
       With `efficacy`, each target is also generated from the
       conditioning of another target, and the share of targets whose own
       conditioning ranks better is reported.
    """
    config = config or load_config()
    model, stats, meta = load_model_bundle(model_path, config)
    dataset = Dataset(dataset_dir)
    records = list(dataset.records())
    holdout = int(meta.get('holdout', 0))
    if not holdout:
        _logger.warning('Model has no holdout, evaluating on training '
                        'records')
        holdout = len(records)
    pool = records[len(records) - holdout:]
    if samples < 1:
        raise UsageError('Nothing to evaluate')
    targets = pool[-samples:]
    if len(targets) < samples:
        _logger.warning('Only %d held-out records', len(targets))
    scfg = SamplerConfig.from_config(sampler, config, candidates=candidates,
                                     seed=seed, workers=workers)

    def _bundle(rec):
        return ConditioningBundle(rec.feeds, rec.substrate, rec.sparams,
                                  rec.template)

    def _run(bundle, rec):
        layouts = generate_candidates(model, stats, bundle, scfg,
                                      rec.layout.grid)
        _, reports = rank_layouts(layouts, rec.sparams, rec.feeds,
                                  rec.substrate, [rec.template])
        return layouts, reports[0]

    valid, rmses, wmaes, wins = [], [], [], 0
    for pos, rec in enumerate(targets):
        layouts, best = _run(_bundle(rec), rec)
        valid.append(valid_rate(layouts, rec.feeds))
        if best.fitted and best.valid:
            rmses.append(best.rmse)
            wmaes.append(best.wmae_db)
        if efficacy:
            other = targets[(pos + 1) % len(targets)]
            shuffled = ConditioningBundle(rec.feeds, rec.substrate,
                                          other.sparams, other.template)
            _, rival = _run(shuffled, rec)
            if isfinite(best.rmse) and best.rmse < rival.rmse:
                wins += 1
        _logger.info('target %d: best rmse %.4f', pos, best.rmse)
    report = {'targets': float(len(targets)),
              'valid_rate': float(np.mean(valid)),
              'fitted_targets': float(len(rmses)),
              'rmse_mean': float(np.mean(rmses)) if rmses else float('nan'),
              'rmse_std': float(np.std(rmses)) if rmses else float('nan'),
              'wmae_mean': float(np.mean(wmaes)) if wmaes else float('nan'),
              'wmae_std': float(np.std(wmaes)) if wmaes else float('nan')}
    if efficacy:
        report['efficacy'] = wins / len(targets)
    return report


def format_eval(report: Dict[str, float]) -> str:
    return '\n'.join('%-15s %.4f' % (key, value)
                     for key, value in report.items())
