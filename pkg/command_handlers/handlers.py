import logging
import os
import sys
import time

import numpy as np

from boosting.logic import FitConfig, fit, log_density, sample
from boosting.weak_learner import LearnerConfig
from config.settings import DEFAULT_SEED
from models import database
from models.serialization import load_model, save_model
from pipeline.csv_io import iter_table, open_output, read_table, write_rows, write_table
from pipeline.evaluation import RunningScore, cross_validate, estimate_kl, kl_trajectory
from pipeline.preprocess import jitter_table, minmax_scale
from pipeline.scenarios import get_scenario, scenario, scenario_names
from utils import rng as streams
from utils.constants import (
    C0_GRID, CV_FOLDS, DEFAULT_MARGIN, GAMMA_GRID, GRID_SIZE, MAX_DEPTH, MIN_COUNT, STRATEGIES,
    TREES_COPULA, TREES_PER_MARGIN,
)
from utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


def _float_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Expected a comma-separated list of numbers, got {text!r}") from None
    if not values:
        raise ConfigError("Grid must hold at least one value")
    return values


def _int_list(text):
    return [int(v) for v in _float_list(text)]


def _add_fit_options(parser):
    parser.add_argument('--c0', type=float, default=0.1, help='global learning rate in (0, 1]')
    parser.add_argument('--gamma', type=float, default=0.1, help='scale-dependence of the learning rate')
    parser.add_argument('--trees-margin', type=int, default=TREES_PER_MARGIN, help='stage-1 trees per dimension')
    parser.add_argument('--trees-copula', type=int, default=TREES_COPULA, help='stage-2 trees')
    parser.add_argument('--max-depth', type=int, default=MAX_DEPTH)
    parser.add_argument('--grid', type=int, default=GRID_SIZE, help='N_L; N_L - 1 cuts per dimension')
    parser.add_argument('--min-count', type=int, default=MIN_COUNT)
    parser.add_argument('--strategy', choices=STRATEGIES, default='stochastic')
    parser.add_argument('--seed', type=int, default=DEFAULT_SEED)
    parser.add_argument('--no-two-stage', action='store_true', help='skip the per-margin stage')
    parser.add_argument('--jitter-ties', action='store_true', help='spread tied values before fitting')
    parser.add_argument('--margin', type=float, default=DEFAULT_MARGIN, help='box expansion for scaling')
    parser.add_argument('--early-stop', type=float, default=0.0,
                        help='stop stage 2 when the mean of the last 50 improvements drops below this')


def _fit_config(args):
    learner = LearnerConfig(grid_size=args.grid, max_depth=args.max_depth, min_count=args.min_count,
                            strategy=args.strategy)
    return FitConfig(c0=args.c0, gamma=args.gamma, trees_per_margin=args.trees_margin,
                     trees_copula=args.trees_copula, learner=learner, seed=args.seed,
                     two_stage=not args.no_two_stage, early_stop_threshold=args.early_stop).validate()


def _prepare(data, names, args):
    """Optional tie jitter followed by min-max scaling; returns (scaled, record)."""
    flags = [False] * data.shape[1]
    if args.jitter_ties:
        data, flags = jitter_table(data, streams.substream(args.seed, streams.JITTER), names)
    scaled, record = minmax_scale(data, args.margin, names)
    record.jitter_applied = flags
    return scaled, record


def cmd_train(args):
    """Fit an ensemble to a CSV and write the model file."""
    config = _fit_config(args)
    data, names = read_table(args.data)
    scaled, record = _prepare(data, names, args)
    start = time.time()
    ensemble = fit(scaled, config, streams.substream(config.seed, streams.FIT), preprocess=record)
    seconds = time.time() - start
    save_model(ensemble, args.out)

    print(f"trained {len(ensemble)} trees on {data.shape[0]} rows x {data.shape[1]} columns in {seconds:.1f}s")
    for row in ensemble.stage_summary():
        print(f"  {row['stage']}: {row['trees']} trees, improvement {row['improvement']:.6f}")
    print(f"training mean log-density (cube scale): {ensemble.training_log_density:.6f}")
    print(f"training mean log-density (original scale): "
          f"{ensemble.training_log_density + record.log_jacobian:.6f}")

    if database.is_enabled():
        with database.get_db() as session:
            database.record_training_run(
                session, data_path=args.data, model_path=args.out, rows=data.shape[0],
                dimension=data.shape[1], trees=len(ensemble), c0=config.c0, gamma=config.gamma,
                seed=config.seed, training_log_density=ensemble.training_log_density, seconds=seconds,
            )
    return 0


def cmd_density(args):
    """Write one log-density per input row, streaming the table in chunks."""
    ensemble = load_model(args.model)
    running = RunningScore()
    with open_output(args.out) as stream:
        header_written = False
        for _, chunk in iter_table(args.data):
            if chunk.shape[1] != ensemble.dim:
                raise DataError(f"Data has {chunk.shape[1]} columns but the model expects {ensemble.dim}")
            values = np.atleast_1d(log_density(ensemble, chunk, original_scale=args.original_scale))
            write_rows(stream, None if header_written else ['log_density'], ([v] for v in values))
            header_written = True
            running.update(values)
    score = running.score()
    if score.count == 0:
        raise DataError(f"{args.data} holds no scorable rows")
    summary = f"predictive score: {score.mean:.6f} +/- {score.std:.6f} over {score.count} rows"
    if score.outside:
        summary += f" ({score.outside} rows outside the model box, scored -inf)"
    print(summary, file=sys.stderr if args.out in (None, '-') else sys.stdout)

    if database.is_enabled():
        with database.get_db() as session:
            database.record_evaluation(session, args.model, 'predictive', score.mean, score.std, score.count,
                                       score.outside)
    return 0


def cmd_sample(args):
    """Draw from the fitted measure by inverse tree-CDF sampling."""
    if args.n < 1:
        raise ConfigError(f"--n must be at least 1, got {args.n}")
    ensemble = load_model(args.model)
    draws = sample(ensemble, args.n, streams.substream(args.seed, streams.SAMPLING),
                   original_scale=args.original_scale)
    write_table(args.out, [f"x{j + 1}" for j in range(ensemble.dim)], draws)
    return 0


def cmd_importance(args):
    """Per-dimension variable importance recorded during fitting."""
    ensemble = load_model(args.model)
    shares = ensemble.importance_share()
    rows = [[j + 1, float(value), float(share)] for j, (value, share) in enumerate(zip(ensemble.importance, shares))]
    write_table(args.out, ['dimension', 'importance', 'share'], rows)
    print(f"total importance {float(np.sum(ensemble.importance)):.6f}; "
          f"training mean log-density {ensemble.training_log_density:.6f}", file=sys.stderr)
    return 0


def cmd_cv(args):
    """Choose (c0, gamma) by k-fold cross-validation."""
    config = _fit_config(args)
    data, names = read_table(args.data)
    scaled, _ = _prepare(data, names, args)
    result = cross_validate(scaled, _float_list(args.c0_grid), _float_list(args.gamma_grid), args.folds, config,
                            streams.substream(config.seed, streams.CV_SHUFFLE), args.schedule_scale)
    rows = [[row.c0, row.gamma, row.mean] + list(row.fold_scores) for row in result.table]
    header = ['c0', 'gamma', 'mean'] + [f"fold{f + 1}" for f in range(args.folds)]
    write_table(args.out, header, rows)
    print(f"selected c0={result.c0} gamma={result.gamma} (held-out score {result.best().mean:.6f})",
          file=sys.stderr if args.out in (None, '-') else sys.stdout)

    if database.is_enabled():
        with database.get_db() as session:
            database.record_cv_table(session, args.data, args.folds, result)
    return 0


def cmd_simulate(args):
    """Write a scenario sample and the true log-density at every sampled point."""
    chosen = get_scenario(args.scenario)
    samples, true_log_density = scenario(chosen, streams.substream(args.seed, streams.SCENARIO), args.n)
    write_table(args.out, ['x1', 'x2'], samples)
    stem, ext = os.path.splitext(args.out)
    reference = f"{stem}_logdensity{ext or '.csv'}"
    write_table(reference, ['true_log_density'], ([v] for v in true_log_density(samples)))
    print(f"scenario {chosen.name}: {samples.shape[0]} points -> {args.out}, {reference}")
    return 0


def cmd_evaluate(args):
    """Monte-Carlo KL divergence from a scenario's true distribution to the model."""
    ensemble = load_model(args.model)
    chosen = get_scenario(args.scenario)
    if ensemble.dim != chosen.dim:
        raise DataError(f"Model has dimension {ensemble.dim} but scenario {chosen.name} has {chosen.dim}")
    rng = streams.substream(args.seed, streams.MONTE_CARLO)
    if args.trajectory:
        checkpoints = sorted(set(k for k in _int_list(args.trajectory) if k <= len(ensemble)) | {len(ensemble)})
        for k, estimate in zip(checkpoints, kl_trajectory(chosen, ensemble, checkpoints, args.mc, rng,
                                                          original_scale=True)):
            print(f"K={k}: KL {estimate.value:.6f} +/- {estimate.standard_error:.6f}")
    else:
        estimate = estimate_kl(chosen, ensemble, args.mc, rng, original_scale=True)
        print(f"KL {estimate.value:.6f} +/- {estimate.standard_error:.6f}")
    print(f"points used {estimate.count}, excluded {estimate.excluded}")

    if database.is_enabled():
        with database.get_db() as session:
            database.record_evaluation(session, args.model, f"kl:{chosen.name}", estimate.value,
                                       estimate.standard_error, estimate.count, estimate.excluded)
    return 0


def cmd_history(args):
    """List recorded training runs."""
    if not database.is_enabled():
        raise ConfigError("No run ledger configured; set TREEBOOST_RUNS_DATABASE_URL")
    with database.get_db() as session:
        runs = database.get_training_runs(session, args.limit)
        rows = [[r.id, r.created_at.isoformat() if r.created_at else '', r.data_path, r.model_path, r.rows,
                 r.dimension, r.trees, r.c0, r.gamma, r.seed, r.training_log_density, r.seconds] for r in runs]
    write_table(None, ['id', 'created_at', 'data', 'model', 'rows', 'dimension', 'trees', 'c0', 'gamma',
                       'seed', 'training_log_density', 'seconds'], rows)
    return 0


def register_handlers(subparsers):
    logger.debug("Setting up command handlers...")

    train = subparsers.add_parser('train', help='fit an ensemble to a CSV')
    train.add_argument('--data', required=True)
    train.add_argument('--out', required=True, help='model file to write')
    _add_fit_options(train)
    train.set_defaults(handler=cmd_train)

    density = subparsers.add_parser('density', help='log-density of every CSV row')
    density.add_argument('--model', required=True)
    density.add_argument('--data', required=True)
    density.add_argument('--original-scale', action='store_true',
                         help='rows are in the training units (adds the scaling log-Jacobian)')
    density.add_argument('--out', default=None)
    density.set_defaults(handler=cmd_density)

    draw = subparsers.add_parser('sample', help='draw from a fitted model')
    draw.add_argument('--model', required=True)
    draw.add_argument('--n', type=int, required=True)
    draw.add_argument('--seed', type=int, default=DEFAULT_SEED)
    draw.add_argument('--original-scale', action='store_true', help='undo the training scaling')
    draw.add_argument('--out', default=None)
    draw.set_defaults(handler=cmd_sample)

    importance = subparsers.add_parser('importance', help='per-dimension variable importance')
    importance.add_argument('--model', required=True)
    importance.add_argument('--out', default=None)
    importance.set_defaults(handler=cmd_importance)

    cv = subparsers.add_parser('cv', help='choose c0 and gamma by cross-validation')
    cv.add_argument('--data', required=True)
    cv.add_argument('--c0-grid', default=",".join(str(v) for v in C0_GRID))
    cv.add_argument('--gamma-grid', default=",".join(str(v) for v in GAMMA_GRID))
    cv.add_argument('--folds', type=int, default=CV_FOLDS)
    cv.add_argument('--schedule-scale', type=float, default=1.0, help='multiplier on the tree counts per fold')
    cv.add_argument('--out', default=None, help='score table CSV')
    _add_fit_options(cv)
    cv.set_defaults(handler=cmd_cv)

    simulate = subparsers.add_parser('simulate', help='sample a simulation scenario')
    simulate.add_argument('--scenario', required=True, help='one of ' + ', '.join(scenario_names()))
    simulate.add_argument('--n', type=int, default=None, help='defaults to the scenario size')
    simulate.add_argument('--seed', type=int, default=DEFAULT_SEED)
    simulate.add_argument('--out', required=True)
    simulate.set_defaults(handler=cmd_simulate)

    evaluate = subparsers.add_parser('evaluate', help='Monte-Carlo KL against a scenario')
    evaluate.add_argument('--model', required=True)
    evaluate.add_argument('--scenario', required=True)
    evaluate.add_argument('--mc', type=int, default=100000)
    evaluate.add_argument('--seed', type=int, default=DEFAULT_SEED)
    evaluate.add_argument('--trajectory', default=None, help='comma-separated tree counts, e.g. 50,100,200')
    evaluate.set_defaults(handler=cmd_evaluate)

    history = subparsers.add_parser('history', help='list recorded training runs')
    history.add_argument('--limit', type=int, default=20)
    history.set_defaults(handler=cmd_history)

    logger.debug("Command handlers registered!")
