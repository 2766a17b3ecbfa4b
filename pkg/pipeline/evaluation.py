"""Model selection and scoring: cross-validation, Monte-Carlo KL, predictive scores."""
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from boosting.logic import fit, log_density, prefix_log_densities
from config.settings import WORKERS
from utils import rng as streams
from utils.constants import MIN_MC_COUNT
from utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass
class CVRow:
    c0: float
    gamma: float
    mean: float
    fold_scores: list = field(default_factory=list)


@dataclass
class CVResult:
    c0: float
    gamma: float
    table: list

    def best(self):
        return next(row for row in self.table if row.c0 == self.c0 and row.gamma == self.gamma)


@dataclass
class KLEstimate:
    value: float
    standard_error: float
    count: int
    excluded: int = 0


@dataclass
class Score:
    mean: float
    std: float
    count: int
    outside: int = 0


class RunningScore:
    """Streaming mean and SD of finite log-densities, merged chunk by chunk.

    Chunks are combined with the pairwise form of Welford's update, so the SD
    keeps its precision when the spread is small next to the mean.
    """

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.outside = 0

    def update(self, values):
        values = np.asarray(values, dtype=np.float64).ravel()
        finite = values[np.isfinite(values)]
        self.outside += values.size - finite.size
        if finite.size == 0:
            return
        n, mean = finite.size, float(np.mean(finite))
        m2 = float(np.sum(np.square(finite - mean)))
        total = self.count + n
        delta = mean - self.mean
        self.mean += delta * n / total
        self.m2 += m2 + delta * delta * self.count * n / total
        self.count = total

    def score(self):
        if self.count == 0:
            return Score(float("-inf"), float("nan"), 0, self.outside)
        std = float(np.sqrt(self.m2 / (self.count - 1))) if self.count > 1 else 0.0
        return Score(self.mean, std, self.count, self.outside)


def _scaled_schedule(config, schedule_scale):
    if schedule_scale == 1.0:
        return config
    return replace(
        config,
        trees_per_margin=int(round(config.trees_per_margin * schedule_scale)),
        trees_copula=int(round(config.trees_copula * schedule_scale)),
    )


def make_folds(n, folds, rng):
    """Contiguous blocks of a seeded permutation of the row indices."""
    if folds < 2:
        raise ConfigError(f"Cross-validation needs at least 2 folds, got {folds}")
    if n < folds:
        raise DataError(f"Cannot split {n} rows into {folds} non-empty folds")
    return np.array_split(rng.permutation(n), folds)


def _score_fold(data, train, held_out, config, seed, pair_index, fold):
    fold_rng = streams.substream(seed, f"{streams.FIT}/cv/{pair_index}/{fold}")
    ensemble = fit(data[train], config, fold_rng)
    return float(np.mean(log_density(ensemble, data[held_out])))


def cross_validate(data, c0_grid, gamma_grid, folds, config, rng=None, schedule_scale=1.0, workers=None):
    """Average held-out mean log-density for every (c0, gamma) pair; pick the best.

    Ties go to the smaller c0, then the smaller gamma. Every (pair, fold) job
    draws from its own named substream and joblib returns results in job
    order, so the table does not depend on the number of workers.
    """
    data = np.asarray(data, dtype=np.float64)
    if not c0_grid or not gamma_grid:
        raise ConfigError("The c0 and gamma grids must be non-empty")
    rng = rng if rng is not None else streams.substream(config.seed, streams.CV_SHUFFLE)
    blocks = make_folds(data.shape[0], folds, rng)
    base = _scaled_schedule(config, schedule_scale)
    pairs = [(float(c0), float(gamma)) for c0 in c0_grid for gamma in gamma_grid]
    n_jobs = workers or WORKERS

    def job_args(pair_index, fold):
        c0, gamma = pairs[pair_index]
        train = np.concatenate([b for i, b in enumerate(blocks) if i != fold])
        return data, train, blocks[fold], replace(base, c0=c0, gamma=gamma), config.seed, pair_index, fold

    logger.info(f"Cross-validating {len(pairs)} grid points x {folds} folds with {n_jobs} workers")
    scores = Parallel(n_jobs=n_jobs)(
        delayed(_score_fold)(*job_args(p, f)) for p in range(len(pairs)) for f in range(folds)
    )
    table = []
    for p, (c0, gamma) in enumerate(pairs):
        fold_scores = [float(s) for s in scores[p * folds:(p + 1) * folds]]
        for fold, score in enumerate(fold_scores):
            logger.debug(f"CV c0={c0} gamma={gamma} fold {fold + 1}/{folds}: {score:.6f}")
        table.append(CVRow(c0, gamma, float(np.mean(fold_scores)), fold_scores))
    best = max(table, key=lambda row: (row.mean, -row.c0, -row.gamma))
    logger.info(f"Selected c0={best.c0}, gamma={best.gamma} (held-out score {best.mean:.6f})")
    return CVResult(best.c0, best.gamma, table)


def _kl_from_differences(differences):
    finite = np.isfinite(differences)
    excluded = int(np.count_nonzero(~finite))
    if excluded:
        logger.warning(f"Excluded {excluded} Monte-Carlo point(s) where the model density is zero")
    kept = differences[finite]
    if kept.size == 0:
        return KLEstimate(float("inf"), float("nan"), 0, excluded)
    se = float(np.std(kept, ddof=1) / np.sqrt(kept.size)) if kept.size > 1 else float("nan")
    return KLEstimate(float(np.mean(kept)), se, int(kept.size), excluded)


def _mc_points(scenario, mc_count, rng):
    if mc_count < MIN_MC_COUNT:
        raise ConfigError(f"Monte-Carlo KL needs at least {MIN_MC_COUNT} draws, got {mc_count}")
    rng = rng if rng is not None else streams.substream(0, streams.MONTE_CARLO)
    points = scenario.sample(rng, mc_count)
    return points, scenario.log_density(points)


def estimate_kl(scenario, ensemble, mc_count, rng=None, original_scale=False):
    """Monte-Carlo KL(truth || model) over draws from the scenario, with its standard error.

    With `original_scale` the scenario draws are read in the units the model was
    trained on (its preprocessing and log-Jacobian apply).
    """
    points, truth = _mc_points(scenario, mc_count, rng)
    return _kl_from_differences(truth - log_density(ensemble, points, original_scale=original_scale))


def kl_trajectory(scenario, ensemble, checkpoints, mc_count, rng=None, original_scale=False):
    """KL estimates of the sub-ensembles made of the first k trees, for each k in `checkpoints`."""
    points, truth = _mc_points(scenario, mc_count, rng)
    prefixes = prefix_log_densities(ensemble, points, checkpoints, original_scale)
    return [_kl_from_differences(truth - row) for row in prefixes]


def predictive_score(ensemble, test, original_scale=False):
    """Mean and SD of the log-density over test rows; rows outside the model box are counted, not scored."""
    test = np.atleast_2d(np.asarray(test, dtype=np.float64))
    if test.shape[0] == 0 or test.size == 0:
        raise DataError("Cannot score an empty test set")
    values = log_density(ensemble, test, original_scale=original_scale)
    finite = np.isfinite(values)
    outside = int(np.count_nonzero(~finite))
    kept = values[finite]
    if kept.size == 0:
        return Score(float("-inf"), float("nan"), 0, outside)
    std = float(np.std(kept, ddof=1)) if kept.size > 1 else 0.0
    return Score(float(np.mean(kept)), std, int(kept.size), outside)
