"""Forward-stagewise fitting of additive tree ensembles.

The ensemble F = G_1 + ... + G_K ("+" being tree-CDF composition) is grown one
weak learner at a time: fit G_k to the current residuals, then residualize
them through G_k's tree-CDF. Stage 1 fits each margin with trees restricted
to one dimension; stage 2 fits the remaining dependence (the copula) with
unrestricted trees.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from boosting.tree_cdf import forward_batch, inverse_batch, log_density_batch
from boosting.weak_learner import LearnerConfig, fit_measure
from pipeline.preprocess import PreprocessRecord, into_cube
from utils import rng as streams
from utils.constants import EARLY_STOP_WINDOW, TREES_COPULA, TREES_PER_MARGIN
from utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass
class FitConfig:
    c0: float = 0.1
    gamma: float = 0.1
    trees_per_margin: int = TREES_PER_MARGIN
    trees_copula: int = TREES_COPULA
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    seed: int = 0
    two_stage: bool = True
    early_stop_threshold: float = 0.0
    early_stop_window: int = EARLY_STOP_WINDOW

    def validate(self):
        if not 0.0 < self.c0 <= 1.0:
            raise ConfigError(f"c0 must lie in (0, 1], got {self.c0}")
        if self.gamma < 0.0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        if self.trees_per_margin < 0 or self.trees_copula < 0:
            raise ConfigError("Tree counts must be non-negative")
        if self.early_stop_window < 1:
            raise ConfigError(f"early_stop_window must be at least 1, got {self.early_stop_window}")
        self.learner.validate()
        return self

    def to_dict(self):
        return {
            "c0": self.c0,
            "gamma": self.gamma,
            "trees_per_margin": self.trees_per_margin,
            "trees_copula": self.trees_copula,
            "seed": self.seed,
            "two_stage": self.two_stage,
            "early_stop_threshold": self.early_stop_threshold,
            "early_stop_window": self.early_stop_window,
            "learner": {
                "grid_size": self.learner.grid_size,
                "stop_prior": self.learner.stop_prior,
                "max_depth": self.learner.max_depth,
                "min_count": self.learner.min_count,
                "strategy": self.learner.strategy,
            },
        }

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        learner = LearnerConfig(**payload.pop("learner"))
        return cls(learner=learner, **payload)


@dataclass
class Ensemble:
    """An additive ensemble of tree measures in fitting order."""
    dim: int
    measures: list = field(default_factory=list)
    improvements: list = field(default_factory=list)
    importance: Optional[np.ndarray] = None
    preprocess: Optional[PreprocessRecord] = None
    config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.importance is None:
            self.importance = np.zeros(self.dim)
        if self.preprocess is None:
            self.preprocess = PreprocessRecord.identity(self.dim)

    def __len__(self):
        return len(self.measures)

    @property
    def training_log_density(self):
        """Training mean log-density, the sum of the per-tree improvements."""
        return float(np.sum(self.improvements))

    def importance_share(self):
        total = float(np.sum(self.importance))
        if total == 0.0:
            return np.zeros(self.dim)
        return self.importance / total

    def stage_summary(self):
        """Tree counts and improvement totals per stage (one marginal stage per dimension, then copula)."""
        rows = {}
        for measure, gain in zip(self.measures, self.improvements):
            key = "copula" if measure.restriction is None else f"margin {measure.restriction + 1}"
            row = rows.setdefault(key, {"stage": key, "trees": 0, "improvement": 0.0})
            row["trees"] += 1
            row["improvement"] += gain
        return list(rows.values())


def improvement(measure, residuals):
    """D_k: mean log-density of the k-th tree over the pre-update residuals."""
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.shape[0] == 0:
        return 0.0
    return float(np.mean(log_density_batch(measure, residuals)))


def importance_contribution(measure, total):
    """Per-dimension split of a tree's improvement, from the counts recorded while fitting.

    `total` is the number of residuals the tree was fitted on.
    """
    contribution = np.zeros(measure.dim)
    if total == 0:
        return contribution
    for node in measure.tree.interior():
        if node.count == 0:
            continue
        mu_left = node.mu_left()
        share_left = node.empirical_left
        gain = share_left * np.log(node.theta / mu_left) if share_left > 0 else 0.0
        if share_left < 1:
            gain += (1.0 - share_left) * np.log((1.0 - node.theta) / (1.0 - mu_left))
        contribution[node.dim] += node.count / total * gain
    return contribution


class StagewiseBooster:
    """Holds the residuals and the growing ensemble during one fit."""

    def __init__(self, data, config, rng=None, preprocess=None):
        self.config = config.validate()
        self.residuals = _check_cube(data)
        self.n, self.dim = self.residuals.shape
        self.rng = rng if rng is not None else streams.substream(config.seed, streams.FIT)
        self.ensemble = Ensemble(self.dim, preprocess=preprocess, config=config)

    def step(self, learner):
        """Fit one tree to the current residuals and push them through its tree-CDF."""
        measure = fit_measure(self.residuals, learner, self.config.c0, self.config.gamma, self.rng)
        gain = improvement(measure, self.residuals)
        self.ensemble.importance += importance_contribution(measure, self.n)
        self.residuals = into_cube(forward_batch(measure, self.residuals))
        self.ensemble.measures.append(measure)
        self.ensemble.improvements.append(gain)
        logger.debug(f"Tree {len(self.ensemble)}: {measure.node_count()} nodes, improvement {gain:.6g}")
        return gain

    def run_margins(self):
        """Stage 1: trees restricted to one dimension, all trees of a dimension before the next."""
        for j in range(self.dim):
            learner = self.config.learner.restricted_to(j)
            total = sum(self.step(learner) for _ in range(self.config.trees_per_margin))
            logger.info(f"Margin {j + 1}/{self.dim}: {self.config.trees_per_margin} trees, improvement {total:.6f}")

    def run_copula(self, n_trees):
        """Stage 2: unrestricted trees, with the optional sliding-window early stop."""
        learner = self.config.learner
        window = self.config.early_stop_window
        threshold = self.config.early_stop_threshold
        gains = []
        for _ in range(n_trees):
            gains.append(self.step(learner))
            if threshold > 0 and len(gains) >= window and np.mean(gains[-window:]) < threshold:
                logger.warning(f"Stopping early after {len(gains)} trees: mean improvement over the "
                               f"last {window} fell below {threshold}")
                break
        logger.info(f"Copula stage: {len(gains)} trees, improvement {sum(gains):.6f}")

    def run(self):
        start = time.time()
        if self.config.two_stage:
            self.run_margins()
        self.run_copula(self.config.trees_copula)
        logger.info(f"Fitted {len(self.ensemble)} trees on {self.n} points in {time.time() - start:.1f}s; "
                    f"training mean log-density {self.ensemble.training_log_density:.6f}")
        return self.ensemble


def _check_cube(data):
    points = np.array(data, dtype=np.float64, copy=True)
    if points.ndim != 2 or points.shape[0] == 0:
        raise DataError(f"Expected a non-empty batch of points, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise DataError("Data contains non-finite coordinates")
    if points.min() < 0.0 or points.max() > 1.0:
        raise DataError("Data must lie in the unit cube; scale it first")
    return into_cube(points)


def fit(data, config=None, rng=None, preprocess=None):
    """Fit an additive tree ensemble to points in the unit cube."""
    config = config or FitConfig()
    return StagewiseBooster(data, config, rng, preprocess).run()


def residualize(ensemble, x, upto=None):
    """Push points through the first `upto` tree-CDFs in fitting order."""
    upto = len(ensemble) if upto is None else upto
    if not 0 <= upto <= len(ensemble):
        raise ValueError(f"upto must lie in [0, {len(ensemble)}], got {upto}")
    points = np.asarray(x, dtype=np.float64)
    single = points.ndim == 1
    out = np.atleast_2d(points)
    for measure in ensemble.measures[:upto]:
        out = into_cube(forward_batch(measure, out))
    return out[0] if single else out


def _cube_points(ensemble, x, original_scale):
    points = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if points.shape[1] != ensemble.dim:
        raise DataError(f"Points have {points.shape[1]} coordinates but the model expects {ensemble.dim}")
    if original_scale:
        return ensemble.preprocess.transform(points)
    finite = np.all(np.isfinite(points), axis=1)
    inside = finite & np.all((points >= 0.0) & (points <= 1.0), axis=1)
    return into_cube(np.where(finite[:, None], points, 0.5)), inside


def prefix_log_densities(ensemble, x, checkpoints, original_scale=False):
    """log f of the sub-ensembles made of the first k trees, for each k in `checkpoints`.

    Returns an array of shape (len(checkpoints), n); points outside the cube
    (or outside the preprocessing box) get -inf.
    """
    checkpoints = [int(k) for k in checkpoints]
    if any(k < 0 or k > len(ensemble) for k in checkpoints):
        raise ValueError(f"Checkpoints must lie in [0, {len(ensemble)}]")
    points, inside = _cube_points(ensemble, x, original_scale)
    out = np.empty((len(checkpoints), points.shape[0]))
    total = np.zeros(points.shape[0])
    last = max(checkpoints, default=0)

    def record(k):
        for row, wanted in enumerate(checkpoints):
            if wanted == k:
                out[row] = total

    record(0)
    for k, measure in enumerate(ensemble.measures[:last], start=1):
        total = total + log_density_batch(measure, points)
        points = into_cube(forward_batch(measure, points))
        record(k)
    if original_scale:
        out += ensemble.preprocess.log_jacobian
    out[:, ~inside] = -np.inf
    return out


def log_density(ensemble, x, original_scale=False):
    """Analytic log-density: the sum of each tree's log-density at the running residual."""
    single = np.asarray(x).ndim == 1
    values = prefix_log_densities(ensemble, x, [len(ensemble)], original_scale)[0]
    outside = int(np.count_nonzero(np.isneginf(values)))
    if outside:
        logger.warning(f"{outside} point(s) lie outside the model's support box; their log-density is -inf")
    return float(values[0]) if single else values


def sample(ensemble, count, rng=None, original_scale=False):
    """Draw `count` points by pushing uniforms through the inverse tree-CDFs, last tree first."""
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    rng = rng if rng is not None else streams.substream(ensemble.config.seed, streams.SAMPLING)
    draws = 1.0 - rng.random((count, ensemble.dim))
    for measure in reversed(ensemble.measures):
        draws = into_cube(inverse_batch(measure, draws))
    if original_scale:
        return ensemble.preprocess.inverse_transform(draws)
    return draws
