"""Stochastic top-down tree learner for one boosting iteration.

Each active node compares "stop here" against every (dimension, grid cut)
split using prior x marginal likelihood:

    stop:   P(S=1) * mu(A)^-n(A)
    split:  P(S=0, D=j, L=l/N_L) * Be(t0 + n_l, 1 - t0 + n_r) / Be(t0, 1 - t0)
            * mu(A_l)^-n_l * mu(A_r)^-n_r,      t0 = mu(A_l) / mu(A)

and either samples a decision in proportion to these scores or, with the
greedy strategy, takes the best one. The fitted tree is then shrunk toward the
uniform conditional with a scale-dependent learning rate.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import betaln, logsumexp

from boosting.geometry import PartitionTree, SplitNode, log_volume, unit_cube
from boosting.tree_cdf import TreeMeasure
from utils.constants import GRID_SIZE, MAX_DEPTH, MIN_CHILD_WIDTH, MIN_COUNT, STOP_PRIOR, STRATEGIES
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

STOP = -1


@dataclass
class LearnerConfig:
    grid_size: int = GRID_SIZE
    stop_prior: float = STOP_PRIOR
    max_depth: int = MAX_DEPTH
    min_count: int = MIN_COUNT
    dim_restriction: Optional[int] = None
    strategy: str = "stochastic"

    def validate(self):
        if self.grid_size < 2:
            raise ConfigError(f"grid_size must be at least 2, got {self.grid_size}")
        if not 0.0 < self.stop_prior < 1.0:
            raise ConfigError(f"stop_prior must lie in (0, 1), got {self.stop_prior}")
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be at least 1, got {self.max_depth}")
        if self.min_count < 0:
            raise ConfigError(f"min_count must be non-negative, got {self.min_count}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"Unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        return self

    def restricted_to(self, dim):
        return replace(self, dim_restriction=dim)


@dataclass
class SplitCandidate:
    dim: int
    loc_index: int
    log_score: float = float("nan")

    def fraction(self, grid_size):
        return self.loc_index / grid_size


def log_beta_ratio(theta0, n_left, n_right):
    """log of Be(t0 + n_l, 1 - t0 + n_r) / Be(t0, 1 - t0)."""
    return betaln(theta0 + n_left, 1.0 - theta0 + n_right) - betaln(theta0, 1.0 - theta0)


def _split_prior(config, d):
    d_eff = 1 if config.dim_restriction is not None else d
    return math.log(1.0 - config.stop_prior) - math.log(d_eff * (config.grid_size - 1))


def score_stop(node, config):
    return math.log(config.stop_prior) - node.count * log_volume(node.region)


def _split_scores(log_prior, theta0, n_left, n_right, log_vol_left, log_vol_right):
    return (log_prior + log_beta_ratio(theta0, n_left, n_right)
            - n_left * log_vol_left - n_right * log_vol_right)


def score_split(node, candidate, residuals, config):
    """Log score of one split candidate for the residuals inside `node`."""
    region = node.region
    a, b = region.lower[candidate.dim], region.upper[candidate.dim]
    cut = a + candidate.fraction(config.grid_size) * (b - a)
    if cut - a < MIN_CHILD_WIDTH or b - cut < MIN_CHILD_WIDTH:
        raise ValueError(f"Candidate {candidate} produces a degenerate child")
    points = np.asarray(residuals, dtype=np.float64).reshape(-1, region.dim)
    n_left = int(np.count_nonzero(points[:, candidate.dim] <= cut))
    n_right = points.shape[0] - n_left
    base = log_volume(region) - math.log(b - a)
    return float(_split_scores(
        _split_prior(config, region.dim), (cut - a) / (b - a), n_left, n_right,
        base + math.log(cut - a), base + math.log(b - cut),
    ))


def posterior_stop_probability(stop_score, split_scores):
    scores = np.concatenate([[stop_score], np.asarray(split_scores, dtype=np.float64)])
    return float(np.exp(stop_score - logsumexp(scores)))


def draw_decision(stop_score, split_scores, rng, greedy=False):
    """Index of the chosen split, or STOP."""
    scores = np.concatenate([[stop_score], np.asarray(split_scores, dtype=np.float64)])
    if greedy:
        choice = int(np.argmax(scores))
    else:
        weights = np.exp(scores - scores.max())
        choice = int(rng.choice(scores.size, p=weights / weights.sum()))
    return STOP if choice == 0 else choice - 1


def sample_decision(stop_score, candidates, rng, greedy=False):
    """Pick stop (None) or one of `candidates` in proportion to exp(log_score)."""
    choice = draw_decision(stop_score, [c.log_score for c in candidates], rng, greedy)
    return None if choice == STOP else candidates[choice]


def _node_candidates(node, points, config):
    """Vectorized scores of every (dim, loc) candidate of a node.

    Returns flat arrays (dims, locs, cuts, n_left, scores); degenerate cuts
    score -inf.
    """
    region = node.region
    d = region.dim
    grid = config.grid_size
    dims = [config.dim_restriction] if config.dim_restriction is not None else range(d)
    log_prior = _split_prior(config, d)
    node_log_volume = log_volume(region)
    fractions = np.arange(1, grid) / grid
    out_dims, out_locs, out_cuts, out_left, out_scores = [], [], [], [], []
    for j in dims:
        a, b = region.lower[j], region.upper[j]
        cuts = a + fractions * (b - a)
        # bucket counts: position i means cuts[i-1] < x <= cuts[i]
        buckets = np.searchsorted(cuts, points[:, j], side="left")
        n_left = np.cumsum(np.bincount(buckets, minlength=grid))[: grid - 1]
        n_right = points.shape[0] - n_left
        valid = (cuts - a >= MIN_CHILD_WIDTH) & (b - cuts >= MIN_CHILD_WIDTH)
        base = node_log_volume - math.log(b - a)
        with np.errstate(divide="ignore", invalid="ignore"):
            scores = _split_scores(
                log_prior, (cuts - a) / (b - a), n_left, n_right,
                base + np.log(cuts - a), base + np.log(b - cuts),
            )
        scores = np.where(valid, scores, -np.inf)
        out_dims.append(np.full(grid - 1, j))
        out_locs.append(np.arange(1, grid))
        out_cuts.append(cuts)
        out_left.append(n_left)
        out_scores.append(scores)
    return (np.concatenate(out_dims), np.concatenate(out_locs), np.concatenate(out_cuts),
            np.concatenate(out_left), np.concatenate(out_scores))


def fit_tree(residuals, config, rng):
    """Grow one partition tree on `residuals` top-down, recording counts on every node."""
    config.validate()
    points = np.asarray(residuals, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"Residuals must be a 2-d batch, got shape {points.shape}")
    root = SplitNode(unit_cube(points.shape[1]))
    root.count = points.shape[0]
    if points.shape[0] == 0:
        return PartitionTree(root, config.max_depth)
    greedy = config.strategy == "greedy"

    def grow(node, inside, depth):
        node.count = inside.shape[0]
        if depth >= config.max_depth or node.count < config.min_count:
            return
        dims, locs, cuts, n_left, scores = _node_candidates(node, inside, config)
        choice = draw_decision(score_stop(node, config), scores, rng, greedy)
        if choice == STOP:
            return
        dim, cut = int(dims[choice]), float(cuts[choice])
        left, right = node.divide(dim, locs[choice] / config.grid_size, cut)
        node.empirical_left = n_left[choice] / node.count if node.count else node.mu_left()
        mask = inside[:, dim] <= cut
        grow(left, inside[mask], depth + 1)
        grow(right, inside[~mask], depth + 1)

    grow(root, points, 1)
    return PartitionTree(root, config.max_depth)


def learning_rate(c0, gamma, region):
    """c(A) = c0 * (1 - log2 vol(A))^-gamma; equals c0 at the root and shrinks with depth."""
    return c0 * (1.0 - log_volume(region) / math.log(2.0)) ** (-gamma)


def apply_shrinkage(tree, c0, gamma, restriction=None):
    """Shrink each node's empirical conditional toward the uniform one and return the measure."""
    if not 0.0 < c0 <= 1.0:
        raise ConfigError(f"c0 must lie in (0, 1], got {c0}")
    if gamma < 0.0:
        raise ConfigError(f"gamma must be non-negative, got {gamma}")
    for node in tree.interior():
        mu_left = node.mu_left()
        if node.count == 0 or node.empirical_left is None:
            node.empirical_left = mu_left
        rate = learning_rate(c0, gamma, node.region)
        node.theta = (1.0 - rate) * mu_left + rate * node.empirical_left
    return TreeMeasure(tree, restriction)


def fit_measure(residuals, config, c0, gamma, rng):
    tree = fit_tree(residuals, config, rng)
    measure = apply_shrinkage(tree, c0, gamma, config.dim_restriction)
    logger.debug(f"Fitted tree with {measure.node_count()} nodes, depth {measure.depth}")
    return measure
