"""Two-dimensional simulation scenarios with known densities on the unit square.

A: correlated normal centred in the square (smooth, one mode).
B: four-component mixture of Beta products (smooth, several modes).
C: equal mixture of three uniform boxes (axis-aligned discontinuities).
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

NORMAL_MEAN = np.array([0.5, 0.5])
NORMAL_COV = np.array([[1.0, 0.95], [0.95, 1.0]]) / 64.0

BETA_WEIGHTS = np.array([0.1, 0.3, 0.3, 0.3])
BETA_PARAMS = (  # ((a1, b1), (a2, b2)) per component
    ((1.0, 1.0), (1.0, 1.0)),
    ((15.0, 45.0), (15.0, 45.0)),
    ((45.0, 15.0), (22.5, 37.5)),
    ((37.5, 22.5), (45.0, 15.0)),
)

BOX_WEIGHTS = np.full(3, 1.0 / 3.0)
BOXES = (  # ((low1, high1), (low2, high2)); membership is low <= x < high
    ((0.10, 0.45), (0.35, 0.90)),
    ((0.20, 0.80), (0.45, 0.50)),
    ((0.70, 0.90), (0.05, 0.60)),
)


@dataclass(frozen=True)
class Scenario:
    name: str
    n: int
    description: str
    dim: int = 2

    def sample(self, rng, n=None):
        n = self.n if n is None else int(n)
        if n < 1:
            raise ConfigError(f"Scenario {self.name} needs a sample size of at least 1, got {n}")
        return _SAMPLERS[self.name](rng, n)

    def log_density(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return _LOG_DENSITIES[self.name](points)


def _sample_normal(rng, n):
    # Rejection keeps the draws in the cube; the normal puts about 6e-5 of its mass outside.
    kept = []
    remaining = n
    while remaining > 0:
        draws = rng.multivariate_normal(NORMAL_MEAN, NORMAL_COV, size=remaining + 16)
        draws = draws[np.all((draws > 0.0) & (draws <= 1.0), axis=1)][:remaining]
        kept.append(draws)
        remaining -= draws.shape[0]
    return np.concatenate(kept)


def _log_density_normal(points):
    return np.atleast_1d(stats.multivariate_normal(NORMAL_MEAN, NORMAL_COV).logpdf(points))


def _sample_beta(rng, n):
    component = rng.choice(len(BETA_WEIGHTS), size=n, p=BETA_WEIGHTS)
    params = np.array(BETA_PARAMS)
    first = rng.beta(params[component, 0, 0], params[component, 0, 1])
    second = rng.beta(params[component, 1, 0], params[component, 1, 1])
    return np.column_stack([first, second])


def _log_density_beta(points):
    terms = [
        np.log(w) + stats.beta.logpdf(points[:, 0], *p1) + stats.beta.logpdf(points[:, 1], *p2)
        for w, (p1, p2) in zip(BETA_WEIGHTS, BETA_PARAMS)
    ]
    return logsumexp(np.vstack(terms), axis=0)


def _box_volume(box):
    return (box[0][1] - box[0][0]) * (box[1][1] - box[1][0])


def _sample_boxes(rng, n):
    component = rng.choice(len(BOX_WEIGHTS), size=n, p=BOX_WEIGHTS)
    boxes = np.array(BOXES)
    low, high = boxes[component, :, 0], boxes[component, :, 1]
    return low + (high - low) * rng.random((n, 2))


def _log_density_boxes(points):
    density = np.zeros(points.shape[0])
    for w, box in zip(BOX_WEIGHTS, BOXES):
        inside = np.all([(points[:, j] >= box[j][0]) & (points[:, j] < box[j][1]) for j in range(2)], axis=0)
        density += np.where(inside, w / _box_volume(box), 0.0)
    with np.errstate(divide="ignore"):
        return np.log(density)


_SAMPLERS = {"A": _sample_normal, "B": _sample_beta, "C": _sample_boxes}
_LOG_DENSITIES = {"A": _log_density_normal, "B": _log_density_beta, "C": _log_density_boxes}

SCENARIOS = {
    "A": Scenario("A", 1000, "bivariate normal, mean (1/2, 1/2), sd 1/8, correlation 0.95"),
    "B": Scenario("B", 5000, "mixture of four Beta products"),
    "C": Scenario("C", 2000, "equal mixture of three uniform boxes"),
}


def scenario_names():
    return sorted(SCENARIOS)


def get_scenario(name):
    try:
        return SCENARIOS[str(name).upper()]
    except KeyError:
        raise ConfigError(f"Unknown scenario {name!r}; choose from {', '.join(scenario_names())}") from None


def scenario(chosen, rng, n=None):
    """Draw a data set from a scenario; returns (samples, true log-density evaluator)."""
    chosen = chosen if isinstance(chosen, Scenario) else get_scenario(chosen)
    samples = chosen.sample(rng, n)
    logger.info(f"Simulated {samples.shape[0]} points from scenario {chosen.name} ({chosen.description})")
    return samples, chosen.log_density
