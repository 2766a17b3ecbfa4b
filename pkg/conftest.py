"""Shared fixtures: seeded generators and random tree measures."""
import os

import numpy as np
import pytest

from boosting.geometry import PartitionTree, SplitNode, unit_cube
from boosting.tree_cdf import TreeMeasure


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-schedule protocol runs (set TREEBOOST_SLOW_TESTS=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("TREEBOOST_SLOW_TESTS") == "1":
        return
    skip = pytest.mark.skip(reason="set TREEBOOST_SLOW_TESTS=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def random_measure(rng, d=2, max_depth=8, split_prob=0.8, low=0.05, high=0.95, fractions=None):
    """A random tree measure; fractions and thetas are uniform on (low, high) unless `fractions` is given."""
    root = SplitNode(unit_cube(d))

    def grow(node, depth):
        if depth >= max_depth or rng.random() > split_prob:
            return
        fraction = float(rng.choice(fractions)) if fractions is not None else float(rng.uniform(low, high))
        left, right = node.divide(int(rng.integers(d)), fraction)
        node.theta = float(rng.uniform(low, high))
        node.count = 0
        node.empirical_left = node.theta
        grow(left, depth + 1)
        grow(right, depth + 1)

    grow(root, 1)
    return TreeMeasure(PartitionTree(root))


def single_split(d, dim, fraction, theta):
    """Measure with one split of the root."""
    root = SplitNode(unit_cube(d))
    root.divide(dim, fraction)
    root.theta = theta
    root.empirical_left = theta
    return TreeMeasure(PartitionTree(root))


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


@pytest.fixture
def make_measure():
    return random_measure
