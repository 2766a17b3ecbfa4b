"""Tree-CDFs of conditionally uniform tree measures.

A TreeMeasure is a partition tree whose interior nodes carry the conditional
mass theta = G(A_l | A); within each leaf the measure is uniform. Its tree-CDF
is the composition of per-node local moves along the branch holding a point,
finest node first. Applying it "subtracts" the measure from an observation,
and its inverse turns uniform draws into draws from the measure.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from boosting.geometry import PartitionTree, Rect, SplitNode, contains, leaf_path, unit_cube
from utils.constants import THETA_CLAMP

logger = logging.getLogger(__name__)


def clamp_theta(theta):
    return float(min(max(theta, THETA_CLAMP), 1.0 - THETA_CLAMP))


def _node_constants(node):
    a = node.region.lower[node.dim]
    b = node.region.upper[node.dim]
    c = node.cut
    width = b - a
    return a, b, c, (c - a) / width, (b - c) / width


def _move_values(node, values, left_mask):
    a, b, c, mu_l, mu_r = _node_constants(node)
    theta = node.theta
    out = np.where(
        left_mask,
        a + (values - a) * (theta / mu_l),
        b - (b - values) * ((1.0 - theta) / mu_r),
    )
    return np.clip(out, a, b)


def _unmove_values(node, values):
    a, b, c, _, _ = _node_constants(node)
    theta = node.theta
    z = (values - a) / (b - a)
    out = np.where(
        values <= a + theta * (b - a),
        a + (c - a) * (z / theta),
        c + (b - c) * ((z - theta) / (1.0 - theta)),
    )
    return np.clip(out, a, b)


def _as_points(x, d):
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = np.atleast_2d(arr)
    if batch.ndim != 2 or batch.shape[1] != d:
        raise ValueError(f"Expected points with {d} coordinates, got shape {arr.shape}")
    return batch, single


def _check_region(region, points):
    if not (np.all(points > region.lower) and np.all(points <= region.upper)):
        raise ValueError(f"Point lies outside the node region {region!r}")


def local_move(node, x):
    """Local move G_A of an interior node applied to one point or a batch."""
    if node.is_leaf:
        raise ValueError("Local moves are defined on interior nodes only")
    points, single = _as_points(x, node.region.dim)
    _check_region(node.region, points)
    out = points.copy()
    column = points[:, node.dim]
    out[:, node.dim] = _move_values(node, column, column <= node.cut)
    return out[0] if single else out


def local_move_inverse(node, y):
    """Inverse of `local_move` on the node's region."""
    if node.is_leaf:
        raise ValueError("Local moves are defined on interior nodes only")
    points, single = _as_points(y, node.region.dim)
    _check_region(node.region, points)
    out = points.copy()
    out[:, node.dim] = _unmove_values(node, points[:, node.dim])
    return out[0] if single else out


@dataclass(eq=False)
class TreeMeasure:
    """A conditionally uniform measure on the leaves of `tree`.

    `restriction` is set for marginal (stage 1) trees, whose splits all use
    that one dimension.
    """
    tree: PartitionTree
    restriction: Optional[int] = None

    def __post_init__(self):
        for node in self.tree.interior():
            if node.theta is None:
                raise ValueError("Every interior node needs a fitted theta")
            node.theta = clamp_theta(node.theta)
            if self.restriction is not None and node.dim != self.restriction:
                raise ValueError(f"Split on dimension {node.dim} in a tree restricted to {self.restriction}")

    @classmethod
    def uniform(cls, d, restriction=None):
        """The zero measure: uniform on the cube, identity tree-CDF."""
        return cls(PartitionTree(SplitNode(unit_cube(d))), restriction)

    @property
    def dim(self):
        return self.tree.dim

    @property
    def depth(self):
        return self.tree.depth

    def node_count(self):
        return len(self.tree.nodes())

    def leaf_paths(self):
        """Yield (leaf, [(ancestor, went_left), ...]) with ancestors root first."""
        stack = [(self.tree.root, [])]
        while stack:
            node, path = stack.pop()
            if node.is_leaf:
                yield node, path
                continue
            stack.append((node.right, path + [(node, False)]))
            stack.append((node.left, path + [(node, True)]))

    def leaf_mass(self, path):
        """G(A) of a leaf as the product of conditional masses along its path."""
        log_mass = 0.0
        for node, went_left in path:
            log_mass += np.log(node.theta if went_left else 1.0 - node.theta)
        return float(np.exp(log_mass))

    def leaf_image(self, leaf, path):
        """Forward image of a leaf box, obtained by moving its corners along the fixed path."""
        lower = leaf.region.lower.copy()
        upper = leaf.region.upper.copy()
        for node, went_left in reversed(path):
            branch = np.array([went_left])
            lower[node.dim] = _move_values(node, np.array([lower[node.dim]]), branch)[0]
            upper[node.dim] = _move_values(node, np.array([upper[node.dim]]), branch)[0]
        return Rect(lower, upper)


def forward_batch(measure, points):
    """Tree-CDF of every row of `points` (fine-to-coarse moves along each row's fixed path)."""
    out = np.array(points, dtype=np.float64, copy=True)

    def visit(node, idx):
        if node.is_leaf or idx.size == 0:
            return
        left_mask = out[idx, node.dim] <= node.cut
        visit(node.left, idx[left_mask])
        visit(node.right, idx[~left_mask])
        out[idx, node.dim] = _move_values(node, out[idx, node.dim], left_mask)

    visit(measure.tree.root, np.arange(out.shape[0]))
    return out


def inverse_batch(measure, points):
    """Inverse tree-CDF of every row (coarse-to-fine, re-locating after each level)."""
    out = np.array(points, dtype=np.float64, copy=True)

    def visit(node, idx):
        if node.is_leaf or idx.size == 0:
            return
        out[idx, node.dim] = _unmove_values(node, out[idx, node.dim])
        left_mask = out[idx, node.dim] <= node.cut
        visit(node.left, idx[left_mask])
        visit(node.right, idx[~left_mask])

    visit(measure.tree.root, np.arange(out.shape[0]))
    return out


def log_density_batch(measure, points):
    """log g(x) for every row: sum of log(G(child | A) / mu(child | A)) along the path."""
    points = np.asarray(points, dtype=np.float64)
    result = np.zeros(points.shape[0])

    def visit(node, idx):
        if node.is_leaf or idx.size == 0:
            return
        _, _, _, mu_l, mu_r = _node_constants(node)
        left_mask = points[idx, node.dim] <= node.cut
        left, right = idx[left_mask], idx[~left_mask]
        result[left] += np.log(node.theta / mu_l)
        result[right] += np.log((1.0 - node.theta) / mu_r)
        visit(node.left, left)
        visit(node.right, right)

    visit(measure.tree.root, np.arange(points.shape[0]))
    return result


def _single(measure, x):
    x = np.asarray(x, dtype=np.float64)
    if not contains(measure.tree.root.region, x):
        raise ValueError(f"Point {x.tolist()} lies outside the unit cube")
    return x[None, :]


def forward(measure, x):
    return forward_batch(measure, _single(measure, x))[0]


def inverse(measure, u):
    return inverse_batch(measure, _single(measure, u))[0]


def log_density(measure, x):
    return float(log_density_batch(measure, _single(measure, x))[0])


def forward_by_levels(measure, x):
    """Reference tree-CDF for one point: apply the local move of each ancestor, deepest first."""
    path = leaf_path(measure.tree, x)
    point = np.asarray(x, dtype=np.float64).copy()
    for node in reversed(path[:-1]):
        point = local_move(node, point)
    return point
