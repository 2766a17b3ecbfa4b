"""Axis-aligned boxes and recursive dyadic partition trees on the unit cube.

Boxes are half-open, (a_1, b_1] x ... x (a_d, b_d], so every point of the
cube lies in exactly one leaf of a partition tree. Points sitting exactly on
a cut belong to the left child.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from utils.constants import MIN_CHILD_WIDTH

logger = logging.getLogger(__name__)


def _frozen(values):
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Rect:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _frozen(self.lower)
        upper = _frozen(self.upper)
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise ValueError(f"Rect bounds must be matching non-empty vectors, got {lower.shape} and {upper.shape}")
        if not np.all(lower < upper):
            raise ValueError("Rect needs lower < upper in every dimension")
        if lower.min() < 0.0 or upper.max() > 1.0:
            raise ValueError("Rect must lie inside the unit cube")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self):
        return self.lower.size

    def width(self, j):
        return self.upper[j] - self.lower[j]

    def __eq__(self, other):
        if not isinstance(other, Rect):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __repr__(self):
        sides = " x ".join(f"({a:.6g}, {b:.6g}]" for a, b in zip(self.lower, self.upper))
        return f"Rect({sides})"


def unit_cube(d):
    """The d-dimensional unit cube (0, 1]^d."""
    if d < 1:
        raise ValueError(f"Dimension must be at least 1, got {d}")
    return Rect(np.zeros(d), np.ones(d))


def _check_dim(rect, dim):
    if not 0 <= dim < rect.dim:
        raise ValueError(f"Split dimension {dim} out of range for a {rect.dim}-dimensional box")


def cut_point(rect, dim, fraction):
    """Absolute coordinate a + fraction * (b - a) of a cut in `dim`."""
    _check_dim(rect, dim)
    return rect.lower[dim] + fraction * (rect.upper[dim] - rect.lower[dim])


def split_at(rect, dim, cut):
    """Split `rect` at the absolute coordinate `cut` of dimension `dim`."""
    _check_dim(rect, dim)
    a, b = rect.lower[dim], rect.upper[dim]
    if not (cut - a >= MIN_CHILD_WIDTH and b - cut >= MIN_CHILD_WIDTH):
        raise ValueError(f"Cut {cut!r} leaves a child narrower than {MIN_CHILD_WIDTH} in dimension {dim}")
    left_upper = rect.upper.copy()
    left_upper[dim] = cut
    right_lower = rect.lower.copy()
    right_lower[dim] = cut
    return Rect(rect.lower, left_upper), Rect(right_lower, rect.upper)


def split(rect, dim, fraction):
    """Split `rect` in dimension `dim` at the given fraction of its extent."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"Split fraction must lie in (0, 1), got {fraction}")
    return split_at(rect, dim, cut_point(rect, dim, fraction))


def volume(rect):
    """Lebesgue measure of the box."""
    return float(np.prod(rect.upper - rect.lower))


def log_volume(rect):
    return float(np.sum(np.log(rect.upper - rect.lower)))


def contains(rect, x):
    """True iff lower < x <= upper in every coordinate."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != rect.lower.shape:
        raise ValueError(f"Point of shape {x.shape} does not match a {rect.dim}-dimensional box")
    return bool(np.all(rect.lower < x) and np.all(x <= rect.upper))


@dataclass(eq=False)
class SplitNode:
    """A node of a partition tree.

    Interior nodes carry the split (dim, fraction, cut), both children and the
    fitted conditional mass `theta` = G(A_l | A). `count` and
    `empirical_left` record the residuals seen while fitting.
    """
    region: Rect
    dim: Optional[int] = None
    fraction: Optional[float] = None
    cut: Optional[float] = None
    left: Optional["SplitNode"] = None
    right: Optional["SplitNode"] = None
    theta: Optional[float] = None
    count: int = 0
    empirical_left: Optional[float] = None

    @property
    def is_leaf(self):
        return self.left is None

    def divide(self, dim, fraction, cut=None):
        """Turn this leaf into an interior node and return its two children."""
        if not self.is_leaf:
            raise ValueError("Node is already split")
        if not 0.0 < fraction < 1.0:
            raise ValueError(f"Split fraction must lie in (0, 1), got {fraction}")
        if cut is None:
            cut = cut_point(self.region, dim, fraction)
        left, right = split_at(self.region, dim, cut)
        self.dim, self.fraction, self.cut = int(dim), float(fraction), float(cut)
        self.left, self.right = SplitNode(left), SplitNode(right)
        return self.left, self.right

    def child_for(self, x):
        return self.left if x[self.dim] <= self.cut else self.right

    def mu_left(self):
        """Uniform conditional mass mu(A_l | A)."""
        return (self.cut - self.region.lower[self.dim]) / self.region.width(self.dim)

    def iter_nodes(self):
        """Pre-order traversal, left subtree before right."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)


@dataclass(eq=False)
class PartitionTree:
    root: SplitNode
    max_depth: Optional[int] = None
    depth: int = field(init=False)

    def __post_init__(self):
        self.depth = tree_depth(self.root)
        if self.max_depth is not None and self.depth > self.max_depth:
            raise ValueError(f"Tree depth {self.depth} exceeds the configured maximum {self.max_depth}")

    @property
    def dim(self):
        return self.root.region.dim

    def nodes(self):
        return list(self.root.iter_nodes())

    def leaves(self):
        return [node for node in self.root.iter_nodes() if node.is_leaf]

    def interior(self):
        return [node for node in self.root.iter_nodes() if not node.is_leaf]


def tree_depth(root):
    """Number of levels; a root-only tree has depth 1."""
    best = 0
    stack = [(root, 1)]
    while stack:
        node, level = stack.pop()
        best = max(best, level)
        if not node.is_leaf:
            stack.append((node.left, level + 1))
            stack.append((node.right, level + 1))
    return best


def leaf_path(tree, x):
    """Root-to-leaf chain of nodes containing `x`."""
    x = np.asarray(x, dtype=np.float64)
    root = tree.root if isinstance(tree, PartitionTree) else tree
    if not contains(root.region, x):
        raise ValueError(f"Point {x.tolist()} lies outside the unit cube")
    path = [root]
    node = root
    while not node.is_leaf:
        node = node.child_for(x)
        path.append(node)
    return path
