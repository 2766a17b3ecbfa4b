"""Map raw data into the unit cube and smooth out technical ties."""
import logging
from dataclasses import dataclass, field

import numpy as np

from utils.constants import DEFAULT_MARGIN
from utils.errors import DataError

logger = logging.getLogger(__name__)

# Smallest positive double; coordinates equal to 0 are moved here so they lie in (0, 1]
TINY = float(np.nextafter(0.0, 1.0))


def _column_name(names, j):
    return names[j] if names is not None and j < len(names) else f"column {j + 1}"


def check_finite(data, names=None):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError(f"Expected a non-empty 2-d table, got shape {data.shape}")
    bad = ~np.isfinite(data)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(f"{_column_name(names, col)} has a non-finite value at row {row + 1}")
    return data


def into_cube(points):
    """Clip into (0, 1], moving exact zeros to the smallest positive double."""
    return np.clip(points, TINY, 1.0)


@dataclass
class PreprocessRecord:
    """Affine min-max scaling of each column onto (0, 1], widened by `margin` on both sides."""
    minimum: np.ndarray
    maximum: np.ndarray
    margin: float = 0.0
    jitter_applied: list = field(default_factory=list)

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if not self.jitter_applied:
            self.jitter_applied = [False] * self.minimum.size

    @classmethod
    def identity(cls, d):
        return cls(np.zeros(d), np.ones(d), 0.0)

    @property
    def dim(self):
        return self.minimum.size

    @property
    def span(self):
        return (1.0 + 2.0 * self.margin) * (self.maximum - self.minimum)

    @property
    def offset(self):
        return self.minimum - self.margin * (self.maximum - self.minimum)

    @property
    def log_jacobian(self):
        return float(-np.sum(np.log(self.span)))

    def transform(self, data):
        """Scale new rows; returns (scaled, inside) where `inside` flags rows within the expanded box."""
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        if data.shape[1] != self.dim:
            raise DataError(f"Data has {data.shape[1]} columns but the model expects {self.dim}")
        scaled = (data - self.offset) / self.span
        inside = np.all((scaled >= 0.0) & (scaled <= 1.0), axis=1) & np.all(np.isfinite(data), axis=1)
        return into_cube(scaled), inside

    def inverse_transform(self, scaled):
        return np.asarray(scaled, dtype=np.float64) * self.span + self.offset

    def to_dict(self):
        return {
            "minimum": [float(v) for v in self.minimum],
            "maximum": [float(v) for v in self.maximum],
            "margin": float(self.margin),
            "jitter_applied": [bool(v) for v in self.jitter_applied],
            "log_jacobian": self.log_jacobian,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(payload["minimum"], payload["maximum"], payload["margin"], list(payload["jitter_applied"]))


def minmax_scale(data, margin=DEFAULT_MARGIN, names=None):
    """Scale training data into (0, 1]^d and return (scaled, record)."""
    data = check_finite(data, names)
    if data.shape[0] < 2:
        raise DataError("Scaling needs at least 2 rows")
    if margin < 0.0:
        raise DataError(f"margin must be non-negative, got {margin}")
    minimum, maximum = data.min(axis=0), data.max(axis=0)
    constant = np.flatnonzero(maximum <= minimum)
    if constant.size:
        raise DataError(f"{_column_name(names, constant[0])} is constant and cannot be scaled")
    record = PreprocessRecord(minimum, maximum, margin)
    scaled, _ = record.transform(data)
    logger.info(f"Scaled {data.shape[0]} rows x {data.shape[1]} columns into the unit cube (margin {margin})")
    return scaled, record


def jitter_ties(column, rng):
    """Spread tied values uniformly over the half-gaps to their distinct neighbours.

    A value x tied between x_- < x < x_+ moves within (x - (x - x_-)/2, x + (x_+ - x)/2).
    The smallest and largest values have one neighbour only; their noise stays on
    that side, within half the gap.
    """
    column = np.asarray(column, dtype=np.float64)
    values, inverse, counts = np.unique(column, return_inverse=True, return_counts=True)
    if values.size < 2:
        raise DataError("Cannot jitter a column whose values are all identical")
    if not np.any(counts > 1):
        return column.copy()
    gaps = np.diff(values)
    below = np.concatenate([[0.0], gaps]) / 2.0
    above = np.concatenate([gaps, [0.0]]) / 2.0
    tied = counts[inverse] > 1
    out = column.copy()
    idx = np.flatnonzero(tied)
    slot = inverse[idx]
    out[idx] = column[idx] + rng.uniform(-below[slot], above[slot])
    logger.debug(f"Jittered {idx.size} tied values across {np.count_nonzero(counts > 1)} distinct levels")
    return out


def jitter_table(data, rng, names=None):
    """Jitter every column that has ties; returns (data, per-column flags)."""
    data = check_finite(data, names)
    out = data.copy()
    flags = []
    for j in range(data.shape[1]):
        has_ties = np.unique(data[:, j]).size < data.shape[0]
        if has_ties:
            try:
                out[:, j] = jitter_ties(data[:, j], rng)
            except DataError as e:
                raise DataError(f"{_column_name(names, j)}: {e}") from e
        flags.append(bool(has_ties))
    logger.info(f"Tie jitter applied to {sum(flags)} of {len(flags)} columns")
    return out, flags
