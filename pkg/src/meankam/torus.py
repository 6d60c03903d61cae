"""Geometry of monotone particle configurations on the circle.

A configuration is a sorted lift of n circle particles to the real line.
Two quotients matter: identifying lifts that differ by a common integer
(and, at finite n, a cyclic relabeling) gives the class space; forgetting
the labeling entirely gives the space of empirical measures, metrized by
the quadratic Wasserstein distance on the circle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArityError, DimensionMismatchError, ValidationError

SORT_TOL = 1e-12
SPREAD_LIMIT = 1.0
SPREAD_LIMIT_WIDE = 3.0


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("configuration needs a non-empty 1-d point sequence")
    return arr


@dataclass(frozen=True)
class Configuration:
    """Sorted lift of n circle particles.

    ``points`` is non-decreasing and has spread ``points[-1] - points[0]``
    at most 1 (ordinary monotone configurations) or at most 3 when
    ``wide=True`` (the relaxed class used at interior nodes during
    optimization).
    """

    points: np.ndarray
    wide: bool = field(default=False, compare=False)

    def __post_init__(self):
        arr = _as_points(self.points)
        if np.any(np.diff(arr) < -SORT_TOL):
            raise ValidationError("configuration points must be sorted")
        limit = SPREAD_LIMIT_WIDE if self.wide else SPREAD_LIMIT
        if arr[-1] - arr[0] > limit + SORT_TOL:
            raise ValidationError(
                f"spread {arr[-1] - arr[0]:.6g} exceeds limit {limit:.6g}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def spread(self) -> float:
        return float(self.points[-1] - self.points[0])

    def shifted(self, k: int) -> "Configuration":
        return Configuration(self.points + int(k), wide=self.wide)

    def to_json(self) -> list:
        return [float(x) for x in self.points]

    def __eq__(self, other):
        return isinstance(other, Configuration) and np.array_equal(
            self.points, other.points
        )

    def __hash__(self):
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class ConfigurationClass:
    """Equivalence class of a configuration modulo common integer shifts
    and cyclic relabeling, stored through its canonical representative."""

    canonical: Configuration

    @property
    def n(self) -> int:
        return self.canonical.n

    @property
    def points(self) -> np.ndarray:
        return self.canonical.points

    def key(self, decimals: int = 9) -> tuple:
        return tuple(np.round(self.canonical.points, decimals))

    def to_json(self) -> list:
        return self.canonical.to_json()

    def __eq__(self, other):
        return isinstance(other, ConfigurationClass) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True)
class GapCoordinates:
    """Base point in [0,1) plus the n circular gaps (non-negative, summing
    to 1) of a canonical configuration."""

    base: float
    gaps: np.ndarray

    def __post_init__(self):
        gaps = np.asarray(self.gaps, dtype=float)
        if not (0.0 <= self.base < 1.0):
            raise ValidationError("base point must lie in [0,1)")
        if np.any(gaps < -SORT_TOL) or abs(gaps.sum() - 1.0) > 1e-9:
            raise ValidationError("gaps must be non-negative and sum to 1")
        gaps = gaps.copy()
        gaps.setflags(write=False)
        object.__setattr__(self, "gaps", gaps)

    def to_configuration(self) -> Configuration:
        pts = self.base + np.concatenate(([0.0], np.cumsum(self.gaps)[:-1]))
        return Configuration(pts)

    @classmethod
    def from_class(cls, c: ConfigurationClass) -> "GapCoordinates":
        pts = c.canonical.points
        gaps = np.empty(pts.size)
        gaps[:-1] = np.diff(pts)
        gaps[-1] = pts[0] + 1.0 - pts[-1]
        return cls(base=float(pts[0]), gaps=gaps)


def circle_dist(a, b):
    """Distance on the circle: min over integers k of ``|a - b + k|``.

    Accepts scalars or arrays (broadcast); the result lies in [0, 1/2].
    """
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 1.0)
    out = np.minimum(d, 1.0 - d)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _check_same_n(m: Configuration, n: Configuration):
    if m.n != n.n:
        raise DimensionMismatchError(f"particle counts differ: {m.n} vs {n.n}")


def dist_Z(m: Configuration, n: Configuration) -> float:
    """Label-respecting quotient distance: the (1/n)-weighted L2 norm of
    the per-particle circle reduction."""
    _check_same_n(m, n)
    d = circle_dist(m.points, n.points)
    return math.sqrt(float(np.mean(np.square(d))))


def cyclic_relabel(points: np.ndarray, r: int) -> np.ndarray:
    """Advance the start index by r, raising the wrapped particles by 1.

    The result is again a monotone lift of the same circle configuration.
    """
    r = int(r) % points.size
    if r == 0:
        return points.copy()
    return np.concatenate((points[r:], points[:r] + 1.0))


def dist_S(m: Configuration, n: Configuration) -> float:
    """Quadratic Wasserstein distance between the two uniform n-point
    measures on the circle.

    Computed as the min over cyclic relabelings of n of the L2 distance,
    each candidate minimized over a common integer shift; monotone
    matchings are optimal for quadratic cost on the circle.
    """
    _check_same_n(m, n)
    x = m.points
    best = math.inf
    for r in range(n.n):
        y = cyclic_relabel(n.points, r)
        zbar = float(np.mean(x - y))
        for z in (math.floor(zbar), math.ceil(zbar)):
            cost = float(np.mean(np.square(x - y - z)))
            if cost < best:
                best = cost
    return math.sqrt(best)


def dist_S_bruteforce(m: Configuration, n: Configuration, shift_range: int = 2) -> float:
    """Assignment oracle for dist_S: all n! matchings with per-particle
    circle reduction. Exact for any n, intended for n <= 5."""
    _check_same_n(m, n)
    x, y = m.points, n.points
    best = math.inf
    for perm in itertools.permutations(range(n.n)):
        d = circle_dist(x, y[list(perm)])
        cost = float(np.mean(np.square(d)))
        if cost < best:
            best = cost
    return math.sqrt(best)


def canonicalize(m: Configuration) -> ConfigurationClass:
    """Canonical representative of the class of ``m``: shift the base into
    [0,1), then pick the lexicographically least of the n cyclic relabels.

    Idempotent; ties among degenerate (clustered) configurations break by
    index order.
    """
    if m.spread > SPREAD_LIMIT + SORT_TOL:
        raise ValidationError("canonicalize expects spread <= 1")
    candidates = []
    for r in range(m.n):
        pts = cyclic_relabel(m.points, r)
        pts = pts - math.floor(pts[0])
        candidates.append(pts)
    best = min(candidates, key=lambda p: tuple(p))
    return ConfigurationClass(Configuration(best))


def coarse_grain(m: Configuration, parts: int) -> Configuration:
    """Block-average consecutive groups of ``n/parts`` particles (the
    projection onto coarser step functions)."""
    if parts < 1 or m.n % parts != 0:
        raise ArityError(f"{parts} does not divide particle count {m.n}")
    block = m.n // parts
    pts = m.points.reshape(parts, block).mean(axis=1)
    return Configuration(pts, wide=m.wide)


def align_lift(segment: np.ndarray, target_end: np.ndarray) -> np.ndarray:
    """Relabel+shift a whole path segment so its final node equals
    ``target_end`` exactly (both must lift the same configuration class).

    ``segment`` has shape (k, n) with the final row equivalent to
    ``target_end``; the same relabeling applies to every row.
    """
    end = segment[-1]
    npart = end.size
    for r in range(npart):
        cand = cyclic_relabel(end, r)
        z = target_end[0] - cand[0]
        zi = round(z)
        if abs(z - zi) < 1e-6 and np.allclose(cand + zi, target_end, atol=1e-6):
            rel = np.concatenate(
                (segment[:, r:], segment[:, :r] + 1.0), axis=1
            ) if r else segment.copy()
            return rel + zi
    raise ValidationError("segment end is not a lift of the target configuration")
