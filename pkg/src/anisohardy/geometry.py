"""Ellipsoids, affine maps, and the piecewise-linear scale exponents.

An ellipsoid is the affine image ``center + M(B)`` of the Euclidean unit
ball ``B`` under a nonsingular matrix ``M``.  Extremal semi-axes come from
the singular values of ``M``, so diameter and width are exact rather than
sampled.  Everything in this module is a pure function of immutable
values and safe to share between threads.
"""

import math
from dataclasses import dataclass

import numpy as np

# Closed membership with a machine-precision cushion: boundary points of
# the form center + M u with |u| = 1 must test inside after roundoff.
CONTAINS_TOL = 1e-9


def unit_ball_volume(n: int) -> float:
    """Volume of the Euclidean unit ball in dimension n (2 for n=1, pi for n=2)."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


@dataclass(frozen=True)
class ExponentParams:
    """The two transition exponents of a cover, with 0 < a6 <= a4."""

    a4: float
    a6: float

    def __post_init__(self):
        if not (0 < self.a6 <= self.a4):
            raise ValueError(f"need 0 < a6 <= a4, got a4={self.a4}, a6={self.a6}")


def exponent_lower(t, params: ExponentParams):
    """Lower scale exponent: a6*t for t >= 0 and a4*t for t < 0."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 0, params.a6 * t, params.a4 * t)
    return float(out) if out.ndim == 0 else out


def exponent_upper(t, params: ExponentParams):
    """Upper scale exponent: a4*t for t >= 0 and a6*t for t < 0."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 0, params.a4 * t, params.a6 * t)
    return float(out) if out.ndim == 0 else out


def exponent_lower_inv(y, params: ExponentParams):
    """Inverse of :func:`exponent_lower`: y/a6 for y >= 0, y/a4 for y < 0."""
    y = np.asarray(y, dtype=float)
    out = np.where(y >= 0, y / params.a6, y / params.a4)
    return float(out) if out.ndim == 0 else out


@dataclass(eq=False)
class Ellipsoid:
    """The set center + M(B), closed; nonsingularity is checked up front.

    ``level`` optionally tags the cover level the ellipsoid came from.
    """

    center: np.ndarray
    matrix: np.ndarray
    level: float | None = None

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        n = self.center.shape[0]
        self.matrix = np.asarray(self.matrix, dtype=float).reshape(n, n)
        det = float(np.linalg.det(self.matrix))
        if not np.isfinite(det) or det == 0.0:
            raise ValueError(f"singular or non-finite ellipsoid matrix (det={det})")
        self._absdet = abs(det)
        self._inverse = np.linalg.inv(self.matrix)
        self._svals = np.linalg.svd(self.matrix, compute_uv=False)

    @property
    def n(self) -> int:
        return self.center.shape[0]

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.n) * self._absdet

    @property
    def diam(self) -> float:
        return 2.0 * float(self._svals[0])

    @property
    def width(self) -> float:
        return 2.0 * float(self._svals[-1])

    @property
    def inverse(self) -> np.ndarray:
        return self._inverse

    def map_to_ball(self, points: np.ndarray) -> np.ndarray:
        """Pull points (..., n) back to unit-ball coordinates M^{-1}(x - center)."""
        pts = np.asarray(points, dtype=float)
        return (pts - self.center) @ self._inverse.T

    def map_from_ball(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.center + u @ self.matrix.T

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        u = self.map_to_ball(np.atleast_2d(points))
        return np.linalg.norm(u, axis=-1) <= 1.0 + CONTAINS_TOL

    def contains(self, point) -> bool:
        return bool(self.contains_many(np.atleast_2d(point))[0])

    def boundary_points(self, k: int) -> np.ndarray:
        """k points on the boundary (endpoints for n=1, a circle grid for n=2)."""
        if self.n == 1:
            u = np.array([[-1.0], [1.0]])
        elif self.n == 2:
            ang = 2 * np.pi * np.arange(k) / k
            u = np.column_stack([np.cos(ang), np.sin(ang)])
        else:
            rng = np.random.default_rng(0)
            u = rng.normal(size=(k, self.n))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
        return self.map_from_ball(u)


def volume(e: Ellipsoid) -> float:
    return e.volume


def diam(e: Ellipsoid) -> float:
    return e.diam


def width(e: Ellipsoid) -> float:
    return e.width


def contains(e: Ellipsoid, point) -> bool:
    return e.contains(point)


def contained_in(inner: Ellipsoid, outer: Ellipsoid, tol: float = 1e-9) -> bool:
    """Whether inner is a subset of outer.

    Exact (operator-norm test) when the centers coincide; for distinct
    centers a sufficient criterion is used, so False may mean "unknown".
    """
    shift = np.linalg.norm(outer.inverse @ (inner.center - outer.center))
    opnorm = float(np.linalg.norm(outer.inverse @ inner.matrix, 2))
    if shift <= tol * max(1.0, opnorm):
        return opnorm <= 1.0 + tol
    return shift + opnorm <= 1.0 + tol


def concentric(a: Ellipsoid, b: Ellipsoid, tol: float = 1e-9) -> bool:
    scale = max(a.diam, b.diam, 1e-300)
    return float(np.linalg.norm(a.center - b.center)) <= tol * scale
