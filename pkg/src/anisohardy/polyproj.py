"""Polynomial moment projection on the unit ball and on ellipsoids.

The projector matches all monomial moments up to a degree cap.  Its
kernel representation uses the dual basis of the monomials under the
unit-ball pairing: Q_alpha integrates against x^beta to |B| times a
Kronecker delta.  The Gram matrix is assembled from closed-form
ball moments (so conditioning is the only numerical concern; fine here
because the degree is capped) and solved with a pivoted LU
factorization.  Projections onto an ellipsoid conjugate the unit-ball
projector by the ellipsoid's affine map; coefficients are stored in the
pulled-back coordinates, which keeps them O(1) at deep levels.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .geometry import Ellipsoid, concentric, unit_ball_volume
from .quad import (QuadContext, SampledFunction, monomial, multi_indices,
                   rule_for_ellipsoid, _sup_grid)

MAX_DEGREE = 8
MAX_DIM = 3


def ball_monomial_moment(alpha, n: int) -> float:
    """Closed form for the unit-ball moment of x^alpha (0 when any entry is odd)."""
    if any(a % 2 for a in alpha):
        return 0.0
    deg = sum(alpha)
    num = 2.0
    for a in alpha:
        num *= math.gamma((a + 1) / 2)
    return num / ((deg + n) * math.gamma((deg + n) / 2))


def _monomial_sup_on_ball(alpha) -> float:
    # max over |z| <= 1 of |z^alpha|, attained at z_i^2 = alpha_i / |alpha|
    deg = sum(alpha)
    if deg == 0:
        return 1.0
    val = 1.0
    for a in alpha:
        if a:
            val *= (a / deg) ** (a / 2)
    return val


@dataclass(eq=False)
class Polynomial:
    """Polynomial with coefficients over a fixed multi-index list."""

    n: int
    indices: tuple
    coeffs: np.ndarray

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.zeros(pts.shape[0])
        for c, a in zip(self.coeffs, self.indices):
            if c != 0.0:
                vals += c * monomial(pts, a)
        return vals

    @property
    def degree(self) -> int:
        live = [sum(a) for c, a in zip(self.coeffs, self.indices) if c != 0.0]
        return max(live, default=0)


@dataclass(eq=False)
class DualBasis:
    """Dual polynomials of the monomials under the unit-ball pairing."""

    m: int
    n: int
    indices: tuple
    gram: np.ndarray
    coeff_matrix: np.ndarray          # column alpha holds the coefficients of Q_alpha
    duality_residual: float
    c0: float                         # sup constant of the projector kernel

    @property
    def q_alpha(self) -> list[Polynomial]:
        return [Polynomial(self.n, self.indices, self.coeff_matrix[:, k])
                for k in range(len(self.indices))]


@lru_cache(maxsize=None)
def dual_basis(m: int, n: int) -> DualBasis:
    if m > MAX_DEGREE or n > MAX_DIM:
        raise ValueError(f"dual basis capped at degree {MAX_DEGREE}, dimension {MAX_DIM}")
    idx = multi_indices(n, m)
    size = len(idx)
    gram = np.empty((size, size))
    for i, a in enumerate(idx):
        for j, b in enumerate(idx):
            gram[i, j] = ball_monomial_moment(tuple(x + y for x, y in zip(a, b)), n)
    vb = unit_ball_volume(n)
    lu = lu_factor(gram)
    coeff = lu_solve(lu, vb * np.eye(size))
    residual = float(np.max(np.abs(gram @ coeff - vb * np.eye(size))))

    ball = Ellipsoid(np.zeros(n), np.eye(n))
    grid = _sup_grid(ball, QuadContext(n=min(n, 2))) if n <= 2 else ball.map_from_ball(
        np.random.default_rng(0).normal(size=(4096, n))
        / np.linalg.norm(np.random.default_rng(0).normal(size=(4096, n)), axis=1, keepdims=True))
    sups = np.array([_monomial_sup_on_ball(a) for a in idx])
    absq = np.column_stack([np.abs(Polynomial(n, idx, coeff[:, k])(grid)) for k in range(size)])
    c0 = float(np.max(absq @ sups))
    return DualBasis(m, n, idx, gram, coeff, residual, c0)


def project_unit_ball(g: SampledFunction, m: int, ctx: QuadContext) -> Polynomial:
    """The degree-<=m polynomial matching all moments of g on the unit ball."""
    basis = dual_basis(m, ctx.n)
    ball = Ellipsoid(np.zeros(ctx.n), np.eye(ctx.n))
    pts, w = rule_for_ellipsoid(ball, g.breaks, ctx)
    gv = g(pts)
    moments = np.array([w @ (gv * monomial(pts, a)) for a in basis.indices])
    coeffs = basis.coeff_matrix @ (moments / unit_ball_volume(ctx.n))
    return Polynomial(ctx.n, basis.indices, coeffs)


@dataclass(eq=False)
class EllipsoidPolynomial:
    """A polynomial on an ellipsoid (zero outside), stored in pullback coordinates."""

    polynomial: Polynomial
    ellipsoid: Ellipsoid

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        u = self.ellipsoid.map_to_ball(pts)
        inside = np.linalg.norm(u, axis=-1) <= 1.0 + 1e-9
        vals = np.zeros(pts.shape[0])
        if np.any(inside):
            vals[inside] = self.polynomial(u[inside])
        return vals

    def to_sampled(self) -> SampledFunction:
        return SampledFunction(self.__call__, support_hint=self.ellipsoid,
                               breaks=(self.ellipsoid,))


def _pullback_hints(b: SampledFunction, e: Ellipsoid):
    breaks = []
    for br in b.breaks:
        if concentric(br, e):
            try:
                breaks.append(Ellipsoid(np.zeros(e.n), e.inverse @ br.matrix))
            except ValueError:
                continue
    return tuple(breaks)


def project_ellipsoid(b: SampledFunction, e: Ellipsoid, m: int,
                      ctx: QuadContext) -> EllipsoidPolynomial:
    """Moment-matching polynomial for b restricted to the ellipsoid e.

    Conjugates the unit-ball projector by the affine map of e: the
    returned polynomial matches every moment of order <= m of b over e,
    in both the original and the pulled-back coordinates.
    """
    pulled = SampledFunction(lambda u: b(e.map_from_ball(u)), breaks=_pullback_hints(b, e))
    poly = project_unit_ball(pulled, m, ctx)
    return EllipsoidPolynomial(poly, e)


def residual_moments(b: SampledFunction, proj: EllipsoidPolynomial, m: int,
                     ctx: QuadContext):
    """Moments of b - P against x^beta over the host, with |b||x^beta| scales."""
    e = proj.ellipsoid
    idx = multi_indices(e.n, m)
    pts, w = rule_for_ellipsoid(e, b.breaks, ctx)
    diff = b(pts) - proj(pts)
    absb = np.abs(b(pts))
    resid = np.array([w @ (diff * monomial(pts, a)) for a in idx])
    scale = np.array([w @ (absb * np.abs(monomial(pts, a))) for a in idx])
    return resid, scale


def sup_bound_margin(b: SampledFunction, proj: EllipsoidPolynomial, ctx: QuadContext,
                     n_points: int = 1000) -> float:
    """Slack in |P(x)| <= (C1/|E|) * integral of |b| over E, C1 the kernel constant.

    Returns bound/max|P| - 1 (>= 0 means the bound holds at the sampled
    points).
    """
    e = proj.ellipsoid
    basis = dual_basis(_degree_of(proj), e.n)
    pts, w = rule_for_ellipsoid(e, b.breaks, ctx)
    mass = float(w @ np.abs(b(pts)))
    bound = basis.c0 / e.volume * mass
    rng = np.random.default_rng(0)
    u = rng.normal(size=(n_points, e.n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= rng.uniform(0, 1, size=(n_points, 1)) ** (1.0 / e.n)
    sup_p = float(np.max(np.abs(proj(e.map_from_ball(u)))))
    if sup_p == 0.0:
        return math.inf
    return bound / sup_p - 1.0


def _degree_of(proj: EllipsoidPolynomial) -> int:
    degs = [sum(a) for a in proj.polynomial.indices]
    return max(degs, default=0)
