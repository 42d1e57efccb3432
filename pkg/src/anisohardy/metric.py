"""The quasidistance induced by a cover.

rho(x, y) is the infimal volume of a cover ellipsoid containing both
points.  The infimum is approximated from above by restricting candidate
centers to a symmetric grid on the segment [x, y] (the optimum lies
there for the built-in families) and, for each candidate, finding the
deepest admissible level by bisection; both the witness center and level
are returned for audit.  Values are cached per rounded point pair.
"""

import math
from dataclasses import dataclass

import numpy as np

from .cover import CoverSpec, theta
from .geometry import exponent_lower, exponent_lower_inv, exponent_upper, unit_ball_volume

N_CENTERS = 65
T_TOL = 1e-8
COINCIDENCE_TOL = 1e-12
_T_EXPAND_CAP = 260.0


@dataclass(frozen=True)
class QuasidistanceEstimate:
    value: float
    level_t_star: float
    witness_center: np.ndarray


def _deepest_levels(spec: CoverSpec, Z: np.ndarray, X: np.ndarray, Y: np.ndarray,
                    t_tol: float) -> np.ndarray:
    """Per-candidate sup{t : x, y in theta(z, t)} by vectorized bisection.

    Membership radius max(|M_{z,t}^{-1}(x-z)|, |M_{z,t}^{-1}(y-z)|) is
    increasing in t for the supported families (ellipsoids shrink with
    the level), so the bisection bracket is valid.
    """
    shape = Z.shape[:-1]

    def radius(t):
        rx = np.linalg.norm(spec.family.pullback(Z, t, X), axis=-1)
        ry = np.linalg.norm(spec.family.pullback(Z, t, Y), axis=-1)
        return np.maximum(rx, ry)

    t_lo = np.full(shape, -1.0)
    step = 2.0
    while np.any(radius(t_lo) > 1.0):
        t_lo = np.where(radius(t_lo) > 1.0, t_lo - step, t_lo)
        step *= 2
        if step > 2 * _T_EXPAND_CAP:
            break
    t_hi = np.full(shape, 1.0)
    step = 2.0
    while np.any(radius(t_hi) <= 1.0):
        t_hi = np.where(radius(t_hi) <= 1.0, t_hi + step, t_hi)
        step *= 2
        if step > 2 * _T_EXPAND_CAP:
            break
    for _ in range(200):
        if float(np.max(t_hi - t_lo)) <= t_tol:
            break
        mid = 0.5 * (t_lo + t_hi)
        inside = radius(mid) <= 1.0
        t_lo = np.where(inside, mid, t_lo)
        t_hi = np.where(inside, t_hi, mid)
    return t_lo


def rho_many(spec: CoverSpec, X: np.ndarray, Y: np.ndarray, n_centers: int = N_CENTERS,
             t_tol: float = T_TOL, full: bool = False):
    """Vectorized quasidistance for paired rows of X and Y."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    P = X.shape[0]
    sep = np.linalg.norm(X - Y, axis=1)
    active = sep > COINCIDENCE_TOL

    values = np.zeros(P)
    t_stars = np.full(P, math.inf)
    witnesses = X.copy()
    if np.any(active):
        Xa, Ya = X[active], Y[active]
        tau = np.linspace(0.0, 1.0, n_centers)
        Z = Xa[:, None, :] + tau[None, :, None] * (Ya - Xa)[:, None, :]
        tgrid = _deepest_levels(spec, Z, Xa[:, None, :], Ya[:, None, :], t_tol)
        mats = spec.family.matrices(Z, tgrid)
        vols = unit_ball_volume(spec.n) * np.abs(np.linalg.det(mats))
        best = np.argmin(vols, axis=1)
        rows = np.arange(Z.shape[0])
        values[active] = vols[rows, best]
        t_stars[active] = tgrid[rows, best]
        witnesses[active] = Z[rows, best]
    if full:
        return values, t_stars, witnesses
    return values


def rho(spec: CoverSpec, x, y, n_centers: int = N_CENTERS,
        t_tol: float = T_TOL) -> QuasidistanceEstimate:
    """Quasidistance between two points, with witness level and center."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ka = tuple(np.round(x, 12)) + tuple(np.round(y, 12))
    kb = tuple(np.round(y, 12)) + tuple(np.round(x, 12))
    key = (min(ka, kb), n_centers)
    hit = spec._rho_cache.get(key)
    if hit is not None:
        return hit
    values, t_stars, witnesses = rho_many(spec, x[None, :], y[None, :], n_centers, t_tol, full=True)
    est = QuasidistanceEstimate(float(values[0]), float(t_stars[0]), witnesses[0])
    spec._rho_cache[key] = est
    return est


def triangle_constant(spec: CoverSpec, triples=None, rng=None, size: int = 1000,
                      box: float = 4.0) -> float:
    """Empirical triangle constant max rho(x,y) / (rho(x,z) + rho(z,y)), clamped at 1."""
    if triples is None:
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        triples = rng.uniform(-box, box, size=(size, 3, spec.n))
    triples = np.asarray(triples, dtype=float)
    X, Y, Z = triples[:, 0], triples[:, 1], triples[:, 2]
    d_xy = rho_many(spec, X, Y)
    d_xz = rho_many(spec, X, Z)
    d_zy = rho_many(spec, Z, Y)
    denom = d_xz + d_zy
    ok = denom > 0
    if not np.any(ok):
        return 1.0
    return max(1.0, float(np.max(d_xy[ok] / denom[ok])))


@dataclass
class SeparationReport:
    """Lower-bound audit for the quasidistance of separated points.

    c0 is the smallest constant making the two-sided distance comparison
    hold on the samples; min_margin is the worst slack (>= 0 passes) in
    the induced quasidistance lower bound
    rho(x, z) >= a1 * 2^{-lower_inv(2 log2 c0 + upper(s))}.
    """

    c0: float
    min_margin: float
    median_margin: float
    n_samples: int


def check_separation_bounds(spec: CoverSpec, rng=None, size: int = 200, box: float = 4.0,
                            s_range=(-3.0, 6.0)) -> SeparationReport:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    xs = rng.uniform(-box, box, size=(size, spec.n))
    ss = rng.uniform(*s_range, size=size)
    u = rng.normal(size=(size, spec.n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    kappa = rng.uniform(1.05, 2.0, size=(size, 1))
    mats = spec.family.matrices(xs, ss)
    zs = xs + np.einsum("kij,kj->ki", mats, u * kappa)

    values, t_stars, _ = rho_many(spec, xs, zs, full=True)
    dist = np.linalg.norm(zs - xs, axis=1)
    ex = spec.params.exponents
    ratio_low = np.exp2(-exponent_upper(ss, ex)) / dist
    ratio_high = dist * np.exp2(exponent_lower(t_stars, ex))
    c0 = max(1.0 + 1e-9, float(np.max(ratio_low)), float(np.max(ratio_high)))

    bound = spec.params.a1 * np.exp2(
        -exponent_lower_inv(2 * math.log2(c0) + exponent_upper(ss, ex), ex))
    margins = values / bound - 1.0
    return SeparationReport(c0, float(np.min(margins)), float(np.median(margins)), size)


def distance_growth_constant(spec: CoverSpec, rng=None, size: int = 300,
                             box: float = 6.0) -> float:
    """Calibrated C0 with |x - x0| <= C0 rho(x0, x)^{a4} over samples with rho >= 1."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    x0 = rng.uniform(-box, box, size=(size, spec.n))
    x = rng.uniform(-box, box, size=(size, spec.n))
    values = rho_many(spec, x0, x)
    keep = values >= 1.0
    if not np.any(keep):
        return 1.0
    dist = np.linalg.norm((x - x0)[keep], axis=1)
    return max(1.0, float(np.max(dist / values[keep] ** spec.params.a4)))
