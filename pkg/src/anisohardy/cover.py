"""Continuous multilevel ellipsoid covers.

A cover assigns to every location x and level t an ellipsoid
theta(x, t) = x + M_{x,t}(B) whose volume is pinned to ~ 2^{-t} between
constants a1, a2, and whose shape matrices transition between nearby
ellipsoids at controlled exponential rates governed by a3..a6.  Three
built-in families are provided (isotropic, diagonal, pointwise-variable),
all normalized so |theta(x, t)| = 2^{-t} exactly; arbitrary matrix-valued
callables can be wrapped with :class:`MatrixFamily`.

The validation sweeps are empirical: they estimate envelope constants
over samples and flag declared parameters that the samples contradict.
CoverSpec instances are immutable after construction; sweeps are pure
and parallelize over samples.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverError, EstimationError
from .geometry import (Ellipsoid, ExponentParams, exponent_lower, exponent_upper,
                       unit_ball_volume)


@dataclass(frozen=True)
class CoverParameters:
    """The six cover constants; a1 <= a2, a3 <= 1 <= a5, a6 <= a4."""

    a1: float
    a2: float
    a3: float
    a4: float
    a5: float
    a6: float

    def __post_init__(self):
        if min(self.a1, self.a2, self.a3, self.a4, self.a5, self.a6) <= 0:
            raise ValueError("cover parameters must be positive")
        if self.a1 > self.a2:
            raise ValueError("need a1 <= a2")
        if not (self.a3 <= 1.0 <= self.a5):
            raise ValueError("need a3 <= 1 <= a5")
        if self.a6 > self.a4:
            raise ValueError("need a6 <= a4")

    @property
    def exponents(self) -> ExponentParams:
        return ExponentParams(a4=self.a4, a6=self.a6)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("a1", "a2", "a3", "a4", "a5", "a6")}


class IsotropicFamily:
    """Balls with |theta(x, t)| = 2^{-t}: M_{x,t} = (2^{-t}/v_n)^{1/n} I."""

    def __init__(self, n: int):
        self.n = n
        self._c = unit_ball_volume(n) ** (-1.0 / n)

    def scale(self, t):
        return self._c * np.exp2(-np.asarray(t, dtype=float) / self.n)

    def matrices(self, x, t):
        t = np.asarray(t, dtype=float)
        eye = np.eye(self.n)
        return self.scale(t)[..., None, None] * eye

    def pullback(self, z, t, p):
        z = np.asarray(z, dtype=float)
        p = np.asarray(p, dtype=float)
        return (p - z) / self.scale(t)[..., None]


class DiagonalFamily:
    """Axis-aligned family M_{x,t} = c diag(2^{-b_i t}) with sum(b) = 1."""

    def __init__(self, b):
        b = tuple(float(v) for v in b)
        if any(v <= 0 for v in b) or abs(sum(b) - 1.0) > 1e-12:
            raise ValueError("exponents b must be positive and sum to 1")
        self.b = np.array(b)
        self.n = len(b)
        self._c = unit_ball_volume(self.n) ** (-1.0 / self.n)

    def matrices(self, x, t):
        t = np.asarray(t, dtype=float)
        d = self._c * np.exp2(-np.multiply.outer(t, self.b))
        out = np.zeros(d.shape + (self.n,))
        for i in range(self.n):
            out[..., i, i] = d[..., i]
        return out

    def pullback(self, z, t, p):
        z = np.asarray(z, dtype=float)
        p = np.asarray(p, dtype=float)
        t = np.asarray(t, dtype=float)
        return (p - z) * np.exp2(np.multiply.outer(t, self.b)) / self._c


class PointwiseVariableFamily:
    """Rotating anisotropic family with smoothly location-dependent exponents.

    n = 2 only.  The two axis exponents are 0.5 +- a slow sinusoidal
    perturbation (they sum to 1, so volumes stay exactly 2^{-t}), and the
    principal axes rotate with a slow sinusoidal angle field.  At level 0
    every matrix equals c*I, so the cover is quasi zero uniform with
    c1 = c2 = 1.
    """

    def __init__(self, b_min: float = 0.42, b_max: float = 0.58, length: float = 8.0,
                 rot_amp: float = 0.4, rot_length: float = 9.0, seed: int = 0):
        if not (0 < b_min <= b_max < 1) or abs((b_min + b_max) - 1.0) > 1e-12:
            raise ValueError("need 0 < b_min <= b_max with b_min + b_max = 1")
        self.n = 2
        self.b_min = float(b_min)
        self.b_max = float(b_max)
        self.length = float(length)
        self.rot_amp = float(rot_amp)
        self.rot_length = float(rot_length)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self._phase_b, self._phase_r = rng.uniform(0, 2 * np.pi, size=2)
        self._amp = 0.5 * (b_max - b_min)
        self._kb = np.array([1.0, 0.6]) / self.length
        self._kr = np.array([0.5, -1.0]) / self.rot_length
        self._c = unit_ball_volume(2) ** (-0.5)

    def _fields(self, x):
        x = np.asarray(x, dtype=float)
        b1 = 0.5 + self._amp * np.sin(x @ self._kb + self._phase_b)
        phi = self.rot_amp * np.sin(x @ self._kr + self._phase_r)
        return b1, phi

    def matrices(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float)
        b1, phi = self._fields(x)
        d1 = self._c * np.exp2(-b1 * t)
        d2 = self._c * np.exp2(-(1.0 - b1) * t)
        c, s = np.cos(phi), np.sin(phi)
        out = np.empty(np.broadcast(d1, c).shape + (2, 2))
        out[..., 0, 0] = c * c * d1 + s * s * d2
        out[..., 0, 1] = c * s * (d1 - d2)
        out[..., 1, 0] = out[..., 0, 1]
        out[..., 1, 1] = s * s * d1 + c * c * d2
        return out

    def pullback(self, z, t, p):
        z = np.asarray(z, dtype=float)
        p = np.asarray(p, dtype=float)
        t = np.asarray(t, dtype=float)
        b1, phi = self._fields(z)
        w = p - z
        c, s = np.cos(phi), np.sin(phi)
        w1 = c * w[..., 0] + s * w[..., 1]
        w2 = -s * w[..., 0] + c * w[..., 1]
        u1 = w1 * np.exp2(b1 * t) / self._c
        u2 = w2 * np.exp2((1.0 - b1) * t) / self._c
        v1 = c * u1 - s * u2
        v2 = s * u1 + c * u2
        return np.stack([v1, v2], axis=-1)


class MatrixFamily:
    """Wrap an arbitrary (x, t) -> M callable (slow loop path; tests and tables)."""

    def __init__(self, fn, n: int):
        self._fn = fn
        self.n = n

    def matrices(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x, t = np.broadcast_arrays(x, t[..., None])[0], np.broadcast_arrays(x[..., 0], t)[1]
        flat_x = x.reshape(-1, self.n)
        flat_t = t.reshape(-1)
        out = np.stack([np.asarray(self._fn(xi, ti), dtype=float) for xi, ti in zip(flat_x, flat_t)])
        return out.reshape(t.shape + (self.n, self.n))

    def pullback(self, z, t, p):
        mats = self.matrices(z, t)
        inv = np.linalg.inv(mats)
        w = np.asarray(p, dtype=float) - np.asarray(z, dtype=float)
        return np.einsum("...ij,...j->...i", inv, w)


@dataclass(eq=False)
class CoverSpec:
    """A cover family plus its declared parameters."""

    kind: str
    n: int
    family: object
    params: CoverParameters
    seed: int = 0
    config: dict = field(default_factory=dict, repr=False)
    _rho_cache: dict = field(default_factory=dict, repr=False)

    def matrix(self, x, t) -> np.ndarray:
        m = self.family.matrices(np.atleast_2d(np.asarray(x, dtype=float)), np.atleast_1d(float(t)))
        return np.asarray(m).reshape(self.n, self.n)

    def to_config(self) -> dict:
        cfg = {"kind": self.kind, "n": self.n, "params": self.params.to_dict(), "seed": self.seed}
        cfg.update(self.config)
        return cfg


def isotropic_cover(n: int) -> CoverSpec:
    a = 1.0 / n
    params = CoverParameters(1.0, 1.0, 1.0, a, 1.0, a)
    return CoverSpec("isotropic", n, IsotropicFamily(n), params, config={"b": []})


def diagonal_cover(b, declared: CoverParameters | None = None) -> CoverSpec:
    fam = DiagonalFamily(b)
    if declared is None:
        declared = CoverParameters(1.0, 1.0, 1.0, float(max(b)), 1.0, float(min(b)))
    return CoverSpec("diagonal", fam.n, fam, declared, config={"b": [float(v) for v in b]})


def pointwise_variable_cover(b_min: float = 0.42, b_max: float = 0.58, seed: int = 0,
                             **kwargs) -> CoverSpec:
    fam = PointwiseVariableFamily(b_min=b_min, b_max=b_max, seed=seed, **kwargs)
    # a3/a5 are conservative declarations refined by the empirical sweeps.
    params = CoverParameters(1.0, 1.0, 0.25, b_max, 4.0, b_min)
    return CoverSpec("pointwise-variable", 2, fam, params, seed=seed,
                     config={"b": [b_min, b_max]})


def cover_from_config(cfg: dict) -> CoverSpec:
    kind = cfg.get("kind")
    n = int(cfg.get("n", 1))
    seed = int(cfg.get("seed", 0))
    if kind == "isotropic":
        spec = isotropic_cover(n)
    elif kind == "diagonal":
        spec = diagonal_cover(cfg["b"])
    elif kind == "pointwise-variable":
        b = cfg.get("b", [0.42, 0.58])
        spec = pointwise_variable_cover(b_min=float(b[0]), b_max=float(b[1]), seed=seed)
    else:
        raise ValueError(f"unknown cover kind {kind!r}")
    if "params" in cfg:
        spec.params = CoverParameters(**{k: float(v) for k, v in cfg["params"].items()})
    spec.seed = seed
    return spec


def theta(spec: CoverSpec, x, t: float) -> Ellipsoid:
    """The cover ellipsoid at location x and level t."""
    try:
        return Ellipsoid(np.atleast_1d(np.asarray(x, dtype=float)), spec.matrix(x, t), level=float(t))
    except ValueError as exc:
        raise CoverError(f"invalid cover matrix at (x={x}, t={t}): {exc}") from exc


def _sample_points(rng, n: int, box: float, size: int) -> np.ndarray:
    return rng.uniform(-box, box, size=(size, n))


def _ball_points(rng, size: int, n: int) -> np.ndarray:
    u = rng.normal(size=(size, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = rng.uniform(0, 1, size=(size, 1)) ** (1.0 / n)
    return u * r


def _op_norms(mats: np.ndarray) -> np.ndarray:
    return np.linalg.svd(mats, compute_uv=False)[..., 0]


@dataclass
class VolumeEnvelopeReport:
    a1_hat: float
    a2_hat: float
    violations: list


def validate_volume_envelope(spec: CoverSpec, xs: np.ndarray, ts: np.ndarray,
                             tol: float = 1e-9) -> VolumeEnvelopeReport:
    """Empirical inf/sup of |theta(x, t)| * 2^t over the samples."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.asarray(ts, dtype=float)
    if xs.shape[0] == 0:
        raise EstimationError("volume envelope needs at least one sample")
    mats = spec.family.matrices(xs, ts)
    ratios = unit_ball_volume(spec.n) * np.abs(np.linalg.det(mats)) * np.exp2(ts)
    a1_hat, a2_hat = float(np.min(ratios)), float(np.max(ratios))
    violations = []
    if a1_hat < spec.params.a1 * (1 - tol) - tol:
        violations.append(f"volume ratio {a1_hat:.6g} below declared a1={spec.params.a1}")
    if a2_hat > spec.params.a2 * (1 + tol) + tol:
        violations.append(f"volume ratio {a2_hat:.6g} above declared a2={spec.params.a2}")
    return VolumeEnvelopeReport(a1_hat, a2_hat, violations)


@dataclass
class TransitionEnvelopeReport:
    """Envelope and regression estimates for the shape-transition constants."""

    a3_hat: float
    a4_hat: float
    a5_hat: float
    a6_hat: float
    a4_fit: float
    a6_fit: float
    n_samples: int
    violations: list

    def to_dict(self) -> dict:
        return {"a3_hat": self.a3_hat, "a4_hat": self.a4_hat, "a5_hat": self.a5_hat,
                "a6_hat": self.a6_hat, "a4_fit": self.a4_fit, "a6_fit": self.a6_fit,
                "n_samples": self.n_samples, "violations": list(self.violations)}


def sample_intersecting_pairs(spec: CoverSpec, rng, size: int, box: float = 4.0,
                              t_range=(-4.0, 8.0), s_grid=(0.5, 1.0, 2.0, 3.0, 4.0, 6.0)):
    """(x, y, t, s) samples with y inside theta(x, t), so the two ellipsoids meet."""
    xs = _sample_points(rng, spec.n, box, size)
    ts = rng.uniform(*t_range, size=size)
    ss = rng.choice(np.asarray(s_grid, dtype=float), size=size)
    mats = spec.family.matrices(xs, ts)
    ys = xs + np.einsum("kij,kj->ki", mats, _ball_points(rng, size, spec.n))
    return xs, ys, ts, ss


def validate_transition_envelope(spec: CoverSpec, samples=None, rng=None, size: int = 4000,
                                 tol: float = 1e-6, **sample_kw) -> TransitionEnvelopeReport:
    """Estimate (a3, a4, a5, a6) from intersecting sample pairs.

    The headline a4_hat/a6_hat are worst-case exponents (envelope over
    per-sample log-slopes); a4_fit/a6_fit are least-squares slopes.
    Pairs whose ellipsoids do not intersect are skipped; running out of
    admissible samples raises :class:`EstimationError`.
    """
    if samples is None:
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        samples = sample_intersecting_pairs(spec, rng, size, **sample_kw)
    xs, ys, ts, ss = (np.asarray(a, dtype=float) for a in samples)
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)

    inner = spec.family.pullback(xs, ts, ys)
    keep = (np.linalg.norm(inner, axis=-1) <= 1.0 + 1e-9) & (ss >= 0)
    if not np.any(keep):
        raise EstimationError("no intersecting sample pairs with s >= 0")
    xs, ys, ts, ss = xs[keep], ys[keep], ts[keep], ss[keep]

    m_xt = spec.family.matrices(xs, ts)
    m_ys = spec.family.matrices(ys, ts + ss)
    fwd = _op_norms(np.linalg.inv(m_xt) @ m_ys)          # ||M_{x,t}^{-1} M_{y,t+s}||
    bwd_inv = 1.0 / _op_norms(np.linalg.inv(m_ys) @ m_xt)

    pos = ss > 1e-9
    if not np.any(pos):
        raise EstimationError("transition estimation needs samples with s > 0")
    e_upper = -np.log2(fwd[pos]) / ss[pos]
    e_lower = -np.log2(bwd_inv[pos]) / ss[pos]
    a6_hat = float(np.min(e_upper))
    a4_hat = float(np.max(e_lower))
    a5_hat = float(np.max(fwd * np.exp2(a6_hat * ss)))
    a3_hat = float(np.min(bwd_inv * np.exp2(a4_hat * ss)))
    a6_fit = float(-np.polyfit(ss[pos], np.log2(fwd[pos]), 1)[0])
    a4_fit = float(-np.polyfit(ss[pos], np.log2(bwd_inv[pos]), 1)[0])

    p = spec.params
    violations = []
    if np.any(fwd > p.a5 * np.exp2(-p.a6 * ss) * (1 + tol)):
        violations.append("upper transition bound exceeded for declared (a5, a6)")
    if np.any(bwd_inv < p.a3 * np.exp2(-p.a4 * ss) * (1 - tol)):
        violations.append("lower transition bound violated for declared (a3, a4)")
    return TransitionEnvelopeReport(a3_hat, a4_hat, a5_hat, a6_hat, a4_fit, a6_fit,
                                    int(np.sum(keep)), violations)


def nesting_shift(spec: CoverSpec, rng=None, size: int = 400, box: float = 4.0,
                  t_range=(-6.0, 10.0), j_cap: float = 64.0) -> float:
    """Smallest shift J >= log2(a5)/a6 with sampled nesting theta(x,t) in theta(x,t-s).

    The nesting test is the operator-norm criterion
    ||M_{x,t-s}^{-1} M_{x,t}|| <= 1.  Failure after a doubling search up
    to j_cap raises :class:`CoverError`.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    xs = _sample_points(rng, spec.n, box, size)
    ts = rng.uniform(*t_range, size=size)
    offsets = np.array([0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0])

    def nests(j: float) -> bool:
        for off in offsets:
            s = j + off
            m_t = spec.family.matrices(xs, ts)
            m_up = spec.family.matrices(xs, ts - s)
            if np.any(_op_norms(np.linalg.inv(m_up) @ m_t) > 1.0 + 1e-12):
                return False
        return True

    j = max(0.0, math.log2(spec.params.a5) / spec.params.a6)
    while j <= j_cap:
        if nests(j):
            return j
        j = max(1.0, 2 * j)
    raise CoverError(f"nesting failed for all shifts up to {j_cap}")


def zero_level_uniformity(spec: CoverSpec, rng=None, size: int = 2000,
                          box: float = 4.0) -> tuple[float, float]:
    """Empirical min/max of ||M_{x,0}^{-1} M_{y,0}|| over sampled pairs."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    xs = _sample_points(rng, spec.n, box, size)
    ys = _sample_points(rng, spec.n, box, size)
    zeros = np.zeros(size)
    norms = _op_norms(np.linalg.inv(spec.family.matrices(xs, zeros)) @ spec.family.matrices(ys, zeros))
    return float(np.min(norms)), float(np.max(norms))


@dataclass
class MatrixBoundsReport:
    c_direct: float     # smallest C with ||M_{x,t}|| <= C 2^{-lambda(t)}
    c_inverse: float    # smallest C with ||M_{x,t}^{-1}|| <= C 2^{lambda~(t)}


def matrix_norm_envelope(spec: CoverSpec, rng=None, size: int = 10_000, box: float = 4.0,
                         t_range=(-6.0, 10.0)) -> MatrixBoundsReport:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    xs = _sample_points(rng, spec.n, box, size)
    ts = rng.uniform(*t_range, size=size)
    mats = spec.family.matrices(xs, ts)
    ex = spec.params.exponents
    lo = exponent_lower(ts, ex)
    hi = exponent_upper(ts, ex)
    c_direct = float(np.max(_op_norms(mats) * np.exp2(lo)))
    c_inverse = float(np.max(_op_norms(np.linalg.inv(mats)) * np.exp2(-hi)))
    return MatrixBoundsReport(c_direct, c_inverse)


@dataclass
class DiamWidthReport:
    c_diam: float       # smallest C with diam(theta) <= C 2^{-lambda(t)}
    c_width: float      # smallest C with width(theta) >= 2^{-lambda~(t)} / C


def diam_width_envelope(spec: CoverSpec, rng=None, size: int = 10_000, box: float = 4.0,
                        t_range=(-6.0, 10.0)) -> DiamWidthReport:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    xs = _sample_points(rng, spec.n, box, size)
    ts = rng.uniform(*t_range, size=size)
    svals = np.linalg.svd(spec.family.matrices(xs, ts), compute_uv=False)
    ex = spec.params.exponents
    lo = exponent_lower(ts, ex)
    hi = exponent_upper(ts, ex)
    c_diam = float(np.max(2 * svals[..., 0] * np.exp2(lo)))
    c_width = float(np.max(np.exp2(-hi) / (2 * svals[..., -1])))
    return DiamWidthReport(c_diam, c_width)
