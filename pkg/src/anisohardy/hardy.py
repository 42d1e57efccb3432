"""Atoms, molecules, and their bookkeeping for a given cover.

An atom lives on one cover ellipsoid, has its Lq norm bounded by the
host volume to the power 1/q - 1/p, and has vanishing moments.  A
molecule relaxes the support condition to decay measured by the
quasidistance: b * rho(x0, .)^d stays in Lq.  The molecular size
combines the weighted norm and the plain norm through the exponents
sigma, alpha1, alpha2 derived from the cover parameters; in the
isotropic case alpha1 = alpha2 = 1 exactly and the size reduces to the
classical molecular norm.

Moment-vanishing tolerances are relative (absolute ones break across
scales): a residual passes when it is below 1e-6 times the integral of
|b| (1 + |x|)^m.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .cover import CoverParameters, CoverSpec, theta
from .errors import AdmissibilityError, MoleculeError
from .geometry import Ellipsoid, unit_ball_volume
from .metric import rho_many
from .polyproj import EllipsoidPolynomial, Polynomial, dual_basis, project_ellipsoid
from .quad import (QuadContext, SampledFunction, integrate_unbounded_vec, lq_norm,
                   monomial, multi_indices, rule_for_ellipsoid,
                   check_moment_integrability, _sup_grid)

MOMENT_TOL = 1e-6
NORM_SLACK = 1e-6


def _snap(x: float) -> float:
    r = round(x)
    return float(r) if abs(x - r) <= 1e-12 * max(1.0, abs(r)) else x


def moment_order_floor(params: CoverParameters, n: int, p: float) -> int:
    """Minimal integer m with m > (max(1, a4) n + 1) / (a6 p)."""
    thr = _snap((max(1.0, params.a4) * n + 1.0) / (params.a6 * p))
    return int(math.floor(thr)) + 1


def smoothness_order_floor(params: CoverParameters, n: int, p: float) -> int:
    """Minimal integer exceeding (a4 * moment_order_floor + 1) / a6."""
    thr = _snap((params.a4 * moment_order_floor(params, n, p) + 1.0) / params.a6)
    return int(math.floor(thr)) + 1


@dataclass(frozen=True)
class AdmissibleTriple:
    p: float
    q: float
    m: int
    n_p: int
    n_tilde_p: int

    @classmethod
    def create(cls, p: float, q: float, m: int, params: CoverParameters,
               n: int) -> "AdmissibleTriple":
        if not (0 < p <= 1):
            raise AdmissibilityError(f"p must lie in (0, 1], got {p}")
        if not (1 <= q):
            raise AdmissibilityError(f"q must lie in [1, inf], got {q}")
        if not (p < q):
            raise AdmissibilityError(f"need p < q, got p={p}, q={q}")
        n_p = moment_order_floor(params, n, p)
        if m < n_p:
            raise AdmissibilityError(
                f"m={m} is below the minimal moment order {n_p} for this cover")
        return cls(p, float(q), int(m), n_p, smoothness_order_floor(params, n, p))

    @property
    def inv_q(self) -> float:
        return 0.0 if math.isinf(self.q) else 1.0 / self.q


def decay_threshold(triple: AdmissibleTriple, params: CoverParameters, n: int) -> float:
    """Smallest admissible decay order (exclusive) for (p, q, m) on this cover."""
    p, m = triple.p, triple.m
    iq = triple.inv_q
    a4, a6 = params.a4, params.a6
    return max(a4 * (m + n - n * iq),
               (a4 / a6) * (1 - iq + m * a4),
               (a4 / a6) * (1 / p - iq + m * (a4 - a6)))


@dataclass(frozen=True)
class MolecularProfile:
    triple: AdmissibleTriple
    d: float
    sigma: float
    alpha1: float
    alpha2: float
    d_threshold: float

    def to_dict(self) -> dict:
        return {"p": self.triple.p, "q": self.triple.q, "m": self.triple.m,
                "d": self.d, "sigma": self.sigma, "alpha1": self.alpha1,
                "alpha2": self.alpha2, "d_threshold": self.d_threshold}


def molecular_profile(triple: AdmissibleTriple, d: float, params: CoverParameters,
                      n: int) -> MolecularProfile:
    thr = decay_threshold(triple, params, n)
    if not d > thr:
        raise AdmissibilityError(f"decay order d={d} must exceed {thr:.6g}")
    gap = 1.0 / triple.p - triple.inv_q
    sigma = gap / d
    if params.a4 == params.a6:
        alpha1 = alpha2 = 1.0  # the two formulas reduce exactly to 1
    else:
        a4, a6, m = params.a4, params.a6, triple.m
        alpha1 = (-gap + d * a6 / a4 - m * (a4 - a6)) / (d * (1 - sigma))
        alpha2 = (-gap + d * a4 / a6 + m * (a4 - a6)) / (d * (1 - sigma))
    return MolecularProfile(triple, float(d), sigma, alpha1, alpha2, thr)


def molecular_size(weighted: float, plain: float, profile: MolecularProfile) -> float:
    s, a1, a2 = profile.sigma, profile.alpha1, profile.alpha2
    return weighted ** s * (plain ** ((1 - s) * a1) + plain ** ((1 - s) * a2))


@dataclass(eq=False)
class Molecule:
    f: SampledFunction
    x0: np.ndarray
    profile: MolecularProfile
    norms: dict
    moment_residual: float = 0.0
    approximate: bool = False

    def to_dict(self) -> dict:
        return {"kind": "molecule", "center": list(map(float, self.x0)),
                "profile": self.profile.to_dict(),
                "norms": {k: float(v) for k, v in self.norms.items()},
                "residuals": {"moment_rel": float(self.moment_residual)},
                "approximate": self.approximate}


@dataclass(eq=False)
class Atom:
    f: SampledFunction
    host: Ellipsoid
    triple: AdmissibleTriple

    def to_dict(self) -> dict:
        return {"kind": "atom", "center": list(map(float, self.host.center)),
                "level": self.host.level,
                "triple": {"p": self.triple.p, "q": self.triple.q, "m": self.triple.m}}


def rho_weight(spec: CoverSpec, x0) -> callable:
    """Vectorized rho(x0, .) with a per-call array cache."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    cache: dict = {}

    def weight(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        key = hash(pts.tobytes())
        hit = cache.get(key)
        if hit is None:
            hit = rho_many(spec, np.broadcast_to(x0, pts.shape), pts)
            cache[key] = hit
        return hit

    return weight


def molecular_norm(f: SampledFunction, x0, profile: MolecularProfile, spec: CoverSpec,
                   ctx: QuadContext) -> Molecule:
    """Validate the molecule conditions and compute the three norms.

    Checks vanishing moments up to m (relative tolerance) and the
    integrability of the weighted norm; either failing raises
    :class:`MoleculeError`.  The weighted norm evaluates the
    quasidistance pointwise inside the quadrature.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    m, q = profile.triple.m, profile.triple.q
    alphas = multi_indices(ctx.n, m)

    def base_vec(pts):
        bv = f(pts)
        cols = [bv * monomial(pts, a) for a in alphas]
        cols.append(np.abs(bv) * (1 + np.linalg.norm(pts - x0, axis=1)) ** m)
        if not math.isinf(q):
            cols.append(np.abs(bv) ** q)
        return np.column_stack(cols)

    vals, tail, _ = integrate_unbounded_vec(base_vec, f, ctx, x0=x0)
    moments, scale = vals[:len(alphas)], vals[len(alphas)]
    residual = float(np.max(np.abs(moments))) / max(scale, 1e-300)
    if residual > MOMENT_TOL:
        raise MoleculeError(f"moment residual {residual:.3g} exceeds {MOMENT_TOL:.0e}")
    check_moment_integrability(f, x0, m, ctx, strict=True)

    weight = rho_weight(spec, x0)
    approximate = False
    if math.isinf(q):
        plain = lq_norm(f, q, None, ctx)
        region = f.support_hint if f.support_hint is not None else Ellipsoid(
            x0, min(64.0, ctx.r_max) * np.eye(ctx.n))
        grid = _sup_grid(region, ctx)
        weighted = float(np.max(np.abs(f(grid)) * weight(grid) ** profile.d))
        approximate = True
    else:
        plain = float(vals[-1]) ** (1.0 / q)

        def weighted_vec(pts):
            return (np.abs(f(pts)) * weight(pts) ** profile.d)[:, None] ** q

        wvals, wtail, _ = integrate_unbounded_vec(weighted_vec, f, ctx, x0=x0)
        if wtail > max(ctx.abs_tol, ctx.rel_tol * float(wvals[0])):
            raise MoleculeError(
                f"weighted norm truncation did not converge (tail {wtail:.3g})")
        weighted = float(wvals[0]) ** (1.0 / q)

    size = molecular_size(weighted, plain, profile)
    norms = {"lq": plain, "weighted_lq": weighted, "molecular": size}
    return Molecule(f, x0, profile, norms, residual, approximate)


def normalize_molecule(mol: Molecule) -> tuple[Molecule, float]:
    """Rescale b <- b / c so the molecular size is 1; returns (molecule, c).

    The size is strictly decreasing in c (all exponents are positive), so
    the scale solves a monotone 1-d root-finding problem; norms rescale
    analytically, no re-quadrature.
    """
    prof = mol.profile
    w, b = mol.norms["weighted_lq"], mol.norms["lq"]
    if b == 0.0:
        raise MoleculeError("cannot normalize the zero molecule")

    def g(log2c):
        c = 2.0 ** log2c
        return math.log(molecular_size(w / c, b / c, prof))

    lo, hi = -500.0, 500.0
    log2c = brentq(g, lo, hi, xtol=1e-12, rtol=8.9e-16)
    c = 2.0 ** log2c
    f = mol.f
    scaled = SampledFunction(lambda p, _c=c: f(p) / _c, f.support_hint, f.decay_hint, f.breaks)
    norms = {"lq": b / c, "weighted_lq": w / c,
             "molecular": molecular_size(w / c, b / c, prof)}
    out = Molecule(scaled, mol.x0, prof, norms, mol.moment_residual, mol.approximate)
    return out, c


@dataclass
class AtomReport:
    support_ok: bool
    norm_ratio: float           # ||a||_q / |host|^{1/q - 1/p}
    max_moment_residual: float  # relative
    chart_consistent: bool = True

    @property
    def passes(self) -> bool:
        return (self.support_ok and self.norm_ratio <= 1.0 + NORM_SLACK
                and self.max_moment_residual <= MOMENT_TOL and self.chart_consistent)


def _atom_checks(f, host: Ellipsoid, triple: AdmissibleTriple, ctx: QuadContext,
                 breaks) -> tuple[float, float]:
    pts, w = rule_for_ellipsoid(host, breaks, ctx)
    fv = f(pts)
    absf = np.abs(fv)
    iq = triple.inv_q
    if math.isinf(triple.q):
        norm = float(np.max(absf))
    else:
        norm = float(w @ absf ** triple.q) ** (1.0 / triple.q)
    bound = host.volume ** (iq - 1.0 / triple.p)
    alphas = multi_indices(host.n, triple.m)
    resid = 0.0
    for a in alphas:
        mono = monomial(pts, a)
        num = abs(float(w @ (fv * mono)))
        den = float(w @ (absf * np.abs(mono)))
        if den > 0:
            resid = max(resid, num / den)
        elif num > 0:
            resid = math.inf
    return norm / bound, resid


def validate_atom(f, host: Ellipsoid, triple: AdmissibleTriple, ctx: QuadContext,
                  both_charts: bool = False) -> AtomReport:
    """Check the three atom conditions; the report carries the margins.

    Support is probed by sampling outside the host (values must vanish);
    the norm and moment conditions are checked by quadrature over the
    host, optionally repeated in pulled-back unit-ball coordinates.
    """
    fn = f.f if isinstance(f, Atom) else f
    breaks = fn.breaks if isinstance(fn, SampledFunction) else ()
    ev = fn if callable(fn) else fn.evaluator

    outside = []
    for kappa in (1.0 + 1e-6, 1.2, 2.0, 8.0):
        outside.append(host.map_from_ball(kappa * _unit_sphere(host.n, 16)))
    outside = np.vstack(outside)
    inside_scale = float(np.max(np.abs(np.asarray(ev(_sup_grid(host, ctx)), dtype=float))))
    out_vals = float(np.max(np.abs(np.asarray(ev(outside), dtype=float))))
    support_ok = out_vals <= 1e-12 * max(1.0, inside_scale)

    wrapped = fn if isinstance(fn, SampledFunction) else SampledFunction(ev)
    ratio, resid = _atom_checks(wrapped, host, triple, ctx, breaks)

    chart_ok = True
    if both_charts:
        pulled = SampledFunction(lambda u: wrapped(host.map_from_ball(u)),
                                 breaks=tuple())
        ball = Ellipsoid(np.zeros(host.n), np.eye(host.n))
        r2, m2 = _atom_checks(pulled, ball, triple, ctx, ())
        # the Jacobian rescales the pullback norm ratio back onto the host's
        if not math.isinf(triple.q):
            r2 *= (host.volume / ball.volume) ** (1.0 / triple.p)
        chart_ok = (abs(r2 - ratio) <= 1e-8 * max(1.0, ratio)
                    and (m2 <= MOMENT_TOL) == (resid <= MOMENT_TOL))
    return AtomReport(support_ok, ratio, resid, chart_ok)


def _unit_sphere(n: int, k: int) -> np.ndarray:
    if n == 1:
        return np.array([[-1.0], [1.0]])
    ang = 2 * np.pi * (np.arange(k) + 0.37) / k
    return np.column_stack([np.cos(ang), np.sin(ang)])


def radial_maximal(g: SampledFunction, psi: SampledFunction, x, spec: CoverSpec,
                   t_grid, ctx: QuadContext) -> float:
    """Grid-in-scale lower bound for the radial maximal function at x.

    For each level the kernel is the volume-normalized pullback of psi
    through the cover matrix; the pairing is integrated over wherever the
    kernel lives, and the maximum absolute pairing over the level grid is
    returned.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    best = 0.0
    for t in np.atleast_1d(np.asarray(t_grid, dtype=float)):
        e = theta(spec, x, float(t))
        det = abs(float(np.linalg.det(e.matrix)))
        if psi.support_hint is not None:
            s = psi.support_hint
            region = Ellipsoid(x - e.matrix @ s.center, e.matrix @ s.matrix)
        else:
            region = e

        def kernel(pts, _e=e, _det=det):
            u = (x - pts) @ _e.inverse.T
            return g(pts) * psi(u) / _det

        pts, w = rule_for_ellipsoid(region, g.breaks, ctx)
        best = max(best, abs(float(w @ kernel(pts))))
    return best


# ---------------------------------------------------------------------------
# manufactured test molecules


def _bump_on(core: Ellipsoid, rng=None, amplitude: float = 1.0) -> SampledFunction:
    n = core.n
    coeffs = np.zeros(0)
    if rng is not None:
        coeffs = rng.uniform(-0.4, 0.4, size=n + (1 if n == 2 else 0))

    def ev(pts):
        u = core.map_to_ball(np.atleast_2d(pts))
        s2 = np.sum(u * u, axis=-1)
        inside = s2 < 1.0
        vals = np.zeros(u.shape[0])
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            vals[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
        if coeffs.size:
            modulation = 1.0 + u[:, :n] @ coeffs[:n]
            if n == 2:
                modulation = modulation + coeffs[2] * u[:, 0] * u[:, 1]
            vals = vals * modulation
        return vals

    return SampledFunction(ev, support_hint=core, breaks=(core,))


def manufacture_compact(spec: CoverSpec, x0, t_host: float, m: int, ctx: QuadContext,
                        rng=None, core_shift: float = 0.7,
                        amplitude: float = 1.0) -> SampledFunction:
    """Bump minus its moment projection: exact vanishing moments, compact support."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    host = theta(spec, x0, t_host)
    core = theta(spec, x0, t_host + core_shift)
    g = _bump_on(core, rng, amplitude)
    proj = project_ellipsoid(g, host, m, ctx)

    def ev(pts):
        return g(pts) - proj(pts)

    return SampledFunction(ev, support_hint=host, breaks=(core, host))


def manufacture_tailed(spec: CoverSpec, x0, t_host: float, profile: MolecularProfile,
                       ctx: QuadContext, rng=None, tail_weight: float = 0.15,
                       extra_decay: float = 3.0) -> SampledFunction:
    """Compact molecule plus a power-law tail with a polynomial counterweight.

    The tail decays fast enough for the weighted norm and the
    counterweight polynomial on the host cancels its total moments, so
    the sum keeps exactly vanishing moments while losing compact support.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    m = profile.triple.m
    params = spec.params
    compact = manufacture_compact(spec, x0, t_host, m, ctx, rng)
    host = theta(spec, x0, t_host)
    n = spec.n
    iq = profile.triple.inv_q
    s_h = math.ceil(max((profile.d / params.a4 + n * iq) / 2.0,
                        (m + n) / 2.0) + extra_decay)

    def tail_ev(pts):
        u = host.map_to_ball(np.atleast_2d(pts))
        return (1.0 + np.sum(u * u, axis=-1)) ** (-s_h)

    d_eff = 2.0 * s_h * params.a4
    tail = SampledFunction(tail_ev, decay_hint=(d_eff, x0), breaks=(host,))

    basis = dual_basis(m, n)

    def tail_moments_vec(pts):
        u = host.map_to_ball(pts)
        tv = tail_ev(pts)
        return np.column_stack([tv * monomial(u, a) for a in basis.indices])

    tvals, _, _ = integrate_unbounded_vec(tail_moments_vec, tail, ctx, x0=x0)
    det = abs(float(np.linalg.det(host.matrix)))
    coeffs = basis.coeff_matrix @ (np.asarray(tvals) / (det * unit_ball_volume(n)))
    counter = EllipsoidPolynomial(Polynomial(n, basis.indices, coeffs), host)

    def ev(pts):
        return compact(pts) + tail_weight * (tail_ev(np.atleast_2d(pts)) - counter(pts))

    return SampledFunction(ev, support_hint=None, decay_hint=(d_eff, x0),
                           breaks=compact.breaks)


def atom_candidate(spec: CoverSpec, x0, t: float, triple: AdmissibleTriple,
                   ctx: QuadContext, rng=None, slack: float = 1e-9) -> Atom:
    """A genuine atom: manufactured zero-moment bump scaled to the tight norm bound."""
    host = theta(spec, x0, t)
    f = manufacture_compact(spec, x0, t, triple.m, ctx, rng)
    norm = lq_norm(f, triple.q, host, ctx)
    bound = host.volume ** (triple.inv_q - 1.0 / triple.p)
    scale = bound / norm * (1.0 - slack)
    g = SampledFunction(lambda p, _s=scale: f(p) * _s, f.support_hint, None, f.breaks)
    return Atom(g, host, triple)
