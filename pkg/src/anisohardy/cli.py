"""Config-driven command line front door.

Subcommands: validate-cover, rho, molecule-norm, decompose, report.
Configs and reports are JSON with stable key order; tables are CSV with
a header row.  All randomness flows from the single config seed, which
is echoed into every report, so identical configs give bit-identical
artifacts.

Exit codes: 0 ok, 1 config error, 2 cover validation failure,
3 decomposition defect.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cover as cover_mod
from .cover import CoverSpec, cover_from_config
from .decompose import decompose, theoretical_slopes
from .errors import (AdmissibilityError, CoverError, DecompositionError,
                     EstimationError, MoleculeError)
from .geometry import Ellipsoid
from .hardy import (AdmissibleTriple, atom_candidate, manufacture_compact,
                    manufacture_tailed, molecular_norm, molecular_profile)
from .metric import rho
from .quad import QuadContext, SampledFunction

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_COVER = 2
EXIT_DECOMP = 3


class ConfigError(ValueError):
    pass


def _get(cfg: dict, path: str, default=None, required: bool = False):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"missing config field: {path}")
            return default
        node = node[part]
    return node


@dataclass
class RunConfig:
    raw: dict
    spec: CoverSpec
    triple: AdmissibleTriple
    profile: object
    ctx: QuadContext
    seed: int
    j_max: int
    output: str
    reconstruction_rel: float

    @classmethod
    def parse(cls, cfg: dict, seed_override=None, jmax_override=None,
              tol_override=None) -> "RunConfig":
        try:
            spec = cover_from_config(_get(cfg, "cover", required=True))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"cover: {exc}") from exc
        seed = int(seed_override if seed_override is not None else _get(cfg, "seed", 0))
        spec.seed = seed

        p = float(_get(cfg, "triple.p", required=True))
        q_raw = _get(cfg, "triple.q", required=True)
        q = math.inf if q_raw in ("inf", "Infinity") else float(q_raw)
        m = int(_get(cfg, "triple.m", required=True))
        triple = AdmissibleTriple.create(p, q, m, spec.params, spec.n)
        profile = molecular_profile(triple, float(_get(cfg, "d", required=True)),
                                    spec.params, spec.n)

        quad_over = dict(_get(cfg, "quad", {}))
        ctx = QuadContext(n=spec.n, **{k: v for k, v in quad_over.items()})
        j_max = int(jmax_override if jmax_override is not None else _get(cfg, "j_max", 40))
        tols = _get(cfg, "tolerances", {}) or {}
        rec = float(tol_override if tol_override is not None
                    else tols.get("reconstruction_rel", 1e-3))
        return cls(cfg, spec, triple, profile, ctx, seed, j_max,
                   str(_get(cfg, "output", "out")), rec)


def canonical_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from exc


def build_molecule_function(rc: RunConfig) -> tuple[SampledFunction, np.ndarray]:
    mcfg = _get(rc.raw, "molecule", required=True)
    kind = _get(mcfg, "kind", required=True)
    center = np.asarray(_get(mcfg, "center", [0.0] * rc.spec.n), dtype=float)
    seed = int(_get(mcfg, "seed", rc.seed))
    rng = np.random.default_rng(seed)
    t_host = float(_get(mcfg, "t_host", -2.0))
    if kind == "manufactured":
        if bool(_get(mcfg, "tail", False)):
            f = manufacture_tailed(rc.spec, center, t_host, rc.profile, rc.ctx, rng,
                                   tail_weight=float(_get(mcfg, "tail_weight", 0.15)))
        else:
            f = manufacture_compact(rc.spec, center, t_host, rc.triple.m, rc.ctx, rng,
                                    core_shift=float(_get(mcfg, "core_shift", 0.7)),
                                    amplitude=float(_get(mcfg, "amplitude", 1.0)))
        return f, center
    if kind == "atom":
        atom = atom_candidate(rc.spec, center, t_host, rc.triple, rc.ctx, rng)
        return atom.f, center
    if kind == "file-table":
        return _table_function(rc, mcfg, center), center
    raise ConfigError(f"molecule.kind must be manufactured|atom|file-table, got {kind!r}")


def _table_function(rc: RunConfig, mcfg: dict, center: np.ndarray) -> SampledFunction:
    path = _get(mcfg, "path", required=True)
    try:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"molecule.path: {exc}") from exc
    if rc.spec.n == 1:
        xs, vals = rows[:, 0], rows[:, 1]
        order = np.argsort(xs)
        xs, vals = xs[order], vals[order]
        lo, hi = float(xs[0]), float(xs[-1])
        support = Ellipsoid(np.array([(lo + hi) / 2]), np.array([[(hi - lo) / 2]]))

        def ev(pts):
            return np.interp(np.atleast_2d(pts)[:, 0], xs, vals, left=0.0, right=0.0)

        return SampledFunction(ev, support_hint=support, breaks=(support,))
    from scipy.interpolate import RegularGridInterpolator
    g1 = np.unique(rows[:, 0])
    g2 = np.unique(rows[:, 1])
    grid = rows[:, 2].reshape(len(g1), len(g2))
    interp = RegularGridInterpolator((g1, g2), grid, bounds_error=False, fill_value=0.0)
    half = np.array([(g1[-1] - g1[0]) / 2, (g2[-1] - g2[0]) / 2])
    mid = np.array([(g1[-1] + g1[0]) / 2, (g2[-1] + g2[0]) / 2])
    support = Ellipsoid(mid, np.diag(half * math.sqrt(2.0)))
    return SampledFunction(lambda pts: np.asarray(interp(np.atleast_2d(pts))),
                           support_hint=support, breaks=(support,))


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_validate_cover(rc: RunConfig, out_dir: Path | None) -> int:
    spec = rc.spec
    rng = np.random.default_rng(rc.seed)
    xs = rng.uniform(-4, 4, size=(2000, spec.n))
    ts = rng.uniform(-6, 10, size=2000)
    vol = cover_mod.validate_volume_envelope(spec, xs, ts)
    trans = cover_mod.validate_transition_envelope(spec, rng=np.random.default_rng(rc.seed + 1))
    j = cover_mod.nesting_shift(spec, rng=np.random.default_rng(rc.seed + 2))
    c1, c2 = cover_mod.zero_level_uniformity(spec, rng=np.random.default_rng(rc.seed + 3))
    report = {
        "seed": rc.seed,
        "kind": spec.kind,
        "a1_hat": vol.a1_hat, "a2_hat": vol.a2_hat,
        "a3_hat": trans.a3_hat, "a4_hat": trans.a4_hat,
        "a5_hat": trans.a5_hat, "a6_hat": trans.a6_hat,
        "a4_fit": trans.a4_fit, "a6_fit": trans.a6_fit,
        "J": j, "c1_hat": c1, "c2_hat": c2,
        "violations": list(vol.violations) + list(trans.violations),
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "cover_report.json", report)
    return EXIT_OK if not report["violations"] else EXIT_COVER


def cmd_rho(rc: RunConfig, x_str: str, y_str: str) -> int:
    x = np.array([float(v) for v in x_str.split(",")])
    y = np.array([float(v) for v in y_str.split(",")])
    if x.size != rc.spec.n or y.size != rc.spec.n:
        raise ConfigError(f"points must have dimension {rc.spec.n}")
    est = rho(rc.spec, x, y)
    print(json.dumps({"value": est.value, "t_star": est.level_t_star,
                      "witness_center": [float(v) for v in est.witness_center]},
                     indent=2, sort_keys=True))
    return EXIT_OK


def cmd_molecule_norm(rc: RunConfig, out_dir: Path | None) -> int:
    f, center = build_molecule_function(rc)
    mol = molecular_norm(f, center, rc.profile, rc.spec, rc.ctx)
    desc = mol.to_dict()
    desc["seed"] = rc.seed
    print(json.dumps(desc, indent=2, sort_keys=True))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "molecule.json", desc)
    return EXIT_OK


def cmd_decompose(rc: RunConfig, out_dir: Path) -> int:
    f, center = build_molecule_function(rc)
    result = decompose(f, center, rc.profile, rc.spec, rc.ctx, j_max=rc.j_max)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = result.to_summary_dict()
    summary["seed"] = rc.seed
    summary["config"] = rc.raw
    summary["l1_mass"] = result.l1_mass
    _write_json(out_dir / "summary.json", summary)
    result.write_csv(out_dir / "lambda.csv")
    if bool(_get(rc.raw, "emit_profiles", rc.spec.n == 1)):
        _write_profiles(result, rc, out_dir / "profiles.csv")
    threshold = rc.reconstruction_rel * max(result.l1_mass, 1e-300)
    if result.reconstruction_l1_error > threshold:
        print(f"reconstruction defect: L1 error {result.reconstruction_l1_error:.3g} "
              f"exceeds {threshold:.3g}", file=sys.stderr)
        return EXIT_DECOMP
    print(f"decomposed into {len(result.atoms)} atoms; "
          f"sum lambda^p = {result.sum_lambda_p:.6g}; "
          f"reconstruction L1 error = {result.reconstruction_l1_error:.3g}")
    return EXIT_OK


def _write_profiles(result, rc: RunConfig, path: Path) -> None:
    if not result.atoms:
        path.write_text("x,term,value\n")
        return
    host = result.atoms[-1].host
    grid = host.map_from_ball(np.linspace(-1, 1, 201)[:, None]) if rc.spec.n == 1 else \
        host.map_from_ball(np.stack(np.meshgrid(np.linspace(-1, 1, 41),
                                                np.linspace(-1, 1, 41)), -1).reshape(-1, 2))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"x{i+1}" for i in range(rc.spec.n)] + ["term", "value"])
        for k, atom in enumerate(result.atoms):
            vals = atom.f(grid)
            for pt, v in zip(np.atleast_2d(grid), vals):
                wr.writerow([repr(float(c)) for c in pt] + [k, repr(float(v))])


def cmd_report(run_dir: Path) -> int:
    summary_path = run_dir / "summary.json"
    lam_path = run_dir / "lambda.csv"
    if not summary_path.exists() or not lam_path.exists():
        print(f"missing artifacts in {run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = json.loads(summary_path.read_text())
        with open(lam_path) as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            float(row["lambda_j"])
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        print(f"corrupt artifacts: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    theo = summary.get("decay_slopes", {}).get("theoretical", {})
    r, ell = summary.get("r", 0), summary.get("ell", 1)
    with open(run_dir / "slopes.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["j", "log2_lambda", "regime", "theory_slope"])
        for row in rows:
            if row["kind"] != "difference":
                continue
            j = int(row["j"])
            lam = float(row["lambda_j"])
            if lam <= 0:
                continue
            regime = "negative" if (r - j * ell) < 0 else "nonnegative"
            wr.writerow([j, repr(math.log2(lam)), regime, repr(float(theo.get(regime, 0.0)))])

    margins = [float(row["norm_margin"]) for row in rows]
    resid = [float(row["moment_residual"]) for row in rows]
    with open(run_dir / "margins_hist.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["quantity", "bin_left", "bin_right", "count"])
        for name, data in (("norm_margin", margins), ("moment_residual", resid)):
            if not data:
                continue
            counts, edges = np.histogram(np.asarray(data), bins=10)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                wr.writerow([name, repr(float(lo)), repr(float(hi)), int(c)])
    print(f"wrote {run_dir / 'slopes.csv'} and {run_dir / 'margins_hist.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anisohardy",
        description="Ellipsoid-cover quasidistance and atomic decomposition toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jmax", type=int, default=None, help="override level cap")
        p.add_argument("--tol", type=float, default=None,
                       help="override relative reconstruction tolerance")

    add_common(sub.add_parser("validate-cover", help="check declared cover parameters"))
    p_rho = sub.add_parser("rho", help="evaluate the quasidistance")
    add_common(p_rho)
    p_rho.add_argument("--x", required=True, help="first point, comma separated")
    p_rho.add_argument("--y", required=True, help="second point, comma separated")
    add_common(sub.add_parser("molecule-norm", help="validate and size a molecule"))
    add_common(sub.add_parser("decompose", help="run the atomic decomposition"))
    p_rep = sub.add_parser("report", help="emit plot-ready tables from a run directory")
    p_rep.add_argument("run_dir", help="directory with summary.json and lambda.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return cmd_report(Path(args.run_dir))
    try:
        cfg = load_config(args.config)
        rc = RunConfig.parse(cfg, args.seed, args.jmax, args.tol)
    except (ConfigError, AdmissibilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out) if args.out else Path(rc.output)
    try:
        if args.command == "validate-cover":
            return cmd_validate_cover(rc, out_dir)
        if args.command == "rho":
            return cmd_rho(rc, args.x, args.y)
        if args.command == "molecule-norm":
            return cmd_molecule_norm(rc, out_dir)
        if args.command == "decompose":
            return cmd_decompose(rc, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CoverError, EstimationError) as exc:
        print(f"cover error: {exc}", file=sys.stderr)
        return EXIT_COVER
    except (DecompositionError, MoleculeError) as exc:
        print(f"decomposition error: {exc}", file=sys.stderr)
        return EXIT_DECOMP
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
