"""Command-line experiment runner.

Exit status: 0 when the experiment passes, 2 when it runs but fails its
criterion (or hits a numerical failure), 1 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from . import characteristics as chars
from . import coefficients as coef
from . import fields, paths, refsolver, taylor, viscosity
from .config import ExperimentConfig, parse_config
from .errors import ConfigError, ParameterError, PathwiseError
from .rng import stream

log = logging.getLogger("pathwise")

EXIT_PASS, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


@dataclass
class Outcome:
    header: tuple
    rows: list
    passed: bool
    summary: dict = field(default_factory=dict)
    trailer: list = field(default_factory=list)
    write_csv: Optional[Callable[[Path], None]] = None


# --- families ---------------------------------------------------------------


def _params(block: dict, allowed: dict) -> dict:
    given = block["params"]
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for family '{block['family']}'")
    return {**allowed, **given}


def build_suite(cfg: ExperimentConfig) -> coef.CoefficientSuite:
    b = cfg.block("coefficients")
    d, dp = cfg.dims
    if b["family"] == "heat-transport":
        p = _params(b, {"sigma": 1.0, "diffusivity": 0.5})
        return coef.affine_suite(diffusion=p["diffusivity"], noise_z=p["sigma"], d=d, dprime=dp)
    if b["family"] == "affine":
        p = _params(b, {"diffusion": 0.5, "drift_z": 0.0, "drift_y": 0.0, "source": 0.0,
                        "noise_z": 0.0, "noise_y": 0.0, "noise_0": 0.0})
        return coef.affine_suite(**p, d=d, dprime=dp)
    raise ConfigError(f"unknown coefficient family '{b['family']}' (key 'coefficients.family')")


def _with_drift(u: fields.RandomField, c: float) -> fields.RandomField:
    """``u + c t`` with its suite."""
    if c == 0:
        return u

    def ev(t, x, path):
        return u.evaluator(t, x, path) + c * t

    def su(t, x, path):
        s = u.suite_evaluator(t, x, path)
        return fields.DerivativeSuite(s.value + c * t, s.dt + c, s.dx, s.dxx, s.dw, s.dxw, s.dww)

    return fields.RandomField(ev, su, "composite", u.dim, u.noise_dim)


def build_field(cfg: ExperimentConfig) -> fields.RandomField:
    b = cfg.block("field")
    if cfg.dims != (1, 1):
        raise ConfigError("field families are defined for dims = [1, 1]")
    if b["family"] == "transported-heat":
        p = _params(b, {"sigma": 1.0, "var0": 1.0, "diffusivity": 0.5, "mass": 1.0, "mean": 0.0})
        u = fields.transported_heat(**p)
    elif b["family"] == "monomial":
        p = _params(b, {"power": 2})
        n = int(p["power"])
        if n < 0:
            raise ConfigError("field.params.power must be nonnegative")
        mono = lambda k: (lambda t, x, bb: (np.prod(range(n - k + 1, n + 1)) * x ** (n - k)) if n >= k
                          else np.zeros_like(x))
        zero = lambda t, x, bb: np.zeros_like(x)
        u = fields.scalar_markov_field(mono(0), zero, mono(1), mono(2), zero, zero, zero)
    else:
        raise ConfigError(f"unknown field family '{b['family']}' (key 'field.family')")
    return _with_drift(u, float(b["corrupt"]))


def build_initial(cfg: ExperimentConfig, name: str = "initial") -> Callable:
    b = cfg.block(name)
    if b["family"] == "gaussian":
        p = _params(b, {"var": 1.0, "mass": 1.0, "mean": 0.0, "offset": 0.0})
        if p["var"] <= 0:
            raise ConfigError(f"{name}.params.var must be positive")
        v, m, mu, off = float(p["var"]), float(p["mass"]), float(p["mean"]), float(p["offset"])
        return lambda x: off + m * np.exp(-0.5 * (np.asarray(x) - mu) ** 2 / v) / np.sqrt(2 * np.pi * v)
    if b["family"] == "constant":
        p = _params(b, {"value": 0.0})
        c = float(p["value"])
        return lambda x: np.full(np.shape(x), c)
    raise ConfigError(f"unknown initial family '{b['family']}' (key '{name}.family')")


def build_paths(cfg: ExperimentConfig) -> list[paths.SamplePath]:
    b = cfg.block("path")
    if b["file"]:
        if b["count"] != 1:
            raise ConfigError("path.count must be 1 when path.file is given")
        out = [paths.read_path(b["file"])]
    else:
        if b["count"] < 1:
            raise ConfigError("path.count must be positive")
        out = [paths.sample_path(cfg.dims[0], float(b["T"]), b["N"], cfg.seed + i) for i in range(b["count"])]
    if b["refine"] > 1:
        out = [paths.refine(p, b["refine"]) for p in out]
    return out


def build_lattice(cfg: ExperimentConfig) -> taylor.ScanLattice:
    b = cfg.block("lattice")
    exps = [int(e) for e in b["delta_exps"]]
    if len(exps) != 2 or exps[0] > exps[1]:
        raise ConfigError("lattice.delta_exps must be [coarsest, finest] exponents")
    deltas = [2.0 ** -k for k in range(exps[0], exps[1] + 1)]
    if b["pairing"] == "matched":
        return taylor.ScanLattice.matched(deltas, b["coeffs"], cfg.dims[1])
    return taylor.ScanLattice(deltas, b["coeffs"], b["pairing"])


def build_points(cfg: ExperimentConfig, path: paths.SamplePath, index: int) -> list[tuple[float, float]]:
    b = cfg.block("points")
    if b["count"]:
        gen = stream(cfg.seed, "points", index)
        lo, hi = b["t_range"]
        ks = gen.integers(int(np.ceil(lo / path.dt)), int(np.floor(hi / path.dt)) + 1, b["count"])
        xs = gen.uniform(b["x_range"][0], b["x_range"][1], b["count"])
        return [(float(k * path.dt), float(x)) for k, x in zip(ks, xs)]
    if len(b["t"]) != len(b["x"]) or not b["t"]:
        raise ConfigError("points.t and points.x must be nonempty lists of equal length (or set points.count)")
    return [(float(t), float(x)) for t, x in zip(b["t"], b["x"])]


def _grid(cfg: ExperimentConfig) -> refsolver.FDGrid:
    b = cfg.block("grid")
    return refsolver.FDGrid(float(b["x_lo"]), float(b["x_hi"]), b["n_x"], b["boundary"])


def _solver_args(cfg: ExperimentConfig) -> dict:
    b = cfg.block("solver")
    return {"t_end": float(b["t_end"]) or None, "record_every": b["record_every"]}


# --- experiments ------------------------------------------------------------


def run_gen_path(cfg, out_dir, threads):
    ps = build_paths(cfg)
    rows = []
    for i, p in enumerate(ps):
        stem = out_dir / f"path_{i}"
        paths.write_path(p, stem.with_suffix(".bin"))
        paths.export_csv(p, stem.with_suffix(".csv"))
        rows.append((p.seed, p.dimension, p.mesh, repr(p.horizon), stem.with_suffix(".bin").name))
    return Outcome(("seed", "d", "N", "T", "file"), rows, True)


def run_levy_check(cfg, out_dir, threads):
    tol = cfg.block("tolerances")["chen"]
    rows, worst = [], 0.0
    for i, p in enumerate(build_paths(cfg)):
        gen = stream(cfg.seed, "triples", i)
        triples = [(0, p.mesh // 2, p.mesh)] + [tuple(sorted(gen.choice(p.mesh + 1, 3, replace=False)))
                                                 for _ in range(20)]
        for a, b, c in triples:
            s, u, t = a * p.dt, b * p.dt, c * p.dt
            lvl = paths.second_level(p, s, t)
            chen = paths.chen_check(p, s, u, t)
            anti = float(np.max(np.abs(lvl.levy + lvl.levy.T)))
            BB = np.outer(lvl.increment, lvl.increment)
            prod = float(np.max(np.abs(lvl.strat_matrix + lvl.strat_matrix.T - BB))) / max(1.0, float(np.max(np.abs(BB))))
            worst = max(worst, chen, anti, prod)
            rows.append((p.seed, s, u, t, chen, anti, prod))
    return Outcome(("seed", "s", "u", "t", "chen_defect", "antisymmetry", "product_rule"), rows, worst <= tol,
                   {"max_defect": worst})


def run_taylor_order(cfg, out_dir, threads):
    suite, u, lat = build_suite(cfg), build_field(cfg), build_lattice(cfg)
    tol = cfg.block("tolerances")
    rows, fits = [], []
    for i, p in enumerate(build_paths(cfg)):
        for t, x in build_points(cfg, p, i):
            fit = taylor.order_estimate(u, suite, t, x, p, lat)
            for dl, hn, r, sc in zip(fit.deltas, fit.h_norms, fit.remainders, fit.scales):
                rows.append((p.seed, t, x, float(dl), float(hn), float(r), float(sc)))
            fits.append((fit.slope, fit.intercept, fit.n_points))
    ok = sum(f[0] >= tol["slope"] for f in fits)
    passed = ok >= tol["quota"] * len(fits)
    return Outcome(("seed", "t", "x", "delta", "h_norm", "remainder", "scale"), rows, passed,
                   {"slopes": [f[0] for f in fits], "passing": ok},
                   [("slope", "intercept", "n_points")] + fits)


def run_check_viscosity(cfg, out_dir, threads):
    suite, u, lat = build_suite(cfg), build_field(cfg), build_lattice(cfg)
    tol = cfg.block("tolerances")
    ps = build_paths(cfg)
    pts = [build_points(cfg, p, i) for i, p in enumerate(ps)]
    rep = viscosity.consistency_experiment(u, suite, pts, ps, tol["alpha"], tol["tau"], tol["f_tol"], lat)
    return Outcome(rep.HEADER, rep.rows, rep.passed,
                   {"max_abs_a_minus_f": rep.max_abs_a_minus_f, "max_ratio": rep.max_ratio})


def run_convert(cfg, out_dir, threads):
    suite, u, lat = build_suite(cfg), build_field(cfg), build_lattice(cfg)
    tol = cfg.block("tolerances")
    lam = float(cfg.block("transform")["lam"])
    rows, agree_all, ident = [], True, 0.0
    for i, p in enumerate(build_paths(cfg)):
        ex = coef.Exponent.build(lambda t: lam, p.times)
        s2, u2 = coef.change_of_variable(suite, ex), coef.transform_field(u, ex)
        for t, x in build_points(cfg, p, i):
            q = np.array([[x]])
            su, st = u.suite(t, q, p), u2.suite(t, q, p)
            e = np.exp(ex(t))
            ident = max(ident, float(abs(st.value[0] - e * su.value[0])),
                        float(abs(st.dt[0] - lam * st.value[0] - e * su.dt[0])),
                        float(np.max(np.abs(st.dw - e * su.dw))), float(np.max(np.abs(st.dxx - e * su.dxx))))
            for side in ("sub", "super"):
                a = viscosity.check_point(u, suite, t, x, p, [taylor.canonical_jet(u, t, x, p)], side,
                                          tol["alpha"], tol["tau"], tol["f_tol"], lat)
                # remainders of the transformed field carry the factor e^eta
                b = viscosity.check_point(u2, s2, t, x, p, [taylor.canonical_jet(u2, t, x, p)], side,
                                          tol["alpha"], tol["tau"] * e, tol["f_tol"] * e, lat)
                agree = a.passed == b.passed and a.skipped == b.skipped
                agree_all &= agree
                rows.append((p.seed, t, x, side, a.passed, b.passed, agree))
    return Outcome(("seed", "t", "x", "side", "pass", "pass_transformed", "agree"), rows,
                   agree_all and ident <= tol["identity"], {"identity_residual": ident})


def run_solve_fd(cfg, out_dir, threads):
    suite, u0, grid = build_suite(cfg), build_initial(cfg), _grid(cfg)
    p = build_paths(cfg)[0]
    scheme = cfg.block("solver")["scheme"]
    if scheme not in ("stratonovich", "ito"):
        raise ConfigError(f"unknown solver.scheme '{scheme}'")
    solve = refsolver.solve_fd_stratonovich if scheme == "stratonovich" else refsolver.solve_fd_ito
    sol = solve(suite, u0, grid, p, **_solver_args(cfg))
    edge = float(np.max(np.abs(sol.values[:, [0, -1]])))
    meta = {"cfl": sol.cfl, "boundary": sol.boundary, "boundary_influence": edge, "path_seed": p.seed,
            "scheme": scheme}

    def write(target: Path):
        fields.write_sampled_csv(target, sol.times, sol.xs, sol.values, meta)

    return Outcome(("t", "x", "value"), [], True, meta, write_csv=write)


def _query_x(cfg) -> np.ndarray:
    b = cfg.block("points")
    if b["x"]:
        return np.asarray(b["x"], dtype=np.float64)
    if b["count"]:
        return np.linspace(b["x_range"][0], b["x_range"][1], b["count"])
    raise ConfigError("points.x or points.count is required")


def _mc(cfg, threads) -> chars.MCSettings:
    b = cfg.block("mc")
    return chars.MCSettings(b["samples"], b["inner_mesh"], cfg.seed, threads)


def run_solve_characteristics(cfg, out_dir, threads):
    suite, w0 = build_suite(cfg), build_initial(cfg)
    b = cfg.block("mc")
    p = build_paths(cfg)[0]
    box = np.linspace(b["box"][0], b["box"][1], b["box_n"])
    sol = chars.solve(suite, w0, p, float(b["t"]), _query_x(cfg), box, _mc(cfg, threads))
    return Outcome(sol.HEADER, list(sol.rows()), True,
                   {"clamp_events": sol.clamp_events, "path_seed": p.seed, "samples": b["samples"],
                    "inner_mesh": b["inner_mesh"]})


def run_feynman_kac(cfg, out_dir, threads):
    b, r = cfg.block("mc"), cfg.block("reduced")
    t = float(b["t"])
    xs = np.linspace(b["box"][0], b["box"][1], b["box_n"])
    const = lambda c: chars.GridField(np.array([0.0, max(t, 1e-12)]), xs, np.full((2, xs.size), float(c)))
    if r["a"] < 0:
        raise ConfigError("reduced.a must be nonnegative")
    red = chars.ReducedCoefficients(const(r["a"]), const(r["b"]), const(r["c"]), const(r["psi"]))
    x = _query_x(cfg)
    res = chars.feynman_kac(red, t, x, build_initial(cfg), _mc(cfg, threads))
    rows = [(t, float(xi), float(m), float(s), float(m)) for xi, m, s in zip(x, res.mean, res.se)]
    return Outcome(("t", "x", "v", "se", "w"), rows, True, {"clamp_events": res.clamp_events})


def run_compare(cfg, out_dir, threads):
    suite, grid = build_suite(cfg), _grid(cfg)
    rep = chars.classical_comparison_experiment(suite, build_initial(cfg), build_initial(cfg, "upper"),
                                                build_paths(cfg), grid, cfg.block("tolerances")["order_gap"])
    if rep.skipped:
        log.error(rep.diagnostic)
    rows = [(cfg.seed + i, m) for i, m in enumerate(rep.per_path)]
    return Outcome(("seed", "min_gap"), rows, rep.passed,
                   {"min_gap": rep.min_gap, "skipped": rep.skipped, "diagnostic": rep.diagnostic})


def run_envelope(cfg, out_dir, threads):
    suite, grid = build_suite(cfg), _grid(cfg)
    p = build_paths(cfg)[0]
    args = _solver_args(cfg)
    rep = refsolver.envelope_experiment(suite, build_initial(cfg), cfg.block("envelope")["eps"], grid, p,
                                        args["t_end"], record_every=args["record_every"])
    return Outcome(rep.HEADER, rep.rows, rep.passed,
                   {"monotone": rep.monotone, "ordered": rep.ordered, "max_rel_error": rep.max_rel_error})


RUNNERS = {
    "gen-path": run_gen_path, "levy-check": run_levy_check, "taylor-order": run_taylor_order,
    "check-viscosity": run_check_viscosity, "convert": run_convert, "solve-fd": run_solve_fd,
    "solve-characteristics": run_solve_characteristics, "feynman-kac": run_feynman_kac,
    "compare": run_compare, "envelope": run_envelope,
}


# --- output -----------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_outcome(outcome: Outcome, target: Path) -> None:
    if outcome.write_csv is not None:
        outcome.write_csv(target)
        return
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(outcome.header)
        for row in outcome.rows:
            w.writerow([_cell(c) for c in row])
        for row in outcome.trailer:
            w.writerow([_cell(c) for c in row])


def run(cfg: ExperimentConfig, output: Optional[str] = None, threads: int = 1) -> int:
    out_dir = Path(output or cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        outcome = RUNNERS[cfg.experiment](cfg, out_dir, threads)
    except (ConfigError, ParameterError) as exc:
        log.error("usage error: %s", exc)
        return EXIT_USAGE
    except PathwiseError as exc:
        log.error("experiment failed: %s", exc)
        outcome = Outcome(("error",), [(str(exc),)], False, {"error": type(exc).__name__})
    csv_path = out_dir / f"{cfg.experiment}.csv"
    write_outcome(outcome, csv_path)
    meta = {"config": cfg.to_dict(), "version": __version__, "wall_clock_seconds": time.perf_counter() - start,
            "passed": outcome.passed, "summary": _jsonable(outcome.summary)}
    (out_dir / f"{cfg.experiment}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    log.info("%s: %s", cfg.experiment, "pass" if outcome.passed else "FAIL")
    return EXIT_PASS if outcome.passed else EXIT_FAIL


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pathwise", description="Run a pathwise SPDE experiment from a TOML config.")
    ap.add_argument("--config", required=True, help="experiment config (TOML)")
    ap.add_argument("--output", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    ap.add_argument("--verbose", action="store_true")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        log.error("--threads must be positive")
        return EXIT_USAGE
    try:
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_USAGE
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    return run(cfg, args.output, args.threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
