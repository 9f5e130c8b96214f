"""Acceptance criteria A1 to A9, each at its stated tolerance and scale."""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from pathwise import characteristics as ch
from pathwise import coefficients as coef
from pathwise import fields, paths, refsolver as rs, taylor, viscosity as visc
from pathwise.errors import InsufficientDataError
from pathwise.rng import stream

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def gauss(var, offset=0.0):
    return lambda x: offset + np.exp(-0.5 * np.asarray(x) ** 2 / var) / np.sqrt(2 * np.pi * var)


def test_a1_second_level_algebra(verdict):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        p = paths.sample_path(2, 1.0, 2 ** 12, seed)
        gen = stream(seed, "a1")
        triples = [(0, p.mesh // 2, p.mesh)] + [sorted(gen.choice(p.mesh + 1, 3, replace=False)) for _ in range(5)]
        for a, b, c in triples:
            s, u, t = a * p.dt, b * p.dt, c * p.dt
            lvl = paths.second_level(p, s, t)
            BB = np.outer(lvl.increment, lvl.increment)
            worst = max(worst, float(np.max(np.abs(lvl.levy + lvl.levy.T))),
                        float(np.max(np.abs(lvl.strat_matrix + lvl.strat_matrix.T - BB))),
                        paths.chen_check(p, s, u, t))
    took = time.perf_counter() - start
    ok = verdict("A1 second-level algebra", worst <= 1e-10 and took < 5, f"max defect {worst:.2e}, {took:.1f}s")
    assert ok


def test_a2_levy_area_oracle(verdict):
    start = time.perf_counter()
    r = np.linspace(0.0, 1.0, 2 ** 12 + 1)
    smooth = paths.SamplePath.from_values(np.column_stack([r, r * r]), 1.0)
    err_smooth = abs(paths.second_level(smooth, 0.0, 1.0).levy[0, 1] - 1 / 3)
    tri = paths.SamplePath.from_values([[0, 0], [1, 0], [1, 1]], 1.0)
    err_tri = abs(paths.second_level(tri, 0.0, 1.0).levy[0, 1] - 1.0)
    took = time.perf_counter() - start
    ok = verdict("A2 Levy area oracle", err_smooth <= 1e-4 and err_tri <= 1e-12 and took < 1,
                 f"smooth error {err_smooth:.2e}, triangle error {err_tri:.1e}, {took:.2f}s")
    assert ok


def test_a3_taylor_remainder_order(verdict):
    start = time.perf_counter()
    u = fields.transported_heat(1.0, diffusivity=0.0)
    suite = coef.affine_suite(diffusion=0.0, noise_z=1.0)
    lattice = taylor.ScanLattice.dyadic(16, 8)
    slopes = [taylor.order_estimate(u, suite, 0.5, 0.3, paths.sample_path(1, 1.0, 2 ** 18, s), lattice).slope
              for s in range(20)]
    passing = sum(s >= 1.25 for s in slopes)
    quad = fields.scalar_markov_field(lambda t, x, b: x * x, lambda t, x, b: 0 * x, lambda t, x, b: 2 * x,
                                      lambda t, x, b: 2 + 0 * x, lambda t, x, b: 0 * x, lambda t, x, b: 0 * x,
                                      lambda t, x, b: 0 * x)
    try:
        taylor.order_estimate(quad, coef.affine_suite(), 0.5, 0.3, paths.sample_path(1, 1.0, 2 ** 18, 0), lattice)
        control = False
    except InsufficientDataError:
        control = True
    took = time.perf_counter() - start
    ok = verdict("A3 Taylor remainder order", passing >= 16 and control and took < 30,
                 f"{passing}/20 seeds with slope >= 1.25 (median {np.median(slopes):.2f}), "
                 f"quadratic control excluded={control}, {took:.1f}s")
    assert ok


def test_a4_characteristics_oracle(verdict):
    start = time.perf_counter()
    suite = coef.heat_transport(1.0, 0.5)
    xq = np.linspace(-2.0, 2.0, 41)
    box = np.linspace(-10.0, 10.0, 401)
    errs = []
    for seed in range(5):
        p = paths.sample_path(1, 1.0, 2 ** 10, seed)
        sol = ch.solve(suite, gauss(1.0), p, 0.5, xq, box, ch.MCSettings(10_000, 50, seed=seed))
        exact = gauss(1.5)(xq + p.value_at(0.5)[0])
        errs.append(float(np.max(np.abs(sol.w - exact))))
    took = time.perf_counter() - start
    ok = verdict("A4 characteristics + Feynman-Kac", max(errs) <= 0.02 and took < 60,
                 f"worst L-inf {max(errs):.2e} over 5 seeds, {took:.1f}s")
    assert ok


class TestA5:
    """Ito and Stratonovich reference solvers on g = sigma z, f = gamma / 2."""

    suite = coef.heat_transport(1.0, 0.5)
    grid = rs.FDGrid(-10.0, 10.0, 401)
    cache: dict = {}

    def discrepancy(self, p, drift=None):
        a = rs.solve_fd_stratonovich(self.suite, gauss(1.0), self.grid, p)
        b = rs.solve_fd_ito(self.suite, gauss(1.0), self.grid, p, drift=drift)
        return float(np.max(np.abs(a.values[-1] - b.values[-1])))

    def sweep(self):
        if not self.cache:
            start = time.perf_counter()
            coarse, fine = [], []
            for seed in range(10):
                p = paths.sample_path(1, 0.5, 2 ** 12, seed)
                coarse.append(self.discrepancy(p))
                fine.append(self.discrepancy(paths.refine(p, 2)))
            self.cache.update(coarse=np.array(coarse), fine=np.array(fine), took=time.perf_counter() - start)
        return self.cache

    def test_bound(self, verdict):
        r = self.sweep()
        ok = verdict("A5 Ito/Stratonovich discrepancy bound", r["coarse"].max() <= 0.05,
                     f"max L-inf {r['coarse'].max():.2e} at N=2^12 over 10 seeds, {r['took']:.1f}s")
        assert ok

    def test_halving(self, verdict):
        r = self.sweep()
        ratio = r["fine"].mean() / r["coarse"].mean()
        ok = verdict("A5 discrepancy halves when N doubles", 0.35 <= ratio <= 0.65,
                     f"mean ratio {ratio:.2f} (per-seed median {np.median(r['fine'] / r['coarse']):.2f})")
        assert ok

    def test_negative_control(self, verdict):
        r = self.sweep()
        p = paths.sample_path(1, 0.5, 2 ** 12, 0)
        bad = self.discrepancy(p, drift=self.suite.f_value)
        ok = verdict("A5 negative control (F = f)", bad >= 10 * r["coarse"][0],
                     f"wrong-drift discrepancy {bad:.2e} vs correct {r['coarse'][0]:.2e}")
        assert ok


def _interior_points(seed, p, n=100):
    gen = stream(seed, "a6")
    ks = gen.integers(int(2 ** -8 / p.dt) + 1, p.mesh + 1, n)
    return [(float(k * p.dt), float(x)) for k, x in zip(ks, gen.uniform(-2.0, 2.0, n))]


def _corrupted(u, c):
    def ev(t, x, path):
        return u.evaluator(t, x, path) + c * t

    def su(t, x, path):
        s = u.suite_evaluator(t, x, path)
        return fields.DerivativeSuite(s.value + c * t, s.dt + c, s.dx, s.dxx, s.dw, s.dxw, s.dww)

    return fields.RandomField(ev, su, "composite")


def test_a6_viscosity_consistency(verdict):
    start = time.perf_counter()
    u = fields.transported_heat(1.0, var0=4.0)
    suite = coef.heat_transport(1.0, 0.5)
    bad_u = _corrupted(u, 0.1)
    passed, gap, ratio, margin, bad_ok = True, 0.0, -np.inf, np.inf, True
    for seed in range(20):
        p = paths.sample_path(1, 1.0, 2 ** 14, seed)
        pts = _interior_points(seed, p)
        rep = visc.consistency_experiment(u, suite, pts, [p])
        passed &= rep.passed
        gap, ratio = max(gap, rep.max_abs_a_minus_f), max(ratio, rep.max_ratio)
        if seed < 4:
            bad = visc.consistency_experiment(bad_u, suite, pts[:25], [p])
            sub = [r for r in bad.rows if r[3] == "sub"]
            bad_ok &= all(not r[7] for r in sub)
            margin = min(margin, min(r[4] for r in sub))
    took = time.perf_counter() - start
    ok = verdict("A6 viscosity consistency",
                 passed and gap <= 1e-9 and ratio <= 0.05 and bad_ok and margin >= 0.09 and took < 30,
                 f"max |a-f| {gap:.1e}, max ratio {ratio:.3f}, corrupted margin {margin:.3f}, {took:.1f}s")
    assert ok


def test_a7_change_of_variable(verdict):
    start = time.perf_counter()
    u, suite = fields.transported_heat(1.0, var0=4.0), coef.heat_transport(1.0, 0.5)
    agree, ident, checked = True, 0.0, 0
    for seed in range(3):
        p = paths.sample_path(1, 1.0, 2 ** 14, seed)
        ex = coef.Exponent.build(lambda t: 1.0, p.times)
        u2, s2 = coef.transform_field(u, ex), coef.change_of_variable(suite, ex)
        for t, x in _interior_points(seed, p, 10):
            e = np.exp(ex(t))
            q = np.array([[x]])
            a, b = u.suite(t, q, p), u2.suite(t, q, p)
            ident = max(ident, abs(b.value[0] - e * a.value[0]), abs(b.dt[0] - b.value[0] - e * a.dt[0]),
                        float(np.max(np.abs(b.dw - e * a.dw))), float(np.max(np.abs(b.dx - e * a.dx))),
                        float(np.max(np.abs(b.dxx - e * a.dxx))))
            for jets, side in (((0.0, 0.0), "sub"), ((0.0, 0.0), "super"), ((0.3, 0.0), "sub"), ((-0.3, 0.0), "super")):
                ja, jb = taylor.canonical_jet(u, t, x, p), taylor.canonical_jet(u2, t, x, p)
                ja, jb = ja.shifted(*jets), jb.shifted(jets[0] * e, jets[1] * e)
                va = visc.check_point(u, suite, t, x, p, [ja], side)
                vb = visc.check_point(u2, s2, t, x, p, [jb], side, tau=visc.DEFAULT_TAU * e, f_tol=1e-9 * e)
                agree &= va.passed == vb.passed and va.skipped == vb.skipped
                checked += 1
    took = time.perf_counter() - start
    ok = verdict("A7 change-of-variable invariance", agree and ident <= 1e-10 and took < 10,
                 f"{checked} verdict pairs agree={agree}, identity residual {ident:.1e}, {took:.1f}s")
    assert ok


def test_a8_comparison_and_envelope(verdict):
    start = time.perf_counter()
    suite = coef.heat_transport(1.0, 0.5)
    ps = [paths.sample_path(1, 0.5, 2 ** 11, s) for s in range(10)]
    rep = ch.classical_comparison_experiment(suite, gauss(1.0), gauss(1.0, 0.1), ps, rs.FDGrid(-10.0, 10.0, 201))
    env = rs.envelope_experiment(suite, gauss(1.0), [0.2, 0.1, 0.05, 0.025], rs.FDGrid(-10.0, 10.0, 201, "clamp"),
                                 ps[0])
    took = time.perf_counter() - start
    ok = verdict("A8 comparison ordering + envelope",
                 rep.passed and rep.min_gap >= -1e-6 and env.monotone and env.max_rel_error <= 0.1 and took < 60,
                 f"min(v-u) {rep.min_gap:.4f}, envelope monotone={env.monotone}, "
                 f"max relative gap error {env.max_rel_error:.1e}, {took:.1f}s")
    assert ok


def _run(config, out, threads):
    cmd = [sys.executable, "-m", "pathwise.cli", "--config", str(config), "--output", str(out), "--threads", str(threads)]
    return subprocess.run(cmd, capture_output=True, text=True).returncode


@pytest.mark.slow
def test_a9_determinism(verdict, tmp_path):
    start = time.perf_counter()
    mismatched = []
    for cfg in sorted(CONFIGS.glob("*.toml")):
        codes = [_run(cfg, tmp_path / f"{cfg.stem}-{n}", n) for n in (1, 2)]
        for csv_a in sorted((tmp_path / f"{cfg.stem}-1").glob("*.csv")):
            csv_b = tmp_path / f"{cfg.stem}-2" / csv_a.name
            if codes[0] != codes[1] or not csv_b.exists() or csv_a.read_bytes() != csv_b.read_bytes():
                mismatched.append(f"{cfg.stem}/{csv_a.name}")
    took = time.perf_counter() - start
    ok = verdict("A9 determinism across --threads", not mismatched,
                 f"{len(list(CONFIGS.glob('*.toml')))} configs, mismatches {mismatched or 'none'}, {took:.1f}s")
    assert ok
