import numpy as np
import pytest

from pathwise import characteristics as ch
from pathwise import coefficients as coef
from pathwise import fields, paths
from pathwise.errors import ContractError, DomainError, ParabolicityError, ParameterError
from pathwise.refsolver import FDGrid

PATH = paths.sample_path(1, 1.0, 256, 5)
XS = np.linspace(-8.0, 8.0, 321)
T = 0.5
K = PATH.index_of(T)
TIMES = PATH.times[:K + 1]


def gauss(var):
    return lambda x: np.exp(-0.5 * np.asarray(x) ** 2 / var) / np.sqrt(2 * np.pi * var)


def bundle(**kw):
    c = ch.FrozenLinearCoefficients.constant(TIMES, XS, **kw)
    return c, ch.solve_characteristics(c, PATH)


class TestFrozen:
    def test_shape_check(self):
        with pytest.raises(ContractError):
            ch.FrozenLinearCoefficients(TIMES, XS, *(np.zeros((2, 2)),) * 6)

    def test_reduced_parabolicity(self):
        with pytest.raises(ParabolicityError):
            ch.FrozenLinearCoefficients.constant(TIMES, XS, Fgamma=0.4, gz=1.0)
        ch.FrozenLinearCoefficients.constant(TIMES, XS, Fgamma=0.5, gz=1.0)


class TestLinearize:
    def test_linear_suite(self):
        suite = coef.affine_suite(diffusion=0.7, drift_z=0.3, drift_y=-0.2, noise_z=0.5, noise_y=0.4)
        c = ch.linearize(suite, fields.transported_heat(1.0), fields.constant_field(0.3), PATH, T, XS[::40])
        # Ito drift of this suite: 0.7 g + 0.3 z - 0.2 y + (0.4 y + 0.5 z)(0.4) / 2 + 0.5 (0.4 z + 0.5 g) / 2
        assert np.allclose(c.Fgamma, 0.7 + 0.125, atol=1e-8)
        assert np.allclose(c.Fz, 0.3 + 0.1 + 0.1, atol=1e-8)
        assert np.allclose(c.Fy, -0.2 + 0.08, atol=1e-8)
        assert np.allclose(c.gy, 0.4) and np.allclose(c.gz, 0.5)

    def test_closed_form_average(self):
        suite = coef.scalar_suite(lambda t, x, b, y, z, gm: y * y + 0.5 * gm, lambda t, x, b, y, z, gm: 0.5 + 0 * y)
        c = ch.linearize(suite, fields.constant_field(2.0), fields.constant_field(0.0), PATH, T, XS[::40])
        assert np.allclose(c.Fy, 2.0, atol=1e-8)
        assert np.allclose(c.psi, -4.0, atol=1e-12)

    def test_equal_fields(self):
        suite = coef.scalar_suite(lambda t, x, b, y, z, gm: y * y + 0.5 * gm, lambda t, x, b, y, z, gm: 0.5 + 0 * y)
        v = fields.transported_heat(0.0)
        c = ch.linearize(suite, v, v, PATH, T, XS[::40])
        vals = v(0.25, XS[::40], PATH)
        assert np.allclose(c.Fy[PATH.index_of(0.25)], 2 * vals, atol=1e-8)
        assert np.all(c.psi == 0.0)

    def test_dimensions(self):
        with pytest.raises(ParameterError):
            ch.linearize(coef.affine_suite(d=2), fields.constant_field(0), fields.constant_field(0), PATH, T, XS)


class TestCharacteristics:
    def test_identity(self):
        _, b = bundle()
        assert np.array_equal(b.theta[-1], XS) and np.all(b.M == 1.0) and np.all(b.dtheta == 1.0)

    def test_gradient_noise(self):
        sigma = 0.8
        _, b = bundle(Fgamma=0.5, gz=sigma)
        bt = PATH.value_at(T)[0]
        assert np.allclose(b.theta[-1], XS - sigma * bt, atol=1e-12)
        assert np.all(b.M == 1.0) and np.allclose(b.dtheta, 1.0)
        q = np.array([-1.0, 0.0, 2.5])
        assert np.allclose(b.zeta(T, q), q + sigma * bt, atol=1e-12)
        assert b.inversion_error(T) <= 1e-8

    def test_value_noise(self):
        c = 0.6
        _, b = bundle(gy=c)
        bt = PATH.value_at(T)[0]
        assert np.array_equal(b.theta[-1], XS)
        assert np.allclose(b.M[-1], np.exp(c * bt - 0.5 * c * c * T), rtol=1e-12)

    def test_variable_coefficients(self):
        gz = np.broadcast_to(0.5 + 0.2 * np.tanh(XS), (TIMES.size, XS.size)).copy()
        c = ch.FrozenLinearCoefficients(TIMES, XS, 0 * gz, 0 * gz, 0 * gz + 0.5, 0 * gz + 0.1, gz, 0 * gz)
        b = ch.solve_characteristics(c, PATH)
        assert np.all(b.dtheta > 0) and np.all(b.M > 0)
        assert np.all(np.diff(b.theta, axis=1) > 0)
        assert b.inversion_error(T) <= 1e-8

    def test_zeta_outside(self):
        _, b = bundle()
        with pytest.raises(DomainError):
            b.zeta(T, 9.0)

    def test_grid_mismatch(self):
        c = ch.FrozenLinearCoefficients.constant(TIMES + 0.001, XS)
        with pytest.raises(ParameterError):
            ch.solve_characteristics(c, PATH)


class TestReduced:
    def test_constant(self):
        sigma, a0 = 1.0, 0.7
        psi = np.broadcast_to(gauss(1.0)(XS), (TIMES.size, XS.size)).copy()
        coeffs = ch.FrozenLinearCoefficients(TIMES, XS, np.full_like(psi, -0.1), np.full_like(psi, 0.2),
                                             np.full_like(psi, a0), np.zeros_like(psi), np.full_like(psi, sigma), psi)
        b = ch.solve_characteristics(coeffs, PATH)
        red = ch.reduced_coefficients(coeffs, b)
        assert np.allclose(red.abar.values, a0 - 0.5 * sigma ** 2, atol=1e-12)
        assert np.allclose(red.bbar.values, 0.2, atol=1e-12)
        assert np.allclose(red.cbar.values, -0.1, atol=1e-12)
        inner = np.abs(XS) < 5
        shifted = gauss(1.0)(XS - sigma * PATH.value_at(T)[0])
        assert np.allclose(red.psibar.values[-1][inner], shifted[inner], atol=1e-4)

    def test_zero_noise(self):
        c, b = bundle(Fy=0.3, Fz=-0.2, Fgamma=0.9, psi=1.5)
        red = ch.reduced_coefficients(c, b)
        for grid, val in ((red.abar, 0.9), (red.bbar, -0.2), (red.cbar, 0.3), (red.psibar, 1.5)):
            assert np.allclose(grid.values, val)

    def test_value_noise_source(self):
        c = 0.6
        coeffs, b = bundle(gy=c, psi=1.0)
        red = ch.reduced_coefficients(coeffs, b)
        bt = PATH.value_at(T)[0]
        assert np.allclose(red.psibar.values[-1], np.exp(-c * bt + 0.5 * c * c * T))
        assert np.allclose(red.cbar.values, 0.0, atol=1e-10)


class TestFeynmanKac:
    def red(self, **kw):
        c, b = bundle(**kw)
        return ch.reduced_coefficients(c, b)

    def test_constant_data(self):
        r = ch.feynman_kac(self.red(), T, [0.0, 1.0], lambda x: np.ones_like(x), ch.MCSettings(2000, 20))
        assert np.all(r.mean == 1.0)

    def test_martingale(self):
        mc = ch.MCSettings(10_000, 20, seed=3)
        r = ch.feynman_kac(self.red(), T, [0.3], lambda x: x, mc)
        assert r.se[0] == pytest.approx(np.sqrt(T / mc.samples), rel=0.05)
        assert abs(r.mean[0] - 0.3) <= 3 * r.se[0]

    def test_heat_kernel(self):
        # N(0, 1 + t) density at the origin, t = 0.5
        exact = 1.0 / np.sqrt(2 * np.pi * 1.5)
        assert exact == pytest.approx(0.3257350, abs=1e-7)
        r = ch.feynman_kac(self.red(), T, [0.0], gauss(1.0), ch.MCSettings(20_000, 50, seed=1))
        assert abs(r.mean[0] - exact) <= 4 * r.se[0] + 1e-3

    def test_se_scaling(self):
        red = self.red()
        ratios = []
        for s in range(4):
            a = ch.feynman_kac(red, T, [0.0], gauss(1.0), ch.MCSettings(2000, 20, seed=s)).se[0]
            b = ch.feynman_kac(red, T, [0.0], gauss(1.0), ch.MCSettings(8000, 20, seed=100 + s)).se[0]
            ratios.append(b / a)
        assert 0.4 <= np.mean(ratios) <= 0.6

    def test_threads_invariant(self):
        red = self.red(gz=0.5, Fgamma=0.5)
        a = ch.feynman_kac(red, T, [0.0, 1.0], gauss(1.0), ch.MCSettings(3000, 20, seed=9, threads=1))
        b = ch.feynman_kac(red, T, [0.0, 1.0], gauss(1.0), ch.MCSettings(3000, 20, seed=9, threads=3))
        assert a.mean.tobytes() == b.mean.tobytes() and a.se.tobytes() == b.se.tobytes()

    def test_time_zero(self):
        r = ch.feynman_kac(self.red(), 0.0, [0.0], gauss(1.0))
        assert r.mean[0] == gauss(1.0)(0.0) and r.se[0] == 0.0

    def test_clamp_counted(self):
        r = ch.feynman_kac(self.red(Fgamma=8.0), T, [7.9], gauss(1.0), ch.MCSettings(500, 20))
        assert r.clamp_events > 0

    @pytest.mark.parametrize("kw", [{"samples": 1}, {"inner_mesh": 0}, {"threads": 0}])
    def test_settings(self, kw):
        with pytest.raises(ParameterError):
            ch.MCSettings(**kw)


class TestReconstruct:
    def test_identity(self):
        _, b = bundle()
        q = np.array([-1.0, 0.5])
        assert np.allclose(ch.reconstruct(np.sin, b, T, q), np.sin(q))

    def test_shift(self):
        _, b = bundle(gz=1.0)
        q = np.array([-1.0, 0.5])
        assert np.allclose(ch.reconstruct(np.sin, b, T, q), np.sin(q + PATH.value_at(T)[0]), atol=1e-12)

    def test_weight(self):
        c = 0.6
        _, b = bundle(gy=c)
        w = ch.reconstruct(np.cos, b, T, [0.2])
        assert w[0] == pytest.approx(np.exp(c * PATH.value_at(T)[0] - 0.5 * c * c * T) * np.cos(0.2))

    def test_array_input(self):
        _, b = bundle()
        # 0.125 sits midway between nodes 0.05 apart, so linear interpolation of x^2 is off by 0.025^2
        assert ch.reconstruct(XS ** 2, b, T, [0.125])[0] == pytest.approx(0.125 ** 2 + 0.025 ** 2, abs=1e-12)


class TestPipeline:
    def test_transported_heat(self):
        suite = coef.heat_transport(1.0, 0.5)
        sol = ch.solve(suite, gauss(1.0), PATH, T, np.linspace(-2, 2, 9), XS, ch.MCSettings(4000, 25, seed=2))
        exact = fields.transported_heat(1.0)(T, sol.x, PATH)
        assert np.max(np.abs(sol.w - exact)) <= 4 * np.max(sol.se) + 5e-3
        assert len(list(sol.rows())) == 9


class TestComparison:
    grid = FDGrid(-8.0, 8.0, 161)

    def test_equal_data(self):
        rep = ch.classical_comparison_experiment(coef.heat_transport(1.0, 0.5), gauss(1.0), gauss(1.0), [PATH],
                                                 self.grid)
        assert rep.passed and rep.min_gap == pytest.approx(0.0, abs=1e-12)

    def test_gap(self):
        rep = ch.classical_comparison_experiment(coef.heat_transport(1.0, 0.5), gauss(1.0),
                                                 lambda x: gauss(1.0)(x) + 0.1, [PATH], self.grid)
        assert rep.passed and rep.min_gap >= 0.05

    def test_crossing(self):
        rep = ch.classical_comparison_experiment(coef.heat_transport(1.0, 0.5), gauss(1.0), gauss(2.0), [PATH],
                                                 self.grid)
        assert rep.skipped and not rep.passed and "precondition" in rep.diagnostic
