"""Stochastic characteristics and Feynman-Kac solution of linear SPDEs (d = d' = 1).

The difference ``w = u - v`` of two fields solves, in Itô form,

    dw = (F_gamma w_xx + F_z w_x + F_y w + psi) dt + (G w_x + H w) dB

with averaged derivative fields.  Writing ``w(t, theta_t(x)) = M_t(x) v(t, x)``
along the flow ``d theta = -G(t, theta) dB`` and the weight
``dM = H(t, theta) M dB`` removes the noise, leaving a random parabolic PDE
for ``v`` that is solved by Monte Carlo over an independent Brownian motion.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .coefficients import CoefficientSuite, ito_drift
from .errors import (ContractError, DomainError, ParabolicityError, ParameterError,
                     StabilityError)
from .fields import RandomField, constant_field
from .paths import SamplePath
from .rng import stream

GL_NODES = 16
FD_STEP = 1e-5
CHUNK = 1024
NEG_TOL = 1e-10


def _check_dims(suite: CoefficientSuite):
    if suite.dims != (1, 1):
        raise ParameterError(f"characteristics support d = d' = 1 only, got dims {suite.dims}")


@dataclass(frozen=True)
class GridField:
    """Values on a (time, x) grid; bilinear lookup, constant extension outside the x-box."""

    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray

    def row(self, t: float) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            return self.values[0]
        if t >= ts[-1]:
            return self.values[-1]
        i = min(int(np.searchsorted(ts, t, side="right")) - 1, ts.size - 2)
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def __call__(self, t: float, x) -> np.ndarray:
        return np.interp(x, self.xs, self.row(t))

    def outside(self, x) -> int:
        x = np.asarray(x)
        return int(np.count_nonzero((x < self.xs[0]) | (x > self.xs[-1])))


@dataclass(frozen=True)
class FrozenLinearCoefficients:
    """Averaged linearisation on a (time, x) grid; arrays of shape ``(nt, nx)``.

    ``gz`` multiplies ``w_x`` and ``gy`` multiplies ``w`` in the noise term.
    """

    times: np.ndarray
    xs: np.ndarray
    Fy: np.ndarray
    Fz: np.ndarray
    Fgamma: np.ndarray
    gy: np.ndarray
    gz: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        shape = (self.times.size, self.xs.size)
        for name in ("Fy", "Fz", "Fgamma", "gy", "gz", "psi"):
            if getattr(self, name).shape != shape:
                raise ContractError(f"{name} must have shape {shape}")
        reduced = self.Fgamma - 0.5 * self.gz ** 2
        if np.min(reduced) < -NEG_TOL:
            raise ParabolicityError(f"reduced diffusion F_gamma - gz^2/2 reaches {np.min(reduced):.3e}")

    @classmethod
    def constant(cls, times, xs, Fy=0.0, Fz=0.0, Fgamma=0.5, gy=0.0, gz=0.0, psi=0.0):
        times, xs = np.asarray(times, float), np.asarray(xs, float)
        full = lambda c: np.full((times.size, xs.size), float(c))
        return cls(times, xs, full(Fy), full(Fz), full(Fgamma), full(gy), full(gz), full(psi))


def _path_times(path: SamplePath, t_end: float) -> np.ndarray:
    k = path.index_of(t_end)
    return path.times[:k + 1]


def linearize(suite: CoefficientSuite, u: RandomField, v: RandomField, path: SamplePath, t_end: float,
              xs) -> FrozenLinearCoefficients:
    """Tabulate the averaged derivatives of ``F`` and ``g`` between ``v`` and ``u``.

    Each average ``int_0^1 dF(v + l w) dl`` uses 16-point Gauss-Legendre
    nodes; derivatives of ``F`` are central differences of :func:`ito_drift`.
    """
    _check_dims(suite)
    if not (u.has_suite and v.has_suite):
        raise ContractError("linearize needs fields with derivative suites")
    xs = np.asarray(xs, dtype=np.float64)
    times = _path_times(path, t_end)
    nodes, weights = np.polynomial.legendre.leggauss(GL_NODES)
    lam = 0.5 * (nodes + 1.0)[:, None]
    wts = 0.5 * weights[:, None]
    out = {k: np.empty((times.size, xs.size)) for k in ("Fy", "Fz", "Fgamma", "gy", "gz", "psi")}
    pts = xs[:, None]
    e = FD_STEP
    for i, t in enumerate(times):
        su, sv = u.suite(t, pts, path), v.suite(t, pts, path)
        dy, dz, dg = su.value - sv.value, su.dx[:, 0] - sv.dx[:, 0], su.dxx[:, 0, 0] - sv.dxx[:, 0, 0]
        y = sv.value + lam * dy
        z = sv.dx[:, 0] + lam * dz
        gm = sv.dxx[:, 0, 0] + lam * dg
        X = np.broadcast_to(xs, y.shape)
        F = lambda yy, zz, gg: ito_drift(suite, t, X, path, yy, zz, gg)
        out["Fy"][i] = np.sum(wts * (F(y + e, z, gm) - F(y - e, z, gm)), axis=0) / (2 * e)
        out["Fz"][i] = np.sum(wts * (F(y, z + e, gm) - F(y, z - e, gm)), axis=0) / (2 * e)
        out["Fgamma"][i] = np.sum(wts * (F(y, z, gm + e) - F(y, z, gm - e)), axis=0) / (2 * e)
        gs = suite.g_suite(t, X, path, y, z)
        out["gy"][i] = np.sum(wts * gs.dy[..., 0], axis=0)
        out["gz"][i] = np.sum(wts * gs.dz[..., 0, 0], axis=0)
        resid_u = su.dt - suite.f_value(t, pts, path, su.value, su.dx, su.dxx)
        resid_v = sv.dt - suite.f_value(t, pts, path, sv.value, sv.dx, sv.dxx)
        out["psi"][i] = resid_u - resid_v
    return FrozenLinearCoefficients(times, xs, **out)


@dataclass(frozen=True)
class CharacteristicsBundle:
    """Flow ``theta``, weight ``M`` and ``d theta/dx`` from each grid start point, per path node."""

    times: np.ndarray
    xs: np.ndarray
    theta: np.ndarray
    M: np.ndarray
    dtheta: np.ndarray

    def index(self, t: float) -> int:
        k = int(round(t / (self.times[1] - self.times[0]))) if self.times.size > 1 else 0
        if k < 0 or k >= self.times.size or abs(self.times[k] - t) > 1e-9 * max(1.0, t):
            raise ParameterError(f"time {t!r} is not a node of the characteristics grid")
        return k

    def zeta(self, t: float, x) -> np.ndarray:
        """Inverse of ``theta_t``, linear between grid start points."""
        th = self.theta[self.index(t)]
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < th[0] - 1e-12) or np.any(x > th[-1] + 1e-12):
            raise DomainError(f"x outside the range [{th[0]}, {th[-1]}] of theta_t")
        return np.interp(x, th, self.xs)

    def inversion_error(self, t: float) -> float:
        k = self.index(t)
        th = self.theta[k]
        lo, hi = th[0], th[-1]
        probe = self.xs[(self.xs >= lo) & (self.xs <= hi)]
        if probe.size == 0:
            return 0.0
        return float(np.max(np.abs(np.interp(self.zeta(t, probe), self.xs, th) - probe)))


def solve_characteristics(coeffs: FrozenLinearCoefficients, path: SamplePath) -> CharacteristicsBundle:
    """Itô-Euler flow on the path grid.

    ``M`` and ``d theta/dx`` are stepped through their exponential forms,
    which keeps both strictly positive.
    """
    times, xs = coeffs.times, coeffs.xs
    nt = times.size
    if nt > path.mesh + 1 or not np.allclose(times, path.times[:nt], rtol=0, atol=1e-12):
        raise ParameterError("coefficient times must be the leading nodes of the path grid")
    theta = np.empty((nt, xs.size))
    M = np.empty_like(theta)
    dth = np.empty_like(theta)
    theta[0], M[0], dth[0] = xs, 1.0, 1.0
    dt = path.dt
    for k in range(nt - 1):
        dB = path.increments[k, 0]
        th = theta[k]
        G = np.interp(th, xs, coeffs.gz[k])
        Gx = np.interp(th, xs, np.gradient(coeffs.gz[k], xs))
        H = np.interp(th, xs, coeffs.gy[k])
        theta[k + 1] = th - G * dB
        M[k + 1] = M[k] * np.exp(H * dB - 0.5 * H * H * dt)
        dth[k + 1] = dth[k] * np.exp(-Gx * dB - 0.5 * Gx * Gx * dt)
    if not np.all(np.isfinite(dth)) or np.min(dth) <= 0 or np.any(np.diff(theta, axis=1) <= 0):
        raise StabilityError("characteristic flow lost monotonicity; reduce the noise or refine the path")
    if not np.all(np.isfinite(M)):
        raise StabilityError("characteristic weight overflowed")
    return CharacteristicsBundle(times, xs, theta, M, dth)


@dataclass(frozen=True)
class ReducedCoefficients:
    abar: GridField
    bbar: GridField
    cbar: GridField
    psibar: GridField


def reduced_coefficients(coeffs: FrozenLinearCoefficients, bundle: CharacteristicsBundle) -> ReducedCoefficients:
    """Coefficients of the random PDE ``v_t = abar v_xx + bbar v_x + cbar v + psibar``."""
    xs, nt = coeffs.xs, coeffs.times.size
    out = {k: np.empty((nt, xs.size)) for k in ("a", "b", "c", "p")}
    for k in range(nt):
        th = bundle.theta[k]
        at = lambda arr: np.interp(th, xs, arr)
        G, H = at(coeffs.gz[k]), at(coeffs.gy[k])
        Gx, Hx = at(np.gradient(coeffs.gz[k], xs)), at(np.gradient(coeffs.gy[k], xs))
        a_hat = at(coeffs.Fgamma[k]) - 0.5 * G * G
        b_hat = at(coeffs.Fz[k]) - Gx * G - H * G
        c_hat = at(coeffs.Fy[k]) - Hx * G
        m, tx = bundle.M[k], bundle.dtheta[k]
        mx = np.gradient(m, xs)
        mxx = np.gradient(mx, xs)
        txx = np.gradient(tx, xs)
        out["a"][k] = a_hat / tx ** 2
        out["b"][k] = 2.0 * mx * a_hat / (m * tx ** 2) - a_hat * txx / tx ** 3 + b_hat / tx
        out["c"][k] = mxx * a_hat / (m * tx ** 2) - mx * a_hat * txx / (m * tx ** 3) + mx * b_hat / (m * tx) + c_hat
        out["p"][k] = at(coeffs.psi[k]) / m
    if np.min(out["a"]) < -NEG_TOL:
        raise ParabolicityError(f"reduced diffusion reaches {np.min(out['a']):.3e}")
    mk = lambda a: GridField(coeffs.times, xs, a)
    return ReducedCoefficients(mk(np.maximum(out["a"], 0.0)), mk(out["b"]), mk(out["c"]), mk(out["p"]))


@dataclass(frozen=True)
class MCSettings:
    samples: int = 10_000
    inner_mesh: int = 100
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.samples < 2 or self.inner_mesh < 1 or self.threads < 1:
            raise ParameterError("Monte Carlo settings must be positive (samples >= 2)")


@dataclass(frozen=True)
class FKResult:
    mean: np.ndarray
    se: np.ndarray
    clamp_events: int


def _fk_chunk(red: ReducedCoefficients, t: float, x: np.ndarray, v0: Callable, mc: MCSettings, c: int, size: int):
    gen = stream(mc.seed, "fk", c)
    m = mc.inner_mesh
    ds = t / m
    dW = gen.standard_normal((size, m)) * np.sqrt(ds)
    X = np.broadcast_to(x, (size, x.size)).copy()
    logG = np.zeros_like(X)
    src = np.zeros_like(X)
    clamps = 0
    for i in range(m):
        tau = t - i * ds
        clamps += red.abar.outside(X)
        a = red.abar(tau, X)
        b = red.bbar(tau, X)
        cc = red.cbar(tau, X)
        src += np.exp(logG) * red.psibar(tau, X) * ds
        X = X + np.sqrt(2.0 * a) * dW[:, i:i + 1] + b * ds
        logG += cc * ds
    vals = np.exp(logG) * v0(X) + src
    return vals.sum(axis=0), (vals * vals).sum(axis=0), clamps


def feynman_kac(red: ReducedCoefficients, t: float, x, v0: Callable, mc: MCSettings = MCSettings()) -> FKResult:
    """Monte Carlo value of the random PDE at ``(t, x)`` with initial data ``v0``.

    Samples are drawn in chunks of 1024 from per-chunk streams and reduced in
    chunk order, so the result does not depend on ``mc.threads``.  The same
    inner Brownian paths serve every ``x``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if t < 0:
        raise ParameterError("t must be nonnegative")
    if t == 0:
        vals = np.asarray(v0(x), float)
        return FKResult(vals, np.zeros_like(vals), 0)
    sizes = [min(CHUNK, mc.samples - c * CHUNK) for c in range((mc.samples + CHUNK - 1) // CHUNK)]
    job = lambda c: _fk_chunk(red, t, x, v0, mc, c, sizes[c])
    if mc.threads > 1:
        with ThreadPoolExecutor(mc.threads) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(c) for c in range(len(sizes))]
    s1 = np.zeros(x.size)
    s2 = np.zeros(x.size)
    clamps = 0
    for a, b, k in parts:
        s1 += a
        s2 += b
        clamps += k
    n = mc.samples
    mean = s1 / n
    var = np.maximum(s2 / n - mean * mean, 0.0) * n / (n - 1)
    return FKResult(mean, np.sqrt(var / n), clamps)


def reconstruct(v: Union[Callable, np.ndarray], bundle: CharacteristicsBundle, t: float, x) -> np.ndarray:
    """``w(t, x) = M_t(zeta) v(t, zeta)`` with ``zeta = zeta_t(x)``.

    ``v`` is a callable of the reduced variable or an array on the bundle grid.
    """
    k = bundle.index(t)
    zeta = bundle.zeta(t, x)
    vz = v(zeta) if callable(v) else np.interp(zeta, bundle.xs, np.asarray(v, float))
    return np.interp(zeta, bundle.xs, bundle.M[k]) * vz


@dataclass(frozen=True)
class CharacteristicsSolution:
    t: float
    x: np.ndarray
    v: np.ndarray
    se: np.ndarray
    w: np.ndarray
    zeta: np.ndarray
    clamp_events: int
    bundle: CharacteristicsBundle = field(repr=False)

    HEADER = ("t", "x", "v", "se", "w")

    def rows(self):
        for i in range(self.x.size):
            yield (self.t, float(self.x[i]), float(self.v[i]), float(self.se[i]), float(self.w[i]))


def solve(suite: CoefficientSuite, w0: Callable, path: SamplePath, t: float, x, grid_xs,
          mc: MCSettings = MCSettings(), u: Optional[RandomField] = None,
          v: Optional[RandomField] = None) -> CharacteristicsSolution:
    """Full pipeline for ``w = u - v`` from ``w(0) = w0``.

    ``u`` and ``v`` fix the linearisation; both default to the zero field,
    which is exact whenever ``F`` and ``g`` are linear.
    """
    zero = constant_field(0.0)
    coeffs = linearize(suite, u or zero, v or zero, path, t, grid_xs)
    bundle = solve_characteristics(coeffs, path)
    red = reduced_coefficients(coeffs, bundle)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    zeta = bundle.zeta(t, x)
    fk = feynman_kac(red, t, zeta, w0, mc)
    k = bundle.index(t)
    w = np.interp(zeta, bundle.xs, bundle.M[k]) * fk.mean
    return CharacteristicsSolution(float(t), x, fk.mean, fk.se, w, zeta, fk.clamp_events, bundle)


@dataclass(frozen=True)
class ComparisonReport:
    passed: bool
    skipped: bool
    min_gap: float
    per_path: list
    diagnostic: str = ""


def classical_comparison_experiment(suite: CoefficientSuite, u0: Callable, v0: Callable,
                                    paths: Sequence[SamplePath], grid, tol: float = 1e-6) -> ComparisonReport:
    """Solve from ``u0 <= v0`` on each path with the reference solver and report ``min(v - u)``."""
    from .refsolver import solve_fd_stratonovich

    xs = grid.nodes
    gap0 = np.asarray(v0(xs), float) - np.asarray(u0(xs), float)
    if np.min(gap0) < 0:
        return ComparisonReport(False, True, float(np.min(gap0)), [],
                                f"precondition u0 <= v0 violated (min gap {np.min(gap0):.3e})")
    mins = []
    for p in paths:
        su = solve_fd_stratonovich(suite, u0, grid, p)
        sv = solve_fd_stratonovich(suite, v0, grid, p)
        mins.append(float(np.min(sv.values - su.values)))
    lo = min(mins) if mins else float("nan")
    return ComparisonReport(bool(lo >= -tol), False, lo, mins)
