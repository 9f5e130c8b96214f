"""Coefficient pairs (f, g) of ``du = f dt + g o dB`` and their transforms.

``f`` maps ``(t, x, path, y, z, gamma)`` to a scalar and ``g`` maps
``(t, x, path, y, z)`` to a :class:`GSuite` holding ``g`` together with its
first-order derivative blocks.  Arguments are batched as in :mod:`fields`:
``x, z`` have shape ``(..., d')``, ``y`` shape ``(...)`` and ``gamma`` shape
``(..., d', d')``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import ContractError, ParameterError
from .fields import DerivativeSuite, RandomField, as_points
from .paths import SamplePath

FD_STEP = 1e-5


@dataclass(frozen=True)
class GSuite:
    """``g`` and its derivatives at a batch of points.

    Shapes: value ``(..., d)``, dw ``(..., d, d)`` with ``dw[i, j] = d g_j / d omega_i``,
    dx ``(..., d', d)``, dy ``(..., d)``, dz ``(..., d', d)``.
    """

    value: np.ndarray
    dw: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray


@dataclass(frozen=True)
class FCoeff:
    eval: Callable
    dgamma: Callable


GCoeff = Callable[..., GSuite]


@dataclass(frozen=True)
class CoefficientSuite:
    f: FCoeff
    g: GCoeff
    dims: tuple[int, int] = (1, 1)

    @property
    def d(self) -> int:
        return self.dims[0]

    @property
    def dprime(self) -> int:
        return self.dims[1]

    def args(self, x, y, z, gamma=None):
        """Normalise and broadcast point arguments to a common batch shape."""
        dp = self.dprime
        x = as_points(x, dp)
        z = as_points(z, dp)
        y = np.asarray(y, dtype=np.float64)
        shapes = [x.shape[:-1], y.shape, z.shape[:-1]]
        if gamma is not None:
            gamma = as_matrix(gamma, dp)
            shapes.append(gamma.shape[:-2])
        if all(s == y.shape for s in shapes):
            return x, y, z, gamma
        batch = np.broadcast_shapes(*shapes)
        x = np.broadcast_to(x, batch + (dp,))
        z = np.broadcast_to(z, batch + (dp,))
        y = np.broadcast_to(y, batch)
        if gamma is not None:
            gamma = np.broadcast_to(gamma, batch + (dp, dp))
        return x, y, z, gamma

    def f_value(self, t, x, path, y, z, gamma):
        x, y, z, gamma = self.args(x, y, z, gamma)
        return _fit(self.f.eval(t, x, path, y, z, gamma), y.shape)

    def f_dgamma(self, t, x, path, y, z, gamma):
        x, y, z, gamma = self.args(x, y, z, gamma)
        return _fit(self.f.dgamma(t, x, path, y, z, gamma), y.shape + (self.dprime, self.dprime))

    def g_suite(self, t, x, path, y, z) -> GSuite:
        x, y, z, _ = self.args(x, y, z)
        s = self.g(t, x, path, y, z)
        b, d, dp = y.shape, self.d, self.dprime
        return GSuite(_fit(s.value, b + (d,)), _fit(s.dw, b + (d, d)), _fit(s.dx, b + (dp, d)),
                      _fit(s.dy, b + (d,)), _fit(s.dz, b + (dp, d)))


def _fit(a, shape):
    a = np.asarray(a, dtype=np.float64)
    if a.shape == shape:
        return a
    if a.size == int(np.prod(shape)) and a.ndim <= len(shape):
        return a.reshape(shape)
    return np.broadcast_to(a, shape)


def as_matrix(gamma, dp: int) -> np.ndarray:
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim >= 2 and g.shape[-2:] == (dp, dp):
        return g
    if dp == 1:
        return g[..., None, None]
    raise ContractError(f"gamma must have trailing shape {(dp, dp)}, got {g.shape}")


def drift_correction(gs: GSuite, z, gamma) -> np.ndarray:
    """Half the trace of ``dw + g dy^T + (dx + z dy^T + gamma dz)^T dz``."""
    m = gs.dx + z[..., :, None] * gs.dy[..., None, :] + gamma @ gs.dz
    tr_w = np.trace(gs.dw, axis1=-2, axis2=-1)
    return 0.5 * (tr_w + np.sum(gs.value * gs.dy, axis=-1) + np.sum(m * gs.dz, axis=(-2, -1)))


def ito_drift(suite: CoefficientSuite, t, x, path, y, z, gamma) -> np.ndarray:
    """Itô-form drift ``F`` of the Stratonovich equation ``du = f dt + g o dB``.

    The d noise components are contracted by the trace, which is the Itô
    correction of each component's Stratonovich integral.
    """
    x, y, z, gamma = suite.args(x, y, z, gamma)
    f = suite.f_value(t, x, path, y, z, gamma)
    gs = suite.g_suite(t, x, path, y, z)
    return f + drift_correction(gs, z, gamma)


def _sym_basis(dp: int):
    for i in range(dp):
        for k in range(i, dp):
            e = np.zeros((dp, dp))
            e[i, k] = e[k, i] = 1.0 if i == k else 0.5
            yield i, k, e


def dgamma_fd(fun: Callable, gamma: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference matrix derivative of ``fun(gamma)`` along symmetric directions."""
    dp = gamma.shape[-1]
    out = np.zeros(gamma.shape)
    for i, k, e in _sym_basis(dp):
        diff = (fun(gamma + step * e) - fun(gamma - step * e)) / (2.0 * step)
        out[..., i, k] = diff
        out[..., k, i] = diff
    return out


@dataclass(frozen=True)
class ParabolicityReport:
    min_eigenvalue: float
    max_form_gap: float
    points: int

    @property
    def parabolic(self) -> bool:
        return self.min_eigenvalue >= 0.0


def parabolicity_check(suite: CoefficientSuite, path: SamplePath, lattice: Iterable) -> ParabolicityReport:
    """Smallest eigenvalue of ``d f / d gamma`` over a lattice of points.

    ``lattice`` yields ``(t, x, y, z, gamma)`` batches.  The direct derivative
    is compared with ``dF/dgamma - dz dz^T / 2`` (F differentiated numerically)
    and the two must agree to 1e-8.
    """
    lo, gap, count = np.inf, 0.0, 0
    for t, x, y, z, gamma in lattice:
        x, y, z, gamma = suite.args(x, y, z, gamma)
        direct = suite.f_dgamma(t, x, path, y, z, gamma)
        direct = 0.5 * (direct + np.swapaxes(direct, -1, -2))
        gs = suite.g_suite(t, x, path, y, z)
        dF = dgamma_fd(lambda gm: ito_drift(suite, t, x, path, y, z, gm), np.array(gamma))
        sub = dF - 0.5 * gs.dz @ np.swapaxes(gs.dz, -1, -2)
        gap = max(gap, float(np.max(np.abs(sub - direct))))
        eig = np.linalg.eigvalsh(direct)
        lo = min(lo, float(np.min(eig)))
        count += int(np.prod(y.shape)) if y.shape else 1
    if count == 0:
        raise ParameterError("parabolicity_check needs a nonempty lattice")
    if gap > 1e-8:
        raise ContractError(f"direct and subtraction forms of df/dgamma disagree by {gap:.3e}")
    return ParabolicityReport(lo, gap, count)


def product_lattice(times, xs, ys, zs, gammas):
    """Lattice for d = d' = 1: every combination of the given values, batched per time."""
    X, Y, Z, G = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float), np.asarray(zs, float),
                             np.asarray(gammas, float), indexing="ij")
    return [(float(t), X.ravel(), Y.ravel(), Z.ravel(), G.ravel()) for t in times]


# --- coefficient families -------------------------------------------------


def affine_suite(diffusion=0.5, drift_z=0.0, drift_y=0.0, source=0.0,
                 noise_z=0.0, noise_y=0.0, noise_0=0.0, *, d: int = 1, dprime: int = 1) -> CoefficientSuite:
    """``f = A:gamma + beta.z + c y + k`` and ``g = S^T z + r y + q(t)``.

    ``noise_0`` may be a callable of ``t``; it is deterministic so its path
    derivative vanishes.
    """
    A = np.asarray(diffusion, float)
    A = float(A) * np.eye(dprime) if A.ndim == 0 else A.reshape(dprime, dprime)
    beta = np.broadcast_to(np.asarray(drift_z, float), (dprime,)).copy()
    S = np.asarray(noise_z, float)
    S = np.eye(dprime, d) * float(S) if S.ndim == 0 else S.reshape(dprime, d)
    r = np.broadcast_to(np.asarray(noise_y, float), (d,)).copy()
    c, k = float(drift_y), float(source)

    def q(t):
        return np.broadcast_to(np.asarray(noise_0(t) if callable(noise_0) else noise_0, float), (d,))

    def f_eval(t, x, path, y, z, gamma):
        return np.sum(A * gamma, axis=(-2, -1)) + z @ beta + c * y + k

    def f_dgamma(t, x, path, y, z, gamma):
        return np.broadcast_to(0.5 * (A + A.T), y.shape + (dprime, dprime))

    def g(t, x, path, y, z):
        batch = y.shape
        value = z @ S + y[..., None] * r + q(t)
        return GSuite(value, np.zeros(batch + (d, d)), np.zeros(batch + (dprime, d)),
                      np.broadcast_to(r, batch + (d,)), np.broadcast_to(S, batch + (dprime, d)))

    return CoefficientSuite(FCoeff(f_eval, f_dgamma), g, (d, dprime))


def heat_transport(sigma: float = 1.0, diffusivity: float = 0.5) -> CoefficientSuite:
    """``f = diffusivity * gamma``, ``g = sigma z`` (d = d' = 1)."""
    return affine_suite(diffusion=diffusivity, noise_z=sigma)


def scalar_suite(f: Callable, f_gamma: Callable, g: Optional[Callable] = None) -> CoefficientSuite:
    """d = d' = 1 suite from scalar callables.

    ``f(t, x, b, y, z, gamma)``, ``f_gamma`` likewise; ``g(t, x, b, y, z)``
    returns ``(value, d_omega, d_x, d_y, d_z)``.  ``g=None`` means g = 0.
    """

    def f_eval(t, x, path, y, z, gamma):
        return f(t, x[..., 0], path.value_at(t)[0], y, z[..., 0], gamma[..., 0, 0])

    def f_dg(t, x, path, y, z, gamma):
        return np.asarray(f_gamma(t, x[..., 0], path.value_at(t)[0], y, z[..., 0], gamma[..., 0, 0]))[..., None, None]

    def g_eval(t, x, path, y, z):
        if g is None:
            zero = np.zeros(y.shape + (1,))
            return GSuite(zero, zero[..., None], zero[..., None], zero, zero[..., None])
        parts = g(t, x[..., 0], path.value_at(t)[0], y, z[..., 0])
        v, w, gx, gy, gz = (np.broadcast_to(np.asarray(p, float), y.shape) for p in parts)
        return GSuite(v[..., None], w[..., None, None], gx[..., None, None], gy[..., None], gz[..., None, None])

    return CoefficientSuite(FCoeff(f_eval, f_dg), g_eval, (1, 1))


def fd_g(gfun: Callable, d: int = 1, dprime: int = 1, step: float = FD_STEP) -> GCoeff:
    """Derivative blocks of a black-box ``gfun(t, x, b, y, z) -> (..., d)`` by central differences.

    ``b`` is ``B_t``; the path derivative of a Markovian coefficient is its
    b-gradient.
    """

    def partial(fn, arr, i):
        e = np.zeros(arr.shape[-1])
        e[i] = step
        return (fn(arr + e) - fn(arr - e)) / (2.0 * step)

    def g(t, x, path, y, z):
        b = np.asarray(path.value_at(t), float)
        value = np.asarray(gfun(t, x, b, y, z), float)
        dw = np.stack([partial(lambda bb: gfun(t, x, bb, y, z), b, i) for i in range(d)], axis=-2)
        dx = np.stack([partial(lambda xx: gfun(t, xx, b, y, z), x, i) for i in range(dprime)], axis=-2)
        dy = (np.asarray(gfun(t, x, b, y + step, z)) - np.asarray(gfun(t, x, b, y - step, z))) / (2.0 * step)
        dz = np.stack([partial(lambda zz: gfun(t, x, b, y, zz), z, i) for i in range(dprime)], axis=-2)
        return GSuite(value, dw, dx, dy, dz)

    return g


# --- change of variable ---------------------------------------------------


@dataclass(frozen=True)
class Exponent:
    """``eta_t = int_0^t lambda_s ds`` by trapezoidal quadrature on a time grid."""

    lam: Callable
    times: np.ndarray
    eta: np.ndarray

    @classmethod
    def build(cls, lam: Callable, times) -> "Exponent":
        ts = np.asarray(times, float)
        vals = np.array([float(lam(t)) for t in ts])
        eta = np.concatenate([[0.0], np.cumsum(0.5 * (vals[:-1] + vals[1:]) * np.diff(ts))])
        return cls(lam, ts, eta)

    def __call__(self, t) -> float:
        if t < self.times[0] - 1e-12 or t > self.times[-1] * (1 + 1e-12) + 1e-12:
            raise ParameterError(f"time {t!r} outside exponent grid")
        return float(np.interp(t, self.times, self.eta))

    def negated(self) -> "Exponent":
        return Exponent(lambda t: -self.lam(t), self.times, -self.eta)


def _exponent(lam, times) -> Exponent:
    if isinstance(lam, Exponent):
        return lam
    if times is None:
        raise ParameterError("a time grid is needed to integrate lambda")
    return Exponent.build(lam, times)


def change_of_variable(suite: CoefficientSuite, lam, times=None) -> CoefficientSuite:
    """Coefficients of ``exp(eta_t) u``: ``f~ = lam y + e^eta f(e^-eta (y, z, gamma))``, ``g~ = e^eta g(e^-eta (y, z))``."""
    ex = _exponent(lam, times)

    def f_eval(t, x, path, y, z, gamma):
        e = np.exp(ex(t))
        return ex.lam(t) * y + e * suite.f_value(t, x, path, y / e, z / e, gamma / e)

    def f_dgamma(t, x, path, y, z, gamma):
        e = np.exp(ex(t))
        return suite.f_dgamma(t, x, path, y / e, z / e, gamma / e)

    def g(t, x, path, y, z):
        e = np.exp(ex(t))
        s = suite.g_suite(t, x, path, y / e, z / e)
        return GSuite(e * s.value, e * s.dw, e * s.dx, s.dy, s.dz)

    return CoefficientSuite(FCoeff(f_eval, f_dgamma), g, suite.dims)


def transform_field(u: RandomField, lam, times=None) -> RandomField:
    """``u~ = exp(eta_t) u`` with the matching derivative suite."""
    if not u.has_suite:
        raise ContractError("transform_field needs a field with a derivative suite")
    ex = _exponent(lam, times)

    def evaluator(t, x, path):
        return np.exp(ex(t)) * u.evaluator(t, x, path)

    def suite_evaluator(t, x, path):
        e = np.exp(ex(t))
        s = u.suite_evaluator(t, x, path)
        value = e * s.value
        return DerivativeSuite(value, ex.lam(t) * value + e * s.dt, e * s.dx, e * s.dxx,
                               e * s.dw, e * s.dxw, e * s.dww)

    return RandomField(evaluator, suite_evaluator, "composite", u.dim, u.noise_dim)


def shifted_coefficients(suite: CoefficientSuite, v: RandomField) -> CoefficientSuite:
    """Coefficients ``(f^v, g^v)`` of ``theta = w - v`` for a classical ``v``.

    ``f^v(y, z, gamma) = f(v + y, v_x + z, v_xx + gamma) - f(v, v_x, v_xx)``,
    likewise ``g^v``.  The x- and omega-blocks of ``g^v`` are total
    derivatives, including the dependence of ``v`` on (x, omega).
    """
    if not v.has_suite:
        raise ContractError("shifted_coefficients needs v with a derivative suite")

    def f_eval(t, x, path, y, z, gamma):
        s = v.suite_evaluator(t, x, path)
        return (suite.f_value(t, x, path, s.value + y, s.dx + z, s.dxx + gamma)
                - suite.f_value(t, x, path, s.value, s.dx, s.dxx))

    def f_dgamma(t, x, path, y, z, gamma):
        s = v.suite_evaluator(t, x, path)
        return suite.f_dgamma(t, x, path, s.value + y, s.dx + z, s.dxx + gamma)

    def total(gs, s):
        dx = gs.dx + s.dx[..., :, None] * gs.dy[..., None, :] + s.dxx @ gs.dz
        dw = gs.dw + s.dw[..., :, None] * gs.dy[..., None, :] + np.swapaxes(s.dxw, -1, -2) @ gs.dz
        return dx, dw

    def g(t, x, path, y, z):
        s = v.suite_evaluator(t, x, path)
        hi = suite.g_suite(t, x, path, s.value + y, s.dx + z)
        lo = suite.g_suite(t, x, path, s.value, s.dx)
        dx_hi, dw_hi = total(hi, s)
        dx_lo, dw_lo = total(lo, s)
        return GSuite(hi.value - lo.value, dw_hi - dw_lo, dx_hi - dx_lo, hi.dy, hi.dz)

    return CoefficientSuite(FCoeff(f_eval, f_dgamma), g, suite.dims)
