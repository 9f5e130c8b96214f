"""Explicit finite-difference reference solvers on a frozen path (d = d' = 1).

The Stratonovich solver splits each path step into an explicit ``f`` step and
a Heun step for the noise term; the Itô solver takes an Euler-Maruyama step
with the Itô drift.  Both use central differences in x.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coefficients import CoefficientSuite, FCoeff, ito_drift
from .errors import ParameterError, StabilityError
from .fields import RandomField, sampled_field
from .paths import SamplePath

BLOW_UP = 1e10
CFL_LIMIT = 0.5
BOUNDARIES = ("dirichlet", "clamp")


@dataclass(frozen=True)
class FDGrid:
    x_lo: float
    x_hi: float
    n_x: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.n_x < 5:
            raise ParameterError("need at least 5 spatial nodes")
        if not self.x_hi > self.x_lo:
            raise ParameterError("empty x-box")
        if self.boundary not in BOUNDARIES:
            raise ParameterError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_x)

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.n_x - 1)


@dataclass(frozen=True)
class FDSolution:
    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray
    cfl: float
    boundary: str
    meta: dict = field(default_factory=dict)

    def field(self, interpolation: str = "linear") -> RandomField:
        return sampled_field(self.values, self.times, self.xs, interpolation)

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, t):
            raise ParameterError(f"time {t!r} was not recorded")
        return self.values[k]


def _derivs(u: np.ndarray, dx: float, boundary: str):
    """Central first and compact second differences; edges padded for ``clamp``."""
    p = np.concatenate([u[:1], u, u[-1:]])
    d1 = (p[2:] - p[:-2]) / (2.0 * dx)
    d2 = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / (dx * dx)
    return d1, d2


def _g(suite: CoefficientSuite, t, X, path, u, ux):
    # X is (n, 1); raw call skips argument normalisation in the inner loop
    return np.asarray(suite.g(t, X, path, u, ux[:, None]).value, dtype=np.float64).reshape(u.shape)


def _f(suite: CoefficientSuite, t, X, path, u, ux, uxx):
    return np.asarray(suite.f.eval(t, X, path, u, ux[:, None], uxx[:, None, None]),
                      dtype=np.float64).reshape(u.shape)


def _initial(u0, xs) -> np.ndarray:
    vals = u0(xs) if callable(u0) else np.asarray(u0, dtype=np.float64)
    vals = np.array(np.broadcast_to(np.asarray(vals, dtype=np.float64), xs.shape))
    return vals


def _cfl(dgamma, grid: FDGrid, dt: float) -> float:
    return float(np.max(np.abs(dgamma))) * dt / grid.dx ** 2


def _setup(suite: CoefficientSuite, u0, grid: FDGrid, path: SamplePath, t_end, diffusion):
    if suite.dims != (1, 1):
        raise ParameterError("the reference solver supports d = d' = 1 only")
    xs = grid.nodes
    u = _initial(u0, xs)
    ux, uxx = _derivs(u, grid.dx, grid.boundary)
    cfl = _cfl(diffusion(0.0, xs, path, u, ux, uxx), grid, path.dt)
    if cfl > CFL_LIMIT:
        raise StabilityError(f"CFL number {cfl:.3f} exceeds {CFL_LIMIT}; refine the path or coarsen x")
    k_end = path.mesh if t_end is None else path.index_of(t_end)
    return xs, u, k_end, cfl


def _finish(u, new, u0_edges, grid: FDGrid, k):
    if grid.boundary == "dirichlet":
        new[0], new[-1] = u0_edges
    if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > BLOW_UP:
        raise StabilityError(f"solution exceeded {BLOW_UP:g} at step {k + 1}")
    return new


def _record(every, k_end):
    idx = list(range(0, k_end + 1, every))
    if idx[-1] != k_end:
        idx.append(k_end)
    return idx


def solve_fd_stratonovich(suite: CoefficientSuite, u0, grid: FDGrid, path: SamplePath,
                          t_end: Optional[float] = None, record_every: int = 1) -> FDSolution:
    """Explicit ``f`` step followed by a Heun step for ``g o dB`` on each path step."""
    xs, u, k_end, cfl = _setup(suite, u0, grid, path, t_end, suite.f_dgamma)
    edges = (u[0], u[-1])
    dx, dt = grid.dx, path.dt
    X = xs[:, None]
    keep = set(_record(record_every, k_end))
    times, out = [0.0], [u.copy()]
    for k in range(k_end):
        t = k * dt
        ux, uxx = _derivs(u, dx, grid.boundary)
        v = u + dt * _f(suite, t, X, path, u, ux, uxx)
        dB = path.increments[k, 0]
        vx, _ = _derivs(v, dx, grid.boundary)
        g0 = _g(suite, t, X, path, v, vx)
        pred = v + g0 * dB
        px, _ = _derivs(pred, dx, grid.boundary)
        g1 = _g(suite, t + dt, X, path, pred, px)
        u = _finish(u, v + 0.5 * (g0 + g1) * dB, edges, grid, k)
        if k + 1 in keep:
            times.append((k + 1) * dt)
            out.append(u.copy())
    return FDSolution(np.array(times), xs, np.array(out), cfl, grid.boundary,
                      {"scheme": "stratonovich-heun", "steps": k_end})


def solve_fd_ito(suite: CoefficientSuite, u0, grid: FDGrid, path: SamplePath, t_end: Optional[float] = None,
                 record_every: int = 1, drift: Optional[Callable] = None) -> FDSolution:
    """Euler-Maruyama step ``u + F dt + g dB`` with ``F`` from :func:`ito_drift`.

    ``drift(t, x, path, y, z, gamma)`` replaces ``F`` when given.
    """
    F = drift or (lambda t, x, path, y, z, gm: ito_drift(suite, t, x, path, y, z, gm))

    def diffusion(t, x, path, y, z, gm):
        e = 1e-5
        return (F(t, x, path, y, z, gm + e) - F(t, x, path, y, z, gm - e)) / (2 * e)

    xs, u, k_end, cfl = _setup(suite, u0, grid, path, t_end, diffusion)
    edges = (u[0], u[-1])
    dx, dt = grid.dx, path.dt
    X = xs[:, None]
    keep = set(_record(record_every, k_end))
    times, out = [0.0], [u.copy()]
    for k in range(k_end):
        t = k * dt
        ux, uxx = _derivs(u, dx, grid.boundary)
        drift_k = np.asarray(F(t, X, path, u, ux[:, None], uxx[:, None, None]), dtype=np.float64).reshape(xs.shape)
        v = u + dt * drift_k
        u = _finish(u, v + _g(suite, t, X, path, u, ux) * path.increments[k, 0], edges, grid, k)
        if k + 1 in keep:
            times.append((k + 1) * dt)
            out.append(u.copy())
    return FDSolution(np.array(times), xs, np.array(out), cfl, grid.boundary,
                      {"scheme": "ito-euler-maruyama", "steps": k_end})


# --- mollified envelopes ----------------------------------------------------

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(3)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def mollify_initial(u0: Callable, width: float) -> Callable:
    """Three-point Gauss-Hermite average of ``u0`` over ``x + width * N(0, 1)``."""
    if width == 0:
        return u0
    return lambda x: sum(w * u0(np.asarray(x) + width * n) for n, w in zip(_GH_NODES, _GH_WEIGHTS))


def mollify_suite(suite: CoefficientSuite, width: float, shift: float = 0.0) -> CoefficientSuite:
    """``f`` averaged over Gaussian perturbations of ``(y, z, gamma)``, plus a constant ``shift``."""
    if width == 0:
        nodes, weights = np.zeros(1), np.ones(1)
    else:
        nodes, weights = _GH_NODES * width, _GH_WEIGHTS
    combos = [(a, b, c, wa * wb * wc) for a, wa in zip(nodes, weights)
              for b, wb in zip(nodes, weights) for c, wc in zip(nodes, weights)]

    def f_eval(t, x, path, y, z, gamma):
        return sum(w * suite.f_value(t, x, path, y + a, z + b, gamma + c) for a, b, c, w in combos) + shift

    def f_dgamma(t, x, path, y, z, gamma):
        return sum(w * suite.f_dgamma(t, x, path, y + a, z + b, gamma + c) for a, b, c, w in combos)

    return CoefficientSuite(FCoeff(f_eval, f_dgamma), suite.g, suite.dims)


@dataclass(frozen=True)
class EnvelopeReport:
    eps: tuple
    gaps: tuple
    predicted: tuple
    min_order: float
    monotone: bool
    ordered: bool
    max_rel_error: float
    rows: list = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.monotone and self.ordered

    HEADER = ("eps", "t", "gap", "predicted", "min_order")


def envelope_experiment(suite: CoefficientSuite, u0: Callable, eps_list: Sequence[float], grid: FDGrid,
                        path: SamplePath, t_end: Optional[float] = None, width_rule: Callable = lambda e: e * e,
                        record_every: int = 1) -> EnvelopeReport:
    """Upper and lower mollified problems shifted by ``+eps`` and ``-eps`` in data and in ``f``.

    ``predicted`` is ``2 eps (1 + t)``, the exact gap when neither ``f`` nor
    ``g`` sees the constant shift.
    """
    eps = [float(e) for e in eps_list]
    if any(e < 0 for e in eps) or any(b > a for a, b in zip(eps, eps[1:])):
        raise ParameterError("eps list must be nonnegative and decreasing")
    gaps, preds, rows, lows = [], [], [], []
    rel = 0.0
    for e in eps:
        wdt = width_rule(e)
        base = mollify_initial(u0, wdt)
        hi = solve_fd_stratonovich(mollify_suite(suite, wdt, +e), lambda x: base(x) + e, grid, path,
                                   t_end, record_every)
        lo = solve_fd_stratonovich(mollify_suite(suite, wdt, -e), lambda x: base(x) - e, grid, path,
                                   t_end, record_every)
        diff = hi.values - lo.values
        t = hi.times[-1]
        gap = float(np.max(diff[-1]))
        pred = 2.0 * e * (1.0 + t)
        gaps.append(gap)
        preds.append(pred)
        lows.append(float(np.min(diff)))
        if pred > 0:
            rel = max(rel, abs(gap - pred) / pred)
        rows.append((e, float(t), gap, pred, float(np.min(diff))))
    monotone = all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    ordered = min(lows) >= -1e-10
    return EnvelopeReport(tuple(eps), tuple(gaps), tuple(preds), min(lows), monotone, ordered, rel, rows)
