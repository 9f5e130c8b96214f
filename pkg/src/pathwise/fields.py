"""Random fields u(t, x, omega) and their path-derivative suites.

Points are batched: ``x`` has shape ``(..., d')`` and every quantity returned
for a batch carries the same leading shape.  The driving path enters a
Markovian field only through ``B_t``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, ParameterError
from .paths import SamplePath


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to shape ``(..., dim)``; a scalar is a single 1-d point."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        if dim != 1:
            raise ContractError(f"scalar point given for d'={dim}")
        return x[None]
    if x.shape[-1] != dim:
        if dim == 1:
            return x[..., None]
        raise ContractError(f"points must have trailing dimension {dim}, got shape {x.shape}")
    return x


def _fit(a, shape) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape == shape:
        return a
    if a.size == int(np.prod(shape)) and a.ndim <= len(shape):
        return a.reshape(shape)
    return np.broadcast_to(a, shape).copy()


@dataclass(frozen=True)
class DerivativeSuite:
    """Value and derivatives of a field at a batch of points.

    Shapes (batch ``...``): value, dt ``(...)``; dx ``(..., d')``;
    dxx ``(..., d', d')``; dw ``(..., d)``; dxw ``(..., d', d)``; dww ``(..., d, d)``.
    """

    value: np.ndarray
    dt: np.ndarray
    dx: np.ndarray
    dxx: np.ndarray
    dw: np.ndarray
    dxw: np.ndarray
    dww: np.ndarray


Evaluator = Callable[[float, np.ndarray, SamplePath], np.ndarray]
SuiteEvaluator = Callable[[float, np.ndarray, SamplePath], DerivativeSuite]


@dataclass(frozen=True)
class RandomField:
    evaluator: Evaluator
    suite_evaluator: Optional[SuiteEvaluator] = None
    kind: str = "markovian"
    dim: int = 1
    noise_dim: int = 1

    def __call__(self, t, x, path):
        return evaluate(self, t, x, path)

    def suite(self, t, x, path) -> DerivativeSuite:
        if self.suite_evaluator is None:
            raise ContractError(f"{self.kind} field carries no derivative suite")
        _check_time(t, path)
        return self.suite_evaluator(float(t), as_points(x, self.dim), path)

    @property
    def has_suite(self) -> bool:
        return self.suite_evaluator is not None


def _check_time(t, path):
    if path is not None and not (-1e-12 <= t <= path.horizon * (1 + 1e-12)):
        raise ParameterError(f"time {t!r} outside path horizon [0, {path.horizon!r}]")


def evaluate(field: RandomField, t: float, x, path: Optional[SamplePath]):
    _check_time(t, path)
    pts = as_points(x, field.dim)
    out = _fit(field.evaluator(float(t), pts, path), pts.shape[:-1])
    return float(out) if out.ndim == 0 else out


_PARTIALS = ("value", "dt", "dx", "dxx", "db", "dbb", "dxb")


def markov_field(value=None, dt=None, dx=None, dxx=None, db=None, dbb=None, dxb=None,
                 *, dim: int = 1, noise_dim: int = 1) -> RandomField:
    """Field ``u(t, x, omega) = phi(t, x, B_t(omega))`` with analytic derivatives.

    Each argument is a callable ``(t, x, b)`` with ``x`` of shape ``(..., d')``
    and ``b`` of shape ``(d,)``.  Since ``d phi(t,x,B_t)`` has Itô drift
    ``phi_t + tr(phi_bb)/2``, the path derivatives are ``dw = phi_b``,
    ``dww = phi_bb`` and ``dt = phi_t``.
    """
    given = dict(value=value, dt=dt, dx=dx, dxx=dxx, db=db, dbb=dbb, dxb=dxb)
    missing = [k for k in _PARTIALS if given[k] is None]
    if missing:
        raise ContractError(f"markov_field needs all partials; missing {missing}")
    d, dp = int(noise_dim), int(dim)

    def evaluator(t, x, path):
        return value(t, x, path.value_at(t))

    def suite_evaluator(t, x, path):
        b = path.value_at(t)
        batch = x.shape[:-1]
        return DerivativeSuite(
            value=_fit(value(t, x, b), batch),
            dt=_fit(dt(t, x, b), batch),
            dx=_fit(dx(t, x, b), batch + (dp,)),
            dxx=_fit(dxx(t, x, b), batch + (dp, dp)),
            dw=_fit(db(t, x, b), batch + (d,)),
            dxw=_fit(dxb(t, x, b), batch + (dp, d)),
            dww=_fit(dbb(t, x, b), batch + (d, d)),
        )

    return RandomField(evaluator, suite_evaluator, "markovian", dp, d)


def scalar_markov_field(phi, phi_t, phi_x, phi_xx, phi_b, phi_bb, phi_xb) -> RandomField:
    """``markov_field`` for d = d' = 1 with callables of scalar ``(t, x, b)``."""

    def wrap(fn):
        return lambda t, x, b: fn(t, x[..., 0], b[0])

    return markov_field(*(wrap(f) for f in (phi, phi_t, phi_x, phi_xx, phi_b, phi_bb, phi_xb)))


def constant_field(c: float) -> RandomField:
    zero = lambda t, x, b: np.zeros_like(x)
    return scalar_markov_field(lambda t, x, b: np.full_like(x, c), zero, zero, zero, zero, zero, zero)


def gaussian_heat(var0: float = 1.0, diffusivity: float = 0.5, mass: float = 1.0, mean: float = 0.0):
    """Closed-form solution of ``psi_t = diffusivity * psi_yy`` from a Gaussian density.

    Returns a callable ``psi(t, y, order)`` giving the ``order``-th y-derivative
    (0..3) and the time derivative via ``order='t'``.
    """
    if var0 <= 0:
        raise ParameterError("initial variance must be positive")

    def psi(t, y, order=0):
        v = var0 + 2.0 * diffusivity * t
        r = (np.asarray(y, dtype=np.float64) - mean) / np.sqrt(v)
        g = mass * np.exp(-0.5 * r * r) / np.sqrt(2.0 * np.pi * v)
        if order == 0:
            return g
        if order == 1:
            return -r / np.sqrt(v) * g
        if order == 2:
            return (r * r - 1.0) / v * g
        if order == 3:
            return (3.0 * r - r ** 3) / v ** 1.5 * g
        if order == "t":
            return diffusivity * (r * r - 1.0) / v * g
        raise ValueError(order)

    return psi


def transported_field(psi, sigma: float) -> RandomField:
    """``u(t, x) = psi(t, x + sigma B_t)`` for d = d' = 1.

    With ``psi`` a heat solution this is the classical solution of
    ``du = f dt + sigma u_x o dB`` where ``f`` is the heat operator.
    """
    s = float(sigma)
    return scalar_markov_field(
        lambda t, x, b: psi(t, x + s * b, 0),
        lambda t, x, b: psi(t, x + s * b, "t"),
        lambda t, x, b: psi(t, x + s * b, 1),
        lambda t, x, b: psi(t, x + s * b, 2),
        lambda t, x, b: s * psi(t, x + s * b, 1),
        lambda t, x, b: s * s * psi(t, x + s * b, 2),
        lambda t, x, b: s * psi(t, x + s * b, 2),
    )


def transported_heat(sigma: float = 1.0, var0: float = 1.0, diffusivity: float = 0.5,
                     mass: float = 1.0, mean: float = 0.0) -> RandomField:
    return transported_field(gaussian_heat(var0, diffusivity, mass, mean), sigma)


def verify_functional_ito(field: RandomField, path: SamplePath, x, T: float) -> float:
    """Max residual of ``u(t) = u(0) + int dt-part ds + int dw-part o dB`` over nodes t <= T.

    Both integrals are trapezoidal on the path grid.
    """
    if not field.has_suite:
        raise ContractError("functional Itô check needs a derivative suite")
    k_end = path.index_of(T)
    pts = as_points(x, field.dim)[None]
    vals = np.empty(k_end + 1)
    drift = np.empty(k_end + 1)
    dw = np.empty((k_end + 1, field.noise_dim))
    for k in range(k_end + 1):
        s = field.suite(k * path.dt, pts, path)
        vals[k] = s.value[0]
        drift[k] = s.dt[0]
        dw[k] = s.dw[0]
    drift_int = np.concatenate([[0.0], np.cumsum(0.5 * (drift[:-1] + drift[1:]) * path.dt)])
    strat = np.concatenate([[0.0], np.cumsum(np.sum(0.5 * (dw[:-1] + dw[1:]) * path.increments[:k_end], axis=1))])
    return float(np.max(np.abs(vals - vals[0] - drift_int - strat)))


def sampled_field(samples, times, xs, interpolation: str = "linear") -> RandomField:
    """Wrap tabulated values ``samples[i, j] = u(times[i], xs[j])`` (d' = 1)."""
    vals = np.asarray(samples, dtype=np.float64)
    ts = np.asarray(times, dtype=np.float64)
    xg = np.asarray(xs, dtype=np.float64)
    if vals.shape != (ts.size, xg.size):
        raise ParameterError(f"samples shape {vals.shape} does not match grid {(ts.size, xg.size)}")
    if interpolation not in ("nearest", "linear"):
        raise ParameterError(f"unknown interpolation {interpolation!r}")
    if np.any(np.diff(ts) <= 0) or np.any(np.diff(xg) <= 0):
        raise ParameterError("sample grid must be strictly increasing")

    def locate(grid, q):
        if np.any(q < grid[0] - 1e-12) or np.any(q > grid[-1] + 1e-12):
            raise ParameterError(f"query outside sample box [{grid[0]}, {grid[-1]}]")
        if grid.size == 1:
            return np.zeros(np.shape(q), dtype=int), np.zeros(np.shape(q))
        i = np.clip(np.searchsorted(grid, q, side="right") - 1, 0, grid.size - 2)
        w = np.clip((q - grid[i]) / (grid[i + 1] - grid[i]), 0.0, 1.0)
        return i, w

    def evaluator(t, x, path):
        q = x[..., 0]
        it, wt = locate(ts, np.asarray(t))
        ix, wx = locate(xg, q)
        if interpolation == "nearest":
            it = it + (wt > 0.5) if ts.size > 1 else it
            ix = ix + (wx > 0.5) if xg.size > 1 else ix
            return vals[it, ix]
        it1 = np.minimum(it + 1, ts.size - 1)
        ix1 = np.minimum(ix + 1, xg.size - 1)
        lo = (1 - wx) * vals[it, ix] + wx * vals[it, ix1]
        hi = (1 - wx) * vals[it1, ix] + wx * vals[it1, ix1]
        return (1 - wt) * lo + wt * hi

    return RandomField(evaluator, None, "sampled", 1, 1)


def write_sampled_csv(file, times, xs, samples, metadata: dict) -> None:
    """Write ``t,x,value`` rows plus a ``<file>.meta.json`` sidecar."""
    file = Path(file)
    vals = np.asarray(samples)
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value"])
        for i, t in enumerate(times):
            for j, x in enumerate(xs):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(vals[i, j]))])
    meta = dict(metadata)
    meta["grid_shape"] = [len(times), len(xs)]
    Path(str(file) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_sampled_csv(file, interpolation: str = "linear") -> tuple[RandomField, dict]:
    file = Path(file)
    meta = json.loads(Path(str(file) + ".meta.json").read_text())
    nt, nx = meta["grid_shape"]
    data = np.loadtxt(file, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != nt * nx:
        raise ParameterError("row count does not match sidecar grid shape")
    ts = data[::nx, 0]
    xs = data[:nx, 1]
    return sampled_field(data[:, 2].reshape(nt, nx), ts, xs, interpolation), meta
