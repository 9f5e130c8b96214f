"""Discretized Brownian driving paths and their second-level data.

A :class:`SamplePath` is one frozen realisation of the driving noise on a
uniform grid ``t_k = k T / N``.  All stochastic integrals against it are
trapezoidal (Stratonovich) sums, which makes the product rule and Chen's
relation exact algebraic identities on the grid.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numba
import numpy as np

from .errors import ParameterError
from .rng import stream

PathLike = Union[str, Path]

MAGIC = b"PWPF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQdQ")

# grid-membership tolerance, in units of the mesh width
_GRID_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SamplePath:
    """A d-dimensional driving path on a uniform grid.

    ``increments[k] = values[k+1] - values[k]`` is kept alongside the
    cumulative ``values`` so that short-window quantities are computed from
    raw increments rather than differences of large cumulative sums.
    """

    dimension: int
    horizon: float
    mesh: int
    increments: np.ndarray
    values: np.ndarray
    seed: int
    level: int = 0

    def __post_init__(self):
        if self.values.shape != (self.mesh + 1, self.dimension):
            raise ParameterError(f"values must have shape {(self.mesh + 1, self.dimension)}")
        if self.increments.shape != (self.mesh, self.dimension):
            raise ParameterError(f"increments must have shape {(self.mesh, self.dimension)}")

    @classmethod
    def from_increments(cls, increments, horizon: float, seed: int = 0, level: int = 0) -> "SamplePath":
        inc = np.atleast_2d(np.asarray(increments, dtype=np.float64))
        if inc.ndim != 2:
            raise ParameterError("increments must be an (N, d) array")
        values = np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)])
        return cls(inc.shape[1], float(horizon), inc.shape[0], _frozen(inc), _frozen(values), int(seed), level)

    @classmethod
    def from_values(cls, values, horizon: float, seed: int = 0, level: int = 0) -> "SamplePath":
        """Build a path from node values; ``values[0]`` must be the origin."""
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] < 2:
            raise ParameterError("a path needs at least two nodes")
        if np.any(vals[0] != 0.0):
            raise ParameterError("paths start at the origin")
        return cls(vals.shape[1], float(horizon), vals.shape[0] - 1,
                   _frozen(np.diff(vals, axis=0)), _frozen(vals), int(seed), level)

    @property
    def dt(self) -> float:
        return self.horizon / self.mesh

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.mesh + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not a grid node."""
        k = t / self.dt
        kr = int(round(k))
        if abs(k - kr) > _GRID_TOL * max(1.0, abs(k)) or kr < 0 or kr > self.mesh:
            raise ParameterError(f"time {t!r} is not a node of the grid (dt={self.dt!r}, T={self.horizon!r})")
        return kr

    def on_grid(self, t: float) -> bool:
        try:
            self.index_of(t)
        except ParameterError:
            return False
        return True

    def value_at(self, t: float) -> np.ndarray:
        """B_t; exact at nodes, linearly interpolated between them."""
        if t < -_GRID_TOL * self.dt or t > self.horizon * (1 + _GRID_TOL):
            raise ParameterError(f"time {t!r} outside [0, {self.horizon!r}]")
        k = t / self.dt
        kr = int(round(k))
        if abs(k - kr) <= _GRID_TOL * max(1.0, abs(k)):
            return self.values[min(max(kr, 0), self.mesh)]
        lo = int(np.floor(k))
        w = k - lo
        return self.values[lo] + w * self.increments[lo]

    def increment(self, s: float, t: float) -> np.ndarray:
        """B_{s,t} summed from raw increments."""
        i, j = self.index_of(s), self.index_of(t)
        if j < i:
            raise ParameterError("increment needs s <= t")
        return self.increments[i:j].sum(axis=0)


@dataclass(frozen=True, eq=False)
class SecondLevel:
    """Increment, trapezoidal iterated integrals and Lévy area over [s, t]."""

    increment: np.ndarray
    strat_matrix: np.ndarray
    levy: np.ndarray


def sample_path(d: int, T: float, N: int, seed: int) -> SamplePath:
    """Sample Brownian motion on ``N`` uniform steps of ``[0, T]``."""
    if int(d) != d or d < 1:
        raise ParameterError(f"dimension must be a positive integer, got {d!r}")
    if not T > 0:
        raise ParameterError(f"horizon must be positive, got {T!r}")
    if int(N) != N or N < 1:
        raise ParameterError(f"mesh must be a positive integer, got {N!r}")
    gen = stream(seed, "path")
    inc = gen.standard_normal((int(N), int(d))) * np.sqrt(T / N)
    return SamplePath.from_increments(inc, T, seed=seed)


def refine(path: SamplePath, factor: int, noise_scale: float = 1.0) -> SamplePath:
    """Insert Brownian-bridge midpoints until the mesh is ``factor`` times finer.

    Each halving draws from a stream keyed by the path seed and the absolute
    refinement level, so ``refine(refine(p, 2), 2)`` and ``refine(p, 4)`` are
    bit-identical.  ``noise_scale=0`` gives plain linear interpolation.
    """
    factor = int(factor)
    if factor < 2 or factor & (factor - 1):
        raise ParameterError(f"refinement factor must be a power of two >= 2, got {factor!r}")
    values = np.asarray(path.values)
    level = path.level
    dt = path.dt
    for _ in range(factor.bit_length() - 1):
        gen = stream(path.seed, "bridge", level)
        n, d = values.shape[0] - 1, values.shape[1]
        fine = np.empty((2 * n + 1, d))
        fine[::2] = values
        noise = gen.standard_normal((n, d)) * (noise_scale * np.sqrt(dt / 4.0))
        fine[1::2] = 0.5 * (values[:-1] + values[1:]) + noise
        values = fine
        dt /= 2.0
        level += 1
    return SamplePath(path.dimension, path.horizon, values.shape[0] - 1,
                      _frozen(np.diff(values, axis=0)), _frozen(values), path.seed, level)


def _window(path: SamplePath, s: float, t: float) -> tuple[int, int]:
    i, j = path.index_of(s), path.index_of(t)
    if not i < j:
        raise ParameterError(f"need s < t on the grid, got s={s!r}, t={t!r}")
    return i, j


def strat_integral(integrand, path: SamplePath, component: int, s: float, t: float) -> float:
    """Trapezoidal Stratonovich sum of ``integrand`` against ``B^component`` over [s, t].

    ``integrand`` holds one value per grid node (length ``N + 1``).
    """
    f = np.asarray(integrand, dtype=np.float64)
    if f.shape != (path.mesh + 1,):
        raise ParameterError(f"integrand must have one value per node ({path.mesh + 1}), got {f.shape}")
    if not 0 <= component < path.dimension:
        raise ParameterError(f"component {component} out of range for d={path.dimension}")
    i, j = _window(path, s, t)
    return float(np.dot(0.5 * (f[i:j] + f[i + 1:j + 1]), path.increments[i:j, component]))


def second_level(path: SamplePath, s: float, t: float) -> SecondLevel:
    i, j = _window(path, s, t)
    dx = path.increments[i:j]
    x = np.vstack([np.zeros((1, path.dimension)), np.cumsum(dx, axis=0)])
    mid = 0.5 * (x[:-1] + x[1:])
    strat = mid.T @ dx
    return SecondLevel(increment=x[-1].copy(), strat_matrix=strat, levy=strat - strat.T)


def chen_check(path: SamplePath, s: float, u: float, t: float) -> float:
    """Max-norm defect of Chen's relation for the Lévy area over s < u < t."""
    if not (path.index_of(s) < path.index_of(u) < path.index_of(t)):
        raise ParameterError("chen_check needs s < u < t")
    whole = second_level(path, s, t)
    left = second_level(path, s, u)
    right = second_level(path, u, t)
    b1, b2 = left.increment, right.increment
    cross = np.outer(b1, b2) - np.outer(b2, b1)
    return float(np.max(np.abs(whole.levy - left.levy - right.levy - cross)))


@numba.njit(cache=True)
def _holder_sup(values, dt, kappa):
    n = values.shape[0]
    d = values.shape[1]
    best = 0.0
    for lag in range(1, n):
        scale = (lag * dt) ** kappa
        for k in range(n - lag):
            acc = 0.0
            for c in range(d):
                diff = values[k + lag, c] - values[k, c]
                acc += diff * diff
            r = np.sqrt(acc) / scale
            if r > best:
                best = r
    return best


def holder_coefficient(path: SamplePath, exponent: float) -> float:
    """Empirical Hölder constant: sup over node pairs of |B_{s,t}| / (t - s)^exponent.

    ``exponent = 0`` is allowed and returns the largest node-to-node distance.
    """
    if not 0.0 <= exponent < 1.0:
        raise ParameterError(f"exponent must lie in [0, 1), got {exponent!r}")
    return float(_holder_sup(np.asarray(path.values), path.dt, float(exponent)))


def write_path(path: SamplePath, file: PathLike) -> None:
    """Binary layout: header ``<4sIIQdQ`` then N*d little-endian f64 increments."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, path.dimension, path.mesh, path.horizon, path.seed)
    with open(file, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())


def read_path(file: PathLike) -> SamplePath:
    with open(file, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ParameterError("truncated path file")
    magic, version, d, n, horizon, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ParameterError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParameterError(f"unsupported path file version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != n * d:
        raise ParameterError(f"expected {n * d} increments, found {body.size}")
    return SamplePath.from_increments(body.reshape(n, d).astype(np.float64), horizon, seed=seed)


def export_csv(path: SamplePath, file: PathLike) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t"] + [f"B_{i + 1}" for i in range(path.dimension)])
        for k, (t, row) in enumerate(zip(path.times, path.values)):
            w.writerow([k, repr(float(t))] + [repr(float(v)) for v in row])
