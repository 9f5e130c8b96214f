"""Backward pathwise Taylor expansion and remainder-order estimation.

The expansion predicts ``u(t - delta, x + h)`` from the jet of ``u`` at
``(t, x)``, the coefficient ``g`` and the second-level data of the driving
path over ``[t - delta, t]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .coefficients import CoefficientSuite, GSuite
from .errors import ContractError, DomainError, InsufficientDataError, ParameterError
from .fields import RandomField, as_points
from .paths import SamplePath, SecondLevel, second_level

ZERO_REMAINDER = 1e-13
FORM_TOL = 1e-10


@dataclass(frozen=True)
class Jet:
    """Candidate values ``(a, z, gamma)`` of ``(d_t, d_x, d_xx)`` plus the value slot ``y``."""

    a: float
    z: np.ndarray
    gamma: np.ndarray
    y: Optional[float] = None

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=np.float64))
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.ndim == 0:
            g = g.reshape(1, 1)
        if g.shape != (z.size, z.size):
            raise ContractError(f"gamma shape {g.shape} does not match gradient of size {z.size}")
        if not np.allclose(g, g.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.max(np.abs(g))))):
            raise ContractError("gamma must be symmetric")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "gamma", g)
        if self.y is not None:
            object.__setattr__(self, "y", float(self.y))

    @property
    def dim(self) -> int:
        return self.z.size

    def with_value(self, y: float) -> "Jet":
        return Jet(self.a, self.z, self.gamma, y)

    def shifted(self, da: float = 0.0, dgamma: float = 0.0) -> "Jet":
        return Jet(self.a + da, self.z, self.gamma + dgamma * np.eye(self.dim), self.y)


@dataclass(frozen=True)
class ScanLattice:
    """Backward scan points ``(delta, h)``.

    ``pairing='product'`` takes every delta with every offset in ``hs``;
    ``pairing='matched'`` reads ``hs`` as coefficients and uses ``h = c sqrt(delta)``.
    """

    deltas: np.ndarray
    hs: np.ndarray
    pairing: str = "matched"

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.deltas, dtype=np.float64))
        h = np.asarray(self.hs, dtype=np.float64)
        h = h.reshape(-1, 1) if h.ndim <= 1 else h
        if d.size == 0 or h.shape[0] == 0:
            raise ParameterError("scan lattice must be nonempty")
        if np.any(d <= 0):
            raise ParameterError("deltas must be positive")
        if self.pairing not in ("product", "matched"):
            raise ParameterError(f"unknown pairing {self.pairing!r}")
        object.__setattr__(self, "deltas", np.sort(d)[::-1].copy())
        object.__setattr__(self, "hs", h)

    @classmethod
    def matched(cls, deltas, coeffs=(-2.0, -1.0, 0.0, 1.0, 2.0), dim: int = 1) -> "ScanLattice":
        c = np.asarray(coeffs, dtype=np.float64)
        if c.ndim <= 1:
            c = c.reshape(-1, 1) * np.ones(dim) / np.sqrt(dim)
        return cls(deltas, c, "matched")

    @classmethod
    def dyadic(cls, lo_exp: int, hi_exp: int, coeffs=(-2.0, -1.0, 0.0, 1.0, 2.0), dim: int = 1) -> "ScanLattice":
        """Matched lattice with ``delta = 2^-k`` for ``k = hi_exp .. lo_exp``."""
        return cls.matched([2.0 ** -k for k in range(hi_exp, lo_exp + 1)], coeffs, dim)

    @property
    def dim(self) -> int:
        return self.hs.shape[1]

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``delta (M,)`` and ``h (M, d')`` in a fixed order."""
        nd, nh = self.deltas.size, self.hs.shape[0]
        delta = np.repeat(self.deltas, nh)
        h = np.tile(self.hs, (nd, 1))
        if self.pairing == "matched":
            h = h * np.sqrt(delta)[:, None]
        return delta, h

    def validate(self, t: float, path: SamplePath, min_steps: int = 1) -> None:
        if self.deltas[0] > t * (1 + 1e-12):
            raise DomainError(f"delta {self.deltas[0]!r} exceeds anchor time {t!r}")
        for dl in self.deltas:
            path.index_of(t - dl)
        if self.deltas[-1] < min_steps * path.dt * (1 - 1e-9):
            raise ParameterError(f"smallest delta spans fewer than {min_steps} path steps; refine the path")


def _operator(gs: GSuite, a, z, gamma, B, A, delta, h):
    """Reduced and unreduced forms of the expansion operator, batched."""
    dzB = np.einsum("...kj,...j->...k", gs.dz, B)
    k = h - dzB
    L = gs.dx + z[..., :, None] * gs.dy[..., None, :]
    # c[i, j] is the sensitivity of g_j to omega_i along the solution
    c = gs.dw + gs.value[..., :, None] * gs.dy[..., None, :] + np.swapaxes(L, -1, -2) @ gs.dz
    c_full = c + np.swapaxes(gamma @ gs.dz, -1, -2) @ gs.dz
    L_full = L + gamma @ gs.dz
    S = B[..., :, None] * B[..., None, :] - A
    hB = h[..., :, None] * B[..., None, :]
    base = -a * delta + np.sum(z * h, axis=-1) - np.sum(gs.value * B, axis=-1)
    reduced = (base + 0.5 * np.einsum("...k,...kl,...l->...", k, gamma, k)
               + 0.5 * np.sum(c * S, axis=(-2, -1)) - np.sum(L * hB, axis=(-2, -1)))
    unreduced = (base + 0.5 * np.einsum("...k,...kl,...l->...", h, gamma, h)
                 + 0.5 * np.sum(c_full * S, axis=(-2, -1)) - np.sum(L_full * hB, axis=(-2, -1)))
    return reduced, unreduced


def _level_arrays(level) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(level, SecondLevel):
        return np.asarray(level.increment, float), np.asarray(level.levy, float)
    B, A = level
    return np.asarray(B, float), np.asarray(A, float)


def taylor_operator(gsuite: GSuite, jet: Jet, level, delta, h) -> np.ndarray:
    """Expansion increment for jet ``(a, z, gamma)`` with ``g`` data ``gsuite``.

    ``level`` is a :class:`SecondLevel` or a pair ``(B, A)`` over
    ``[t - delta, t]``; batched levels, deltas and offsets broadcast together.
    The quadratic noise term is carried in reduced form, and the unreduced
    form is evaluated alongside as a consistency check.
    """
    B, A = _level_arrays(level)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ParameterError("delta must be positive")
    h = as_points(h, jet.dim)
    red, unred = _operator(gsuite, jet.a, jet.z, jet.gamma, B, A, delta, h)
    scale = 1.0 + np.max(np.abs(red)) if np.size(red) else 1.0
    if np.size(red) and np.max(np.abs(red - unred)) > FORM_TOL * scale:
        raise ContractError("reduced and unreduced expansion forms disagree")
    return red


def canonical_jet(field: RandomField, t: float, x, path: SamplePath) -> Jet:
    """Jet ``(d_t u, d_x u, d_xx u, u)`` of a field with a derivative suite."""
    if not field.has_suite:
        raise ContractError("canonical jet needs a field with a derivative suite")
    s = field.suite(t, as_points(x, field.dim)[None], path)
    return Jet(float(s.dt[0]), s.dx[0], s.dxx[0], float(s.value[0]))


def backward_levels(path: SamplePath, t: float, deltas) -> tuple[np.ndarray, np.ndarray]:
    """Increments ``(M, d)`` and Lévy areas ``(M, d, d)`` over ``[t - delta, t]``."""
    deltas = np.asarray(deltas, dtype=np.float64)
    cache: dict[float, SecondLevel] = {}
    Bs = np.empty((deltas.size, path.dimension))
    As = np.empty((deltas.size, path.dimension, path.dimension))
    for i, dl in enumerate(deltas):
        key = float(dl)
        if key not in cache:
            cache[key] = second_level(path, t - key, t)
        Bs[i] = cache[key].increment
        As[i] = cache[key].levy
    return Bs, As


def _resolve_jet(field, suite, t, x, path, jet, use_f) -> Jet:
    if jet is None:
        jet = canonical_jet(field, t, x, path)
    if jet.y is None:
        jet = jet.with_value(float(field(t, x, path)))
    if use_f:
        a = float(suite.f_value(t, x, path, jet.y, jet.z, jet.gamma))
        jet = Jet(a, jet.z, jet.gamma, jet.y)
    return jet


def expand(field: RandomField, suite: CoefficientSuite, t: float, x, delta, h, path: SamplePath,
           jet: Optional[Jet] = None, use_f: bool = False) -> np.ndarray:
    """Predicted ``u(t - delta, x + h)``; ``use_f`` puts ``f`` in the time slot."""
    delta = np.atleast_1d(np.asarray(delta, dtype=np.float64))
    if np.any(delta > t * (1 + 1e-12)):
        raise DomainError("delta larger than t leaves the time domain")
    x = as_points(x, suite.dprime)
    jet = _resolve_jet(field, suite, t, x, path, jet, use_f)
    h = np.broadcast_to(as_points(h, suite.dprime), delta.shape + (suite.dprime,))
    gs = suite.g_suite(t, x, path, jet.y, jet.z)
    B, A = backward_levels(path, t, delta)
    return jet.y + taylor_operator(gs, jet, (B, A), delta, h)


def shifted_values(field: RandomField, t: float, x, delta, h, path: SamplePath) -> np.ndarray:
    """``u(t - delta, x + h)`` for batched ``delta (M,)`` and ``h (M, d')``."""
    delta = np.asarray(delta, dtype=np.float64)
    pts = as_points(x, field.dim) + h
    out = np.empty(delta.shape)
    for dl in np.unique(delta):
        m = delta == dl
        out[m] = field.evaluator(float(t - dl), pts[m], path)
    return out


def remainder(field: RandomField, suite: CoefficientSuite, t: float, x, delta, h, path: SamplePath,
              jet: Optional[Jet] = None, use_f: bool = False) -> np.ndarray:
    delta = np.atleast_1d(np.asarray(delta, dtype=np.float64))
    h = np.broadcast_to(as_points(h, suite.dprime), delta.shape + (suite.dprime,))
    pred = expand(field, suite, t, x, delta, h, path, jet, use_f)
    return shifted_values(field, t, x, delta, h, path) - pred


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    n_points: int
    deltas: np.ndarray = field(repr=False)
    h_norms: np.ndarray = field(repr=False)
    remainders: np.ndarray = field(repr=False)
    scales: np.ndarray = field(repr=False)


def scan(field: RandomField, suite: CoefficientSuite, t: float, x, path: SamplePath,
         lattice: ScanLattice, jet: Optional[Jet] = None, use_f: bool = False):
    """Remainders over a lattice; returns ``(delta, h, R, scale)``."""
    lattice.validate(t, path)
    delta, h = lattice.points()
    R = remainder(field, suite, t, x, delta, h, path, jet, use_f)
    return delta, h, R, delta + np.sum(h * h, axis=-1)


def order_estimate(field: RandomField, suite: CoefficientSuite, t: float, x, path: SamplePath,
                   lattice: ScanLattice, jet: Optional[Jet] = None, min_steps: int = 4) -> OrderFit:
    """Least-squares slope of ``log|R|`` against ``log(delta + |h|^2)``.

    Points with ``|R| <= 1e-13`` count as exact and are left out of the fit.
    """
    lattice.validate(t, path, min_steps=min_steps)
    delta, h, R, scale = scan(field, suite, t, x, path, lattice, jet)
    keep = np.abs(R) > ZERO_REMAINDER
    n = int(np.count_nonzero(keep))
    if n < 4:
        raise InsufficientDataError(f"only {n} lattice points have a nonzero remainder")
    slope, intercept = np.polyfit(np.log(scale[keep]), np.log(np.abs(R[keep])), 1)
    return OrderFit(float(slope), float(intercept), n, delta, np.linalg.norm(h, axis=-1), R, scale)
