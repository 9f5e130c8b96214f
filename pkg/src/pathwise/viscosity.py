"""Jet membership tests and pointwise sub/supersolution verdicts.

A jet ``(a, z, gamma)`` lies in the super-jet set ``J+`` of ``u`` at ``(t, x)``
when the expansion dominates ``u`` on the scan lattice up to the allowed
order, and in the sub-jet set ``J-`` when it is dominated.  Subsolutions are
tested against super-jets (``a - f <= 0``), supersolutions against sub-jets
(``a - f >= 0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .coefficients import CoefficientSuite
from .errors import ParameterError
from .fields import RandomField, as_points
from .paths import SamplePath
from .taylor import Jet, ScanLattice, canonical_jet, scan

JET_PLUS = "J2+"
JET_MINUS = "J2-"
SIDES = {"sub": JET_PLUS, "super": JET_MINUS}

DEFAULT_ALPHA = 0.25
DEFAULT_TAU = 0.05

__all__ = ["JET_PLUS", "JET_MINUS", "JetVerdict", "PointVerdict", "ConsistencyReport", "canonical_jet",
           "jet_membership", "check_point", "consistency_experiment", "default_lattice"]


def default_lattice() -> ScanLattice:
    return ScanLattice.dyadic(12, 8)


@dataclass(frozen=True)
class JetVerdict:
    jet: Jet
    side: str
    ratio_max: float
    member: bool
    alpha: float
    lattice: ScanLattice = field(repr=False)


def jet_membership(u: RandomField, suite: CoefficientSuite, t: float, x, path: SamplePath, jet: Jet,
                   alpha: float = DEFAULT_ALPHA, lattice: Optional[ScanLattice] = None,
                   threshold: float = DEFAULT_TAU, side: str = JET_PLUS) -> JetVerdict:
    """Largest normalised one-sided excess of ``u`` over the jet's expansion.

    For ``J2+`` the excess is ``u(t - delta, x + h) - u(t, x) - T``; for
    ``J2-`` its negative.  Division is by ``(delta + |h|^2)^(1 + alpha)``.
    """
    if side not in (JET_PLUS, JET_MINUS):
        raise ParameterError(f"unknown jet side {side!r}")
    if alpha < 0:
        raise ParameterError("alpha must be nonnegative")
    lattice = lattice or default_lattice()
    if jet.y is None:
        jet = jet.with_value(float(u(t, x, path)))
    _, _, R, scale = scan(u, suite, t, x, path, lattice, jet)
    ratio = R / scale ** (1.0 + alpha)
    if side == JET_MINUS:
        ratio = -ratio
    rmax = float(np.max(ratio))
    return JetVerdict(jet, side, rmax, rmax <= threshold, float(alpha), lattice)


@dataclass(frozen=True)
class PointVerdict:
    side: str
    passed: bool
    a_minus_f: tuple
    verdicts: tuple
    skipped: int

    @property
    def worst(self) -> float:
        """The member jet value of ``a - f`` closest to failing (nan if none)."""
        if not self.a_minus_f:
            return float("nan")
        vals = np.array(self.a_minus_f)
        return float(vals.max() if self.side == "sub" else vals.min())


def check_point(u: RandomField, suite: CoefficientSuite, t: float, x, path: SamplePath, jets: Iterable[Jet],
                side: str, alpha: float = DEFAULT_ALPHA, tau: float = DEFAULT_TAU, f_tol: float = 1e-9,
                lattice: Optional[ScanLattice] = None) -> PointVerdict:
    """Sub- or supersolution verdict at one point from a finite set of jets.

    Jets failing membership on the matching side are skipped, not failed.
    """
    if side not in SIDES:
        raise ParameterError(f"side must be 'sub' or 'super', got {side!r}")
    y = float(u(t, x, path))
    xs = as_points(x, suite.dprime)
    gaps, verdicts, skipped = [], [], 0
    for jet in jets:
        jet = jet.with_value(y)
        v = jet_membership(u, suite, t, x, path, jet, alpha, lattice, tau, SIDES[side])
        verdicts.append(v)
        if not v.member:
            skipped += 1
            continue
        gaps.append(jet.a - float(suite.f_value(t, xs, path, y, jet.z, jet.gamma)))
    g = np.array(gaps)
    ok = bool(np.all(g <= f_tol)) if side == "sub" else bool(np.all(g >= -f_tol))
    return PointVerdict(side, ok, tuple(gaps), tuple(verdicts), skipped)


@dataclass(frozen=True)
class ConsistencyReport:
    passed: bool
    max_abs_a_minus_f: float
    max_ratio: float
    rows: list = field(repr=False)

    HEADER = ("seed", "t", "x", "side", "a_minus_f", "ratio_max", "member", "pass")


def consistency_experiment(u: RandomField, suite: CoefficientSuite, points: Sequence, paths: Sequence[SamplePath],
                           alpha: float = DEFAULT_ALPHA, tau: float = DEFAULT_TAU, f_tol: float = 1e-9,
                           lattice: Optional[ScanLattice] = None) -> ConsistencyReport:
    """Check the canonical jet of a classical field on both sides at every point and path.

    ``points`` holds ``(t, x)`` pairs, or one list of pairs per path.
    """
    rows, worst_gap, worst_ratio, ok = [], 0.0, -np.inf, True
    per_path = len(points) == len(paths) and len(points) > 0 and isinstance(points[0], (list, tuple)) \
        and len(points[0]) > 0 and isinstance(points[0][0], (list, tuple))
    for i, path in enumerate(paths):
        pts = points[i] if per_path else points
        for t, x in pts:
            jet = canonical_jet(u, t, x, path)
            for side in ("sub", "super"):
                pv = check_point(u, suite, t, x, path, [jet], side, alpha, tau, f_tol, lattice)
                v = pv.verdicts[0]
                gap = jet.a - float(suite.f_value(t, as_points(x, suite.dprime), path, jet.y, jet.z, jet.gamma))
                passed = pv.passed and v.member
                ok &= passed
                worst_gap = max(worst_gap, abs(gap))
                worst_ratio = max(worst_ratio, v.ratio_max)
                rows.append((path.seed, float(t), float(np.ravel(x)[0]), side, gap, v.ratio_max, v.member, passed))
    return ConsistencyReport(ok, worst_gap, float(worst_ratio), rows)
