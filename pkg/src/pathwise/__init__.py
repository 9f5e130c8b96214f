"""Pathwise stochastic calculus for fully nonlinear SPDEs on frozen Brownian paths."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.1.0"

from . import characteristics, coefficients, fields, paths, refsolver, rng, taylor, viscosity  # noqa: E402,F401
