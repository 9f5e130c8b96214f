"""Exception hierarchy shared by all modules."""


class PathwiseError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(PathwiseError, ValueError):
    """Invalid dimensions, meshes, off-grid times or out-of-range arguments."""


class ContractError(PathwiseError, ValueError):
    """An input violates a structural contract (missing suite, bad shapes, asymmetric jet)."""


class DomainError(PathwiseError, ValueError):
    """A query falls outside the region where an object is defined."""


class InsufficientDataError(PathwiseError):
    """Too few usable points for a regression or estimate."""


class StabilityError(PathwiseError, ArithmeticError):
    """A numerical scheme lost stability (blow-up, CFL violation, non-monotone flow)."""


class ParabolicityError(PathwiseError, ArithmeticError):
    """A diffusion coefficient that must be nonnegative was found negative."""


class ConfigError(PathwiseError, ValueError):
    """Malformed or inconsistent experiment configuration."""
