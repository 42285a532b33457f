"""Exception hierarchy shared by all modules."""


class MFBosonsError(Exception):
    """Base class for every error raised by this package."""


class ContractError(MFBosonsError, ValueError):
    """An input violates a documented precondition (shape, norm, sector)."""


class CapacityError(MFBosonsError):
    """A requested basis or explicit matrix is larger than the configured cap."""


class DomainError(MFBosonsError, ValueError):
    """A bound was evaluated outside its domain, e.g. beta >= beta_c(t)."""


class IntegrationAccuracyError(MFBosonsError):
    """The Hartree integrator drifted beyond its accuracy budget."""


class ResolutionError(MFBosonsError):
    """A finite-difference grid is too coarse for the requested budget."""


class RefinementError(MFBosonsError):
    """A quadrature estimate moved too much under grid refinement."""


class ConfigError(MFBosonsError):
    """A scenario file failed to parse or validate."""
