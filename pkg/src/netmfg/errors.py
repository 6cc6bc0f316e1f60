"""Exception types shared across the package."""


class NetmfgError(Exception):
    """Base class for all errors raised by netmfg."""


class DomainError(NetmfgError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigurationError(NetmfgError, ValueError):
    """Grid, solver or scenario parameters are inconsistent."""


class InfeasibleError(NetmfgError):
    """A constrained minimisation has an empty feasible set."""


class SolverError(NetmfgError, RuntimeError):
    """A numerical procedure failed or hit a configured bound."""
