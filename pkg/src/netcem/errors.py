"""Exception hierarchy shared across the package.

Every error raised on a user-facing path derives from NetcemError so the
CLI can map failures to exit codes without string matching.
"""

from __future__ import annotations


class NetcemError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(NetcemError, ValueError):
    """A caller supplied an argument outside its documented domain."""


class NetworkValidationError(NetcemError, ValueError):
    """Network data violates a structural invariant (weights, masses, edges)."""


class PartitionError(NetcemError, ValueError):
    """Partition data is malformed: bad coverage, bad ids, disconnected part."""


class WellPosednessError(NetcemError):
    """The assembled system is singular: no mass and no constrained nodes."""


class NumericalError(NetcemError):
    """A numerical routine failed to meet its accuracy contract."""


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget.

    Carries the trailing residual history so callers can report
    stagnation versus slow decay.
    """

    def __init__(self, message: str, residuals: list[float] | None = None):
        super().__init__(message)
        self.residuals = residuals or []


class CoarseRankError(NumericalError):
    """Coarse stiffness factorization hit a non-positive pivot.

    ``label`` names the basis column (subgraph id, eigenindex) whose pivot
    failed, which usually means duplicated or degenerate basis columns.
    """

    def __init__(self, message: str, label: tuple[int, int] | None = None):
        super().__init__(message)
        self.label = label


class BundleFormatError(NetcemError, ValueError):
    """An on-disk network bundle is missing files or fails validation."""


class ConfigError(NetcemError, ValueError):
    """A run configuration file or override is malformed."""
