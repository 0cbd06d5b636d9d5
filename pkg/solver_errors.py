#!/usr/bin/env python3
"""
Exceptions raised by the stratahj solvers.

Library modules raise these; only the command line layer catches them and
turns them into a diagnostic plus a nonzero exit status.
"""

from typing import Optional


class StrataError(Exception):
    """Base class for every solver error"""


class DomainError(StrataError):
    """Invalid arguments, e.g. an empty facet family"""


class CoercivityError(StrataError):
    """No bracket found for a coercive 1-D minimization or level set"""


class ClassificationError(StrataError):
    """Profile is not quasiconvex in the normal slot"""


class NoSolutionError(StrataError):
    """Requested level lies below the infimum of a monotone profile"""


class DegeneratePairError(StrataError):
    """Two velocities coincide so no interface weights exist"""


class NotStraddlingError(StrataError):
    """Two nonzero velocities of the same sign cannot be balanced"""


class AdmissibilityError(StrataError):
    """A policy returned a control outside the admissible set"""


class SpanError(StrataError):
    """Trajectory does not cover the requested horizon"""


class ConfigurationError(StrataError):
    """Grid, time step or scheme combination is not usable"""


class GridMismatchError(StrataError):
    """Two grid functions live on different grids"""


class IterationError(StrataError):
    """An iterative solver ran out of iterations"""


class UnknownPresetError(StrataError):
    """Preset name not in the catalog"""


class ConfigError(ConfigurationError):
    """Run document failed validation

    Args:
        field: Dotted path of the offending field (e.g. ``grid.dx``)
        message: Human readable reason
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def require(condition: bool, field: str, message: str,
            error: Optional[type] = None) -> None:
    """Raise ConfigError (or ``error``) unless ``condition`` holds"""
    if condition:
        return
    if error is None:
        raise ConfigError(field, message)
    raise error(f"{field}: {message}")
