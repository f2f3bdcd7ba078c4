"""Exception hierarchy.

Exit-code mapping at the CLI boundary: usage errors exit 1, model/data
errors (ModelError and subclasses, CaseParseError, ConfigError) exit 2,
numerical errors exit 3.
"""

from __future__ import annotations


class GridcalError(Exception):
    """Base class for all errors raised by this package."""


class CaseParseError(GridcalError):
    """Malformed case file content."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelError(GridcalError):
    """Structurally invalid network model or inconsistent model inputs."""


class IslandingError(ModelError):
    """Topology splits the energized grid into disconnected components."""

    def __init__(self, components: list[list[int]], message: str | None = None):
        self.components = components
        if message is None:
            parts = ", ".join("{" + ",".join(map(str, c)) + "}" for c in components[:4])
            more = "" if len(components) <= 4 else f" (+{len(components) - 4} more)"
            message = f"topology is disconnected into {len(components)} components: {parts}{more}"
        super().__init__(message)


class BridgeError(ModelError):
    """Requested outage of a bridge branch, which would island the grid."""

    def __init__(self, branch_id: int):
        self.branch_id = branch_id
        super().__init__(f"branch {branch_id} is a bridge; its outage islands the grid")


class ConfigError(GridcalError):
    """Invalid configuration content (unknown keys, bad values)."""


class NumericalError(GridcalError):
    """Singular system, failed factorization, or residual above tolerance."""
