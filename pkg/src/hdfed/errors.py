"""Exception types raised across the package.

Each class carries an ``exit_code`` used by the command-line driver.
"""

from __future__ import annotations


class HDFedError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(HDFedError, ValueError):
    """Invalid parameters or configuration."""

    exit_code = 2
    kind = "config"


class DataError(HDFedError, ValueError):
    """Samples that violate a data contract (bad label, wrong width)."""

    exit_code = 3
    kind = "data"


class LoadError(DataError):
    """A dataset file could not be parsed."""

    kind = "load"


class PartitionError(DataError):
    kind = "partition"


class ProtocolError(HDFedError, RuntimeError):
    """Ring-order or ledger-order violation."""

    exit_code = 4
    kind = "protocol"


class InvariantError(HDFedError, RuntimeError):
    """An internal invariant failed; the run must abort."""

    exit_code = 4
    kind = "invariant"
