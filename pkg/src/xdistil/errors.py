"""Exception hierarchy shared across the package.

Contract violations (bad shapes, out-of-range arguments, empty datasets)
and configuration/IO failures are kept on separate branches because the
CLI maps them to different exit codes.
"""


class XdistilError(Exception):
    """Base class for all package errors."""


class ContractError(XdistilError):
    """A documented precondition was violated by the caller."""


class ShapeError(ContractError):
    """Tensor shapes incompatible with the requested operation."""


class NumericError(ContractError):
    """Non-finite input or a numerical routine failed to converge."""


class DataError(ContractError):
    """Dataset is empty or does not match what the operation expects."""


class ConfigError(XdistilError):
    """Run configuration is malformed or self-contradictory."""


class CheckpointError(XdistilError):
    """Checkpoint file is corrupt, truncated, or inconsistent."""
