"""Exception types shared across the package."""


class TopoforgeError(Exception):
    """Base class for all package errors."""


class ParameterError(TopoforgeError):
    """Invalid parameter value (out of range, degenerate range, ...)."""


class ShapeError(TopoforgeError):
    """Mismatched array dimensions."""


class SingularSystemError(TopoforgeError):
    """The FE system cannot be solved (names the cause)."""


class NumericError(TopoforgeError):
    """Numerical failure: non-bracketing bisection, non-finite values."""


class StateError(TopoforgeError):
    """Operation called out of order (e.g. backward before forward)."""


class ConfigError(TopoforgeError):
    """Inconsistent network/pipeline configuration."""


class DatasetError(TopoforgeError):
    """Corrupt or missing dataset artifacts."""


class CheckpointError(TopoforgeError):
    """Checkpoint file cannot be read or does not match the config."""
