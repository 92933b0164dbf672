"""Exception types shared across the package.

Each class maps to one CLI exit code so callers can tell configuration
mistakes apart from I/O problems, training divergence, and the structural
limit of fixed-width classifier policies.
"""


class ValidationError(ValueError):
    """A parameter, config field, or input fails its precondition."""


class DatasetFormatError(ValueError):
    """A dataset file is malformed; message names the failing record."""


class DivergenceError(RuntimeError):
    """Training produced non-finite loss or gradients."""


class ActionSpaceSizeError(RuntimeError):
    """A fixed-width classifier policy was asked to act on more actions
    than its output layer has. The model must be retrained with a wider
    head; there is no way to evaluate it as-is."""
