"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all avexpr errors."""


class FormatError(ToolkitError):
    """A binary file does not start with the expected magic/version."""


class CorruptionError(ToolkitError):
    """A file parses structurally but its payload is inconsistent."""


class ValidationError(ToolkitError):
    """An argument or record violates a documented invariant."""


class ShapeError(ToolkitError):
    """Array dimensions do not conform."""


class TrainingError(ToolkitError):
    """Training aborted (non-finite loss or unusable dataset)."""
