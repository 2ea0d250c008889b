"""Exception types shared across the package."""


class WorklifeError(Exception):
    """Base class for all errors raised by this package.

    The ``kind`` attribute is a short machine-readable tag used by the CLI
    to format single-line error output.
    """

    kind = "error"

    def __init__(self, message):
        super().__init__(message)
        self.message = message


class PanelFormatError(WorklifeError):
    """Input file violates the panel or deflator schema."""

    kind = "panel-format"


class ValidationError(WorklifeError):
    """An argument or configuration value is invalid."""

    kind = "validation"


class ConvergenceError(WorklifeError):
    """An iterative solver did not converge within its iteration budget."""

    kind = "convergence"

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = residual_history or []


class MissingInputError(WorklifeError):
    """A required upstream output file is absent."""

    kind = "missing-input"
