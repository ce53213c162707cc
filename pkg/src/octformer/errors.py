"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/config
problems exit 2, numeric or training failures exit 3.
"""


class DataError(ValueError):
    """Malformed or empty input data (files, point clouds)."""


class ConfigError(ValueError):
    """Invalid configuration value or an unsatisfiable request."""


class ShapeError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """Non-finite values or degenerate numeric conditions."""


class TrainingError(RuntimeError):
    """Training diverged or cannot make progress."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
