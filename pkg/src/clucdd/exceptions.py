class ClucddError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ClucddError, ValueError):
    """Input data violates a documented invariant."""


class ConfigError(ClucddError, ValueError):
    """Invalid configuration or hyperparameter combination."""


class FormatError(ClucddError, ValueError):
    """A file does not follow its declared on-disk format."""


class ParseError(FormatError):
    """A line-delimited record could not be decoded."""

    def __init__(self, path, lineno, reason):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}")


class TrainingError(ClucddError, RuntimeError):
    """Numerical failure during optimisation."""
