"""Exception types shared across the package, mapped to CLI exit codes."""


class DataError(Exception):
    """Invalid dataset or bundle contents (CLI exit code 2).

    ``file`` and ``line`` are prepended to the message when given so that
    loader errors always point at the offending location.
    """

    def __init__(self, message, *, file=None, line=None):
        self.file = file
        self.line = line
        if file is not None:
            loc = str(file) if line is None else f"{file}:{line}"
            message = f"{loc}: {message}"
        super().__init__(message)


class NumericalAbort(Exception):
    """Non-finite loss or gradients during optimization (CLI exit code 3)."""
