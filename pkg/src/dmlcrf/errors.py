"""Exception hierarchy. Each error carries the CLI exit code it maps to."""


class DmlCrfError(Exception):
    exit_code = 2


class FormatError(DmlCrfError):
    """File does not start with the expected magic or header."""


class LengthError(DmlCrfError):
    """Payload shorter or longer than the header announces."""


class DataError(DmlCrfError):
    """Non-finite or otherwise invalid values."""


class ShapeError(DmlCrfError, ValueError):
    pass


class InsufficientDataError(DmlCrfError):
    pass


class StateError(DmlCrfError):
    pass


class EmptyReportError(DmlCrfError):
    pass


class GuardError(DmlCrfError):
    """Instance too large for a brute-force routine."""


class DivergenceError(DmlCrfError):
    exit_code = 3

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")
