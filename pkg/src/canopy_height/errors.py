"""Exception hierarchy shared by every pipeline stage."""


class CanopyError(Exception):
    """Base class for all pipeline errors (mapped to CLI exit code 1)."""


class ParameterError(CanopyError, ValueError):
    pass


class ParseError(CanopyError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedFormatError(CanopyError):
    pass


class EmptyCloudError(CanopyError):
    pass


class DegenerateInputError(CanopyError):
    pass


class AlignmentError(CanopyError):
    pass


class CorruptFileError(CanopyError):
    pass


class ShapeError(CanopyError, ValueError):
    pass


class IncompatibleCheckpointError(CanopyError):
    pass


class ValidationError(CanopyError):
    pass


class DivergedTrainingError(CanopyError):
    def __init__(self, epoch: int, value: float):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: loss={value!r}")


class EmptyInputError(CanopyError):
    pass
