"""Exception hierarchy shared by every mlrate module."""


class MlrateError(Exception):
    """Base class for all errors raised by mlrate."""


class InvalidArgumentError(MlrateError, ValueError):
    """An argument violates an operation's precondition."""


class SchemaError(MlrateError):
    """A required column or field is missing from an input."""


class ParseError(MlrateError):
    """An input cell could not be parsed as a finite number."""


class DataValidationError(MlrateError):
    """Input data parsed correctly but breaks a dataset invariant."""


class ModelFormatError(MlrateError):
    """A serialized model file is malformed or has an unsupported version."""


class LeakageError(MlrateError):
    """A workflow would let in-experiment outcomes leak into the adjustment covariate."""


class StudyFailedError(MlrateError):
    """Too many Monte Carlo repetitions failed; the attached result is partial."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
