"""Exception hierarchy shared by every mmoe module.

The CLI maps these onto exit codes: configuration problems exit 1, data
validation problems exit 2 and routing failures in fail-fast mode exit 3.
"""


class MmoeError(Exception):
    """Base class for all errors raised by this package."""


class DataValidationError(MmoeError, ValueError):
    """Input data violates a structural or numeric invariant."""


class DimensionError(DataValidationError):
    """Label distributions of incompatible length were combined."""


class NumericError(DataValidationError):
    """A non-finite or otherwise unusable number was encountered."""


class DatasetParseError(DataValidationError):
    """A dataset line could not be parsed."""

    def __init__(self, message, *, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None and line is not None:
            where = f"{source}:{line}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class DuplicateIdError(DataValidationError):
    """Two records in one dataset share an id."""


class ConfigError(MmoeError):
    """A routing or run configuration is incomplete or malformed."""


class GenerationError(MmoeError):
    """A planted-category spec cannot be realised."""


class EvaluationError(DataValidationError):
    """Predictions, records and partition do not line up."""


class RoutingError(MmoeError):
    """Dispatching a datapoint to its expert failed."""

    def __init__(self, message, *, record_id=None, category=None, attempts=0):
        self.record_id = record_id
        self.category = category
        self.attempts = attempts
        super().__init__(message)


class ProtocolError(RoutingError):
    """An expert answered with a body that does not follow the wire protocol."""

    def __init__(self, message, *, raw="", **kwargs):
        self.raw = raw
        super().__init__(message, **kwargs)
