"""Exception hierarchy shared across the package."""


class KernelSeerError(Exception):
    """Base class for all package errors."""


class DimensionError(KernelSeerError, ValueError):
    pass


class EmptyInputError(KernelSeerError, ValueError):
    pass


class InputTooShortError(KernelSeerError, ValueError):
    pass


class ParameterError(KernelSeerError, ValueError):
    pass


class StateError(KernelSeerError, RuntimeError):
    pass


class TokenIndexError(KernelSeerError, IndexError):
    pass


class ValidationError(KernelSeerError, ValueError):
    """A value is not legal for the named field or parameter."""

    def __init__(self, message: str, field: str | None = None, value=None):
        super().__init__(message)
        self.field = field
        self.value = value


class OutOfVocabularyError(ValidationError):
    """An input descriptor value was never seen when the vocabulary was built."""

    def __init__(self, field: str, value, known: list):
        self.known = list(known)
        near = nearest_values(value, self.known)
        super().__init__(
            f"value {value} for field '{field}' is not in the vocabulary; "
            f"nearest known values: {near}",
            field=field,
            value=value,
        )
        self.nearest = near


class SequenceLengthError(KernelSeerError, ValueError):
    pass


class SchemaError(KernelSeerError, ValueError):
    pass


class ArityError(SchemaError):
    """A full-sequence check received a partial parameter map."""


class ParseError(KernelSeerError, ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if column is not None:
                loc += f", column {column}"
            loc += ": "
        super().__init__(loc + message)
        self.line = line
        self.column = column


class CheckpointError(KernelSeerError, ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class PayloadLengthError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class IncompatibleError(KernelSeerError, ValueError):
    """Checkpoint, dataset and kernel spec disagree."""


class SearchExhaustedError(KernelSeerError, RuntimeError):
    """Constrained search eliminated every candidate."""

    def __init__(self, step: int, predicate: str):
        super().__init__(
            f"all candidates eliminated at step {step}; last rejecting predicate: {predicate}"
        )
        self.step = step
        self.predicate = predicate


def nearest_values(value, known: list, count: int = 2) -> list:
    try:
        return sorted(known, key=lambda v: (abs(v - value), v))[:count]
    except TypeError:
        return list(known)[:count]
