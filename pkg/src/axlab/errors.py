"""Exception types shared across the library.

Each class corresponds to one documented failure mode of the public API;
callers that need to distinguish failures catch these instead of parsing
messages.
"""


class AxlabError(Exception):
    """Base class for all library-specific errors."""


class ShapeError(AxlabError, ValueError):
    """Operands have incompatible shapes; the message names both."""


class DegenerateRowError(AxlabError, ValueError):
    """A softmax row has no unmasked entries left to normalize over."""


class UntrackedValueError(AxlabError, ValueError):
    """backward() was asked to differentiate a value no tape recorded."""


class SequenceLengthError(AxlabError, ValueError):
    """Input sequence exceeds the model's configured maximum length."""


class DivergenceError(AxlabError, RuntimeError):
    """Training or iteration produced a non-finite value."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite value at step {step}")


class SolverError(AxlabError, RuntimeError):
    """A local node solve failed (singular normal matrix or bad data)."""


class OracleError(AxlabError, RuntimeError):
    """The centralized KKT solve failed (singular or infeasible system)."""


class ConfigError(AxlabError, ValueError):
    """Experiment configuration text is malformed.

    ``line`` is the 1-based line number when the error is attributable to
    a specific line, else 0.
    """

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class ProblemFormatError(AxlabError, ValueError):
    """A graph-problem description file is malformed."""


class DataFormatError(AxlabError, ValueError):
    """A binary dataset file has the wrong size or structure."""


class CorruptRecordError(DataFormatError):
    """A dataset record is structurally valid but has illegal content."""

    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"record {index}: {message}")
