"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Axis/shape bookkeeping violated (mismatched bond, bad axis partition)."""


class TopologyError(ValueError):
    """Graph or tree structure is invalid (not a power of two, cycles, ...)."""


class StateError(RuntimeError):
    """Operation requires model state that is absent (e.g. no canonical center)."""


class ParseError(ValueError):
    """Malformed token in a text dataset; carries line/column."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class FormatError(ValueError):
    """Structurally inconsistent input file (e.g. ragged rows)."""


class DegenerateDistributionError(RuntimeError):
    """A conditional distribution has zero total mass."""


class DegenerateSampleError(RuntimeError):
    """A training sample has exactly zero amplitude under the model."""

    def __init__(self, sample_index):
        super().__init__(f"training sample {sample_index} has zero amplitude")
        self.sample_index = sample_index


class NumericalError(RuntimeError):
    """Non-finite values appeared where the algorithm requires finite ones."""
