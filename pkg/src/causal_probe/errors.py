"""Exception hierarchy.

Every error carries a stable ``error_id`` (the class name) so the command
line can print machine-parsable messages. ``ValidationError`` subclasses map
to exit code 2, ``NumericalError`` subclasses to exit code 3.
"""


class CausalProbeError(Exception):
    exit_code = 3

    @property
    def error_id(self):
        return type(self).__name__


class ValidationError(CausalProbeError, ValueError):
    exit_code = 2


class NumericalError(CausalProbeError, ArithmeticError):
    exit_code = 3


# data ingestion
class MissingColumn(ValidationError):
    def __init__(self, name):
        super().__init__(f"missing column {name!r}")
        self.name = name


class NonNumericCell(ValidationError):
    def __init__(self, row, col, value=None):
        super().__init__(f"non-numeric cell at row {row}, column {col!r}: {value!r}")
        self.row = row
        self.col = col


class DuplicateHeader(ValidationError):
    pass


class EmptyTable(ValidationError):
    pass


class ZeroVarianceColumn(NumericalError):
    def __init__(self, name):
        super().__init__(f"column {name!r} has zero variance")
        self.name = name


class SampleTooSmall(ValidationError):
    pass


class SampleTooLarge(ValidationError):
    pass


class DegenerateSample(NumericalError):
    pass


# graphs
class UnknownNode(ValidationError):
    pass


class GraphError(ValidationError):
    pass


class InconsistentSepset(CausalProbeError):
    pass


# CI tests
class TooFewRows(ValidationError):
    pass


class SingularCovariance(NumericalError):
    pass


class DegenerateKernel(NumericalError):
    pass


# ensemble
class EmptySample(ValidationError):
    pass


# SEM
class ModelSpecError(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class UnidentifiedModel(NumericalError):
    pass


class NonInvertibleStructure(NumericalError):
    pass


class NonPositiveDefiniteS(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


# synthetic benchmarks
class GenerationFailed(NumericalError):
    pass


class NodeMismatch(ValidationError):
    pass


class ContradictoryOrientation(UserWarning):
    """A rule asked for an arrowhead where a tail is already set (or vice versa)."""


class ZeroDf(UserWarning):
    """Fit indices other than CFI are undefined for a model with zero degrees of freedom."""
