"""Exception hierarchy. Every error raised on purpose by the package derives from
:class:`ShapAuditError`, and most also from :class:`ValueError` so callers that
only care about bad input can catch the builtin.
"""


class ShapAuditError(Exception):
    pass


class SchemaError(ShapAuditError, ValueError):
    pass


class ParseError(ShapAuditError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigurationError(ShapAuditError, ValueError):
    pass


class StratificationError(ShapAuditError, ValueError):
    pass


class ResamplingError(ShapAuditError, ValueError):
    pass


class ShapeError(ShapAuditError, ValueError):
    pass


class AlignmentError(ShapAuditError, ValueError):
    pass


class ValidationError(ShapAuditError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DivergenceError(ShapAuditError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class TractabilityError(ShapAuditError, ValueError):
    pass


class SolverError(ShapAuditError, ArithmeticError):
    pass


class UndefinedMetricError(ShapAuditError, ValueError):
    pass


class DegenerateInputError(ShapAuditError, ValueError):
    pass


class CalibrationError(ShapAuditError, ValueError):
    pass


class InsufficientDataError(ShapAuditError, ValueError):
    pass


class DependencyError(ShapAuditError, RuntimeError):
    pass


class ResampleError(ShapAuditError, RuntimeError):
    """A statistic failed on one bootstrap resample or one stability subsample."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
