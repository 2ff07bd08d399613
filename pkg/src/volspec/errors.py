"""Exception hierarchy.

``InputError`` subclasses describe bad input (CLI exit 1); ``NumericalError``
subclasses describe a computation that could not be completed to the
requested tolerance (CLI exit 2).
"""


class VolspecError(Exception):
    pass


class InputError(VolspecError, ValueError):
    pass


class NumericalError(VolspecError, ArithmeticError):
    pass


class SpectrumError(InputError):
    """Invalid spectrum (zero, repeated or non-finite points)."""


class ParameterError(InputError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class RangeError(InputError):
    pass


class MembershipError(InputError):
    pass


class PatternError(InputError):
    pass


class ValidityError(InputError):
    pass


class RefusalError(InputError):
    """Synthesis refused because the spectrum is not removable."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InsufficientDataError(InputError):
    pass


class TailDivergenceError(NumericalError):
    pass


class ProductOverflowError(NumericalError, OverflowError):
    pass


class ProximityError(NumericalError):
    pass


class DegeneracyError(NumericalError):
    pass


class ConditioningError(NumericalError):
    pass


class ExtrapolationError(NumericalError):
    pass


class ContourError(NumericalError):
    def __init__(self, message, box=None):
        super().__init__(message)
        self.box = box


class ResolutionError(NumericalError):
    def __init__(self, message, boxes=()):
        super().__init__(message)
        self.boxes = list(boxes)


class SolverError(NumericalError):
    def __init__(self, message, matrix=None):
        super().__init__(message)
        self.matrix = matrix


class InitializationError(NumericalError):
    pass


class MaterializationError(NumericalError):
    pass


class BracketError(NumericalError):
    def __init__(self, message, samples=()):
        super().__init__(message)
        self.samples = list(samples)


class QuadratureError(NumericalError):
    pass
