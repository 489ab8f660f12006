"""Exception hierarchy.

``DataError`` and ``NumericalError`` are the two families the CLI maps to
distinct exit codes.
"""


class StvoEsnError(Exception):
    pass


class DataError(StvoEsnError):
    pass


class NumericalError(StvoEsnError):
    pass


class DimensionMismatch(StvoEsnError, ValueError):
    pass


class DomainError(NumericalError):
    """The propagator bracket became non-positive, or n <= 0.

    ``index`` locates the offending sample: an int for 1-D signals, an
    ``(image, slot)`` tuple for batched signals.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SubcriticalError(NumericalError):
    def __init__(self, message, j=None):
        super().__init__(message)
        self.j = j


class NumericalFailure(NumericalError):
    pass


class DegenerateData(DataError):
    pass


class DegenerateTargets(DataError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CountMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class EmptyClass(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class EmptyGrid(StvoEsnError, ValueError):
    pass
