"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`RepFactorError`.
The two broad families map onto CLI exit codes: :class:`DataError` (2) and
:class:`NumericalError` (3).
"""


class RepFactorError(Exception):
    exit_code = 2


class DataError(RepFactorError, ValueError):
    exit_code = 2


class NumericalError(RepFactorError, ArithmeticError):
    exit_code = 3


# io
class MissingFile(DataError, FileNotFoundError):
    pass


class BadMagic(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class IoFailure(DataError, OSError):
    pass


class ParseError(DataError):
    pass


class DanglingPath(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyCorpus(DataError):
    pass


# covariance
class RowCountMismatch(DataError):
    pass


class DegenerateSample(DataError):
    pass


class MissingEntry(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# parafac2
class RankTooLarge(DataError):
    pass


class EmptySliceList(DataError):
    pass


class ZeroInput(NumericalError):
    pass


class NumericalBreakdown(NumericalError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class ShapeMismatch(DataError):
    pass


# signatures
class DuplicateCell(DataError):
    pass


class EmptyVector(DataError):
    pass


# stats
class LengthMismatch(DataError):
    pass


class ConstantInput(DataError):
    pass


class TooFewPoints(DataError):
    pass


class ZeroVariance(DataError):
    pass


class InvalidP(DataError):
    pass


class InvalidQ(DataError):
    pass


class NonPositiveReference(DataError):
    pass


class MissingProfile(DataError):
    pass


# phylo
class ZeroVector(DataError):
    pass


class UnknownLabel(DataError):
    pass
