"""Exception hierarchy shared by every cartolab module.

Every error raised on purpose by the toolkit derives from
:class:`CartolabError`, so callers (the CLI in particular) can aggregate
them into a report without catching unrelated failures.
"""


class CartolabError(Exception):
    """Base class for all toolkit errors."""


class RowError(CartolabError):
    """An error tied to one row of an input table.

    Parameters
    ----------
    row : int
        1-based data row number (the header is row 0).
    message : str
        Human readable description.
    """

    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


# -- ingestion ---------------------------------------------------------------
class MissingColumn(CartolabError):
    pass


class BadYear(RowError):
    pass


class BadLatLon(RowError):
    pass


class BadScale(RowError):
    pass


class DuplicateId(CartolabError):
    pass


class BadLabelValue(CartolabError):
    def __init__(self, value, x, y):
        self.value, self.x, self.y = int(value), int(x), int(y)
        super().__init__(f"label {self.value} at (x={self.x}, y={self.y}) is outside 0..5")


class NotGrayscale(CartolabError):
    pass


class BadMagic(CartolabError):
    pass


class CountMismatch(CartolabError):
    pass


class NonFiniteValue(CartolabError):
    pass


class ScoreOutOfRange(RowError):
    pass


class NegativeExtent(RowError):
    pass


class BoxOutOfBounds(RowError):
    pass


class DanglingReference(CartolabError):
    pass


# -- image ops ---------------------------------------------------------------
class CellLargerThanImage(CartolabError):
    pass


class NoForeground(CartolabError):
    pass


class AllZeroWeights(CartolabError):
    pass


# -- clustering --------------------------------------------------------------
class KTooLarge(CartolabError):
    pass


class EmptyCluster(CartolabError):
    pass


class GridTooSmall(CartolabError):
    pass


class SingleCluster(CartolabError):
    pass


# -- semiotics ---------------------------------------------------------------
class EmptyStratum(CartolabError):
    pass


class DimensionMismatch(CartolabError):
    pass


class NoActiveMode(CartolabError):
    pass


class InsufficientData(CartolabError):
    pass


class ZeroMaps(CartolabError):
    pass


class EmptySubset(CartolabError):
    pass


class TooFewGroups(CartolabError):
    pass


# -- composition -------------------------------------------------------------
class NoContent(CartolabError):
    pass


class ZeroVariance(CartolabError):
    pass


class UnknownHypothesis(CartolabError):
    pass


class DegenerateVariance(CartolabError):
    pass


# -- net / chrono ------------------------------------------------------------
class SingletonBatch(CartolabError):
    pass


class InsufficientOverlap(CartolabError):
    pass


class AllTies(CartolabError):
    pass


class EmptySample(CartolabError):
    pass


class RankDeficient(CartolabError):
    pass


class NegativeVarianceClamped(UserWarning):
    """Warning emitted when a cluster-robust covariance needed eigenvalue clamping."""


# -- cli ---------------------------------------------------------------------
class UnknownKey(CartolabError):
    pass


class BadValue(CartolabError):
    pass
