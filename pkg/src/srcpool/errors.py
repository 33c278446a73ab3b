"""Exception hierarchy.

Every error raised by the library derives from :class:`SrcPoolError`, so
callers can catch the whole family at once. Input-validation errors also
derive from :class:`ValueError`.
"""


class SrcPoolError(Exception):
    """Base class for all library errors."""


# graph construction and batching
class IndexOutOfRange(SrcPoolError, ValueError):
    pass


class NonFiniteWeight(SrcPoolError, ValueError):
    pass


class FeatureShapeMismatch(SrcPoolError, ValueError):
    pass


class FeatureWidthMismatch(SrcPoolError, ValueError):
    pass


class AsymmetricInput(SrcPoolError, ValueError):
    pass


class UnknownReduce(SrcPoolError, ValueError):
    pass


class EmptyGraphInBatch(SrcPoolError, ValueError):
    pass


class GraphFormatError(SrcPoolError, ValueError):
    """A graph text file could not be parsed."""


class GraphTooLarge(SrcPoolError, ValueError):
    """The graph exceeds a size limit of a dense or quadratic routine."""


# selection
class NonFinite(SrcPoolError, ValueError):
    pass


class NonFiniteScore(NonFinite):
    pass


class UnreachableNode(SrcPoolError):
    pass


class NoConvergence(SrcPoolError):
    """An iterative routine hit its iteration budget (reported as ``N/C``)."""


class PowerIterationNoConvergence(NoConvergence):
    pass


# reduce / connect
class EmptyCluster(SrcPoolError, ValueError):
    pass


class SingularEliminationBlock(SrcPoolError):
    pass


class IncompatibleConnector(SrcPoolError, ValueError):
    pass


# objectives
class ObjectiveError(SrcPoolError, ValueError):
    pass


class ZeroDegreeTrace(ObjectiveError):
    pass


class ZeroEdges(ObjectiveError):
    pass


# cache file
class CacheError(SrcPoolError):
    pass


class StaleCache(CacheError):
    pass


class CorruptRecord(CacheError):
    pass


class MissingRecord(CacheError, KeyError):
    pass


# metrics / cli
class LengthMismatch(SrcPoolError, ValueError):
    pass


class InvalidProbability(SrcPoolError, ValueError):
    pass


class MissingLabels(SrcPoolError):
    pass
