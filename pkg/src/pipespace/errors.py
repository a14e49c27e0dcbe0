"""Exception hierarchy.

Every error raised by the library derives from :class:`PipespaceError`.  The
two top-level families map onto CLI exit codes: :class:`ValidationError` (2)
for bad inputs or violated invariants, :class:`DataIOError` (3) for files
that are missing, unreadable or not in a supported format.
"""


class PipespaceError(Exception):
    exit_code = 4


class ValidationError(PipespaceError, ValueError):
    exit_code = 2


class DataIOError(PipespaceError, OSError):
    exit_code = 3


# volumes / dataset
class UnsupportedFormat(DataIOError):
    pass


class TruncatedFile(DataIOError):
    pass


class NonFiniteData(ValidationError):
    pass


class BadPipelineId(ValidationError):
    pass


class MalformedManifest(ValidationError):
    pass


class NonRectangularDataset(ValidationError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        shown = ", ".join("(%s, %s, %s)" % t for t in self.missing[:10])
        more = "" if len(self.missing) <= 10 else " and %d more" % (len(self.missing) - 10)
        super().__init__("dataset is not rectangular; missing %s%s" % (shown, more))


# grids and masks
class SingularAffine(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class EmptyMaskList(ValidationError):
    pass


class EmptyIntersection(ValidationError):
    pass


class MaskMismatch(ValidationError):
    pass


# similarity
class ZeroVariance(ValidationError):
    pass


class LengthTooSmall(ValidationError):
    pass


class OrderMismatch(ValidationError):
    pass


class EmptyList(ValidationError):
    pass


# graphs and partitions
class NegativeWeight(ValidationError):
    pass


class AllZeroGraph(ValidationError):
    pass


class UncoveredNode(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class NodeSetMismatch(ValidationError):
    pass


# features
class NonFinite(ValidationError):
    pass


class BadP(ValidationError):
    pass


class BadQ(ValidationError):
    pass


class BadAtlasRange(ValidationError):
    pass
