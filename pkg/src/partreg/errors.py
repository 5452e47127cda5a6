"""Exception hierarchy shared by all pipeline stages."""


class PartregError(Exception):
    """Base class; stage drivers catch this to drop a bad candidate."""


class InvalidImage(PartregError):
    """Image fails basic validity (size, finiteness)."""


class DegenerateFit(PartregError):
    """Least-squares system is rank deficient (collinear or constant data)."""


class NonPositiveBias(PartregError):
    """Fitted bias surface is not strictly positive over the domain."""


class DegenerateCurve(PartregError):
    """Curve has (near) zero length or too few points."""


class DegenerateDual(PartregError):
    """No valid dual points could be computed for a curve."""


class FitFailed(PartregError):
    """Ellipse fit produced no admissible solution."""


class NoBitangents(PartregError):
    """Two ellipses admit no real, finite mutual tangent line."""


class SelectionFailed(PartregError):
    """No candidate bitangent carries the label the local geometry demands."""


class StraightEdge(PartregError):
    """Contact neighbourhood is too straight to support an ellipse fit."""


class NoFrame(PartregError):
    """No convex four-point frame exists for a bitangent."""


class DegenerateFrame(PartregError):
    """Three of the four frame points are collinear."""


class NearInfinityPoint(PartregError):
    """Curve portion crosses the vanishing line of its frame homography."""


class EmptyCurve(PartregError):
    """Curve comparison received an empty vertex list."""


class DegenerateCorrespondences(PartregError):
    """Source points of an affine estimation are collinear."""


class ConsensusFailed(PartregError):
    """RANSAC could not assemble a large enough consistent match set."""
