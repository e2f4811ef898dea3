"""Exception types shared across the package."""


class ReflectmapError(Exception):
    """Base class for all package errors."""


class ParseError(ReflectmapError):
    """A file could not be parsed (bad header, malformed line or field)."""


class ShapeError(ReflectmapError):
    """A record does not fit the declared grid shape or violates layout rules."""


class DegenerateInput(ReflectmapError):
    """Geometric input is degenerate (e.g. all points collinear)."""


class InsufficientPoints(ReflectmapError):
    """Too few points for the requested fit."""


class DegenerateNormals(ReflectmapError):
    """Normal correspondences do not constrain the rotation (rank < 2)."""


class RankDeficient(ReflectmapError):
    """Plane normals span fewer than 3 dimensions; translation under-determined."""


class NoValidModel(ReflectmapError):
    """No 3-combination of matches spans 3D; RANSAC model search failed."""


class SingularNormalEquations(ReflectmapError):
    """Gauss-Newton normal equations singular even after damping."""


class MissingPose(ReflectmapError):
    """A scan frame has no corresponding trajectory entry."""
