"""Exception hierarchy shared by all clogsim modules."""


class ClogsimError(Exception):
    pass


class ValidationError(ClogsimError, ValueError):
    """Invalid parameters (non-positive radii, asymmetric kernels, unknown keys...)."""


class GeometryError(ClogsimError):
    """A curve leaves the unit cell, self-intersects, or overlaps another curve."""


class OffsetRangeError(GeometryError):
    """Requested offset lies outside the admissible range of the base curve."""


class MeshingError(ClogsimError):
    """Triangulation failed, e.g. because an inclusion touches the cell boundary."""


class SolverError(ClogsimError):
    """Linear solve failed, did not reach the residual tolerance, or produced NaN."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
