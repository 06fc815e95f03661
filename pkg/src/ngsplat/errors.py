"""Exception hierarchy. Each class carries a stable `code` used by the CLI
to produce machine-readable error categories and exit codes."""


class NgsplatError(Exception):
    code = "error"


class InvalidParameterError(NgsplatError):
    code = "invalid-parameter"


class DimensionMismatchError(NgsplatError):
    code = "dimension-mismatch"


class GeometryError(NgsplatError):
    """Degenerate geometry (coplanar/collinear hull input, bad grids)."""

    code = "geometry"


class DatasetError(NgsplatError):
    code = "dataset"


class PlyHeaderError(NgsplatError):
    code = "ply-header"


class PlyPropertyError(NgsplatError):
    code = "ply-property"


class PlyPayloadError(NgsplatError):
    code = "ply-payload"


class FreezeViolationError(NgsplatError):
    code = "freeze-violation"


class RenderStateError(NgsplatError):
    """Backward pass invoked without a matching forward record."""

    code = "render-state"
