"""Exception hierarchy shared by every stage.

Each error carries a machine-readable exit code and the name of the stage
that raised it, so the CLI can report failures uniformly.
"""


class PosekitError(Exception):
    code = 1
    stage = "posekit"

    def __init__(self, message, stage=None, **details):
        super().__init__(message)
        if stage is not None:
            self.stage = stage
        self.details = details

    def to_dict(self):
        out = {"error": type(self).__name__, "message": str(self),
               "stage": self.stage, "code": self.code}
        out.update({k: v for k, v in self.details.items() if v is not None})
        return out


class ShapeError(PosekitError, ValueError):
    code = 2
    stage = "ssim"


class OutOfBoundsError(PosekitError, ValueError):
    code = 5
    stage = "refine"


class PreconditionError(PosekitError, ValueError):
    code = 2


class ParseError(PosekitError, ValueError):
    code = 3
    stage = "parse"


class NoAssociationError(PosekitError):
    code = 4
    stage = "reid"


class RefinementDegenerateError(PosekitError):
    code = 5
    stage = "refine"


class NoConsensusError(PosekitError):
    code = 6
    stage = "pnp"


class DegenerateGeometryError(PosekitError):
    code = 7
    stage = "geometry"


class BehindCameraError(DegenerateGeometryError):
    pass


class AmbiguityError(DegenerateGeometryError):
    stage = "sfm"


class OrderingError(PosekitError, ValueError):
    code = 2
    stage = "sync"
