"""Exception types shared across the package.

Each class maps to one CLI exit code (see :mod:`perspcam.cli`).
"""


class PerspcamError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class InvalidArgumentError(PerspcamError, ValueError):
    exit_code = 2


class ModelFormatError(PerspcamError, ValueError):
    """A model, mesh, mask or manifest file could not be parsed or validated."""


class BehindCameraError(PerspcamError, ValueError):
    def __init__(self, indices, message=None):
        self.indices = [int(i) for i in indices]
        shown = self.indices[:10]
        more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
        super().__init__(message or f"points at or behind the camera plane: {shown}{more}")


class EmptySilhouetteError(PerspcamError):
    pass


class DegenerateGeometryError(PerspcamError, ValueError):
    pass


class SolverDivergedError(PerspcamError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
