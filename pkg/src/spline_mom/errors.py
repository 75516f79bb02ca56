"""Exception hierarchy.

Each family carries the process exit code the command line maps it to.
"""


class SplineMomError(Exception):
    exit_code = 1


class DomainError(SplineMomError, ValueError):
    """Parameter outside its admissible domain."""


class RefinementError(SplineMomError, ValueError):
    """Knot insertion would exceed the admissible multiplicity."""


class GeometryError(SplineMomError):
    exit_code = 3


class CompatibilityError(GeometryError):
    """Knot vectors on a shared edge do not match."""


class WatertightnessError(GeometryError):
    """Boundary curves of a shared edge do not coincide."""


class SchemaError(GeometryError):
    """Malformed geometry file."""


class SpaceError(SplineMomError):
    exit_code = 3


class AssemblyError(SplineMomError):
    exit_code = 4


class SingularEvaluationError(AssemblyError, ZeroDivisionError):
    """Kernel evaluated at coincident points."""


class SolverError(SplineMomError):
    exit_code = 5

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])


class MatrixFormatError(SplineMomError, OSError):
    """Corrupted or incompatible matrix file."""
