"""Div-conforming B-spline boundary elements for electromagnetic scattering.

NURBS multipatch surfaces, conforming vector spline spaces, EFIE and MFIE
Galerkin operators with singular quadrature, H-matrix compression, and a
Mie-series reference for the conducting sphere.
"""

from .assembly import (
    EfieOperator,
    MfieOperator,
    ScatteringConfig,
    assemble_efie,
    assemble_mfie,
    solve_dense,
)
from .errors import (
    AssemblyError,
    CompatibilityError,
    DomainError,
    GeometryError,
    MatrixFormatError,
    RefinementError,
    SchemaError,
    SingularEvaluationError,
    SolverError,
    SpaceError,
    SplineMomError,
    WatertightnessError,
)
from .geometry import Edge, MultipatchSurface, NurbsPatch
from .hmatrix import HMatrix, build_hmatrix, iterative_solve, load_hmatrix, save_hmatrix
from .mie import MieSeries, mie_bistatic_rcs, mie_current_cartesian, mie_rcs
from .models import load_geometry, make_almond, make_sphere, save_geometry
from .postprocess import (
    SurfaceCurrentSolution,
    far_field_E,
    hdiv_error,
    rcs,
    rcs_sweep,
)
from .quadrature import QuadratureOptions
from .solvers import SolveSettings, solve_efie, solve_mfie
from .spaces import ConformingSpace, parse_degree_pair
from .spline import KnotVector

__version__ = "0.1.0"
