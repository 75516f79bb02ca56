"""End-to-end solves: assemble, solve and wrap the surface current."""

from __future__ import annotations

import logging


from .assembly import EfieOperator, MfieOperator, ScatteringConfig, solve_dense
from .postprocess import SurfaceCurrentSolution
from .quadrature import QuadratureOptions
from .spaces import ConformingSpace

__all__ = ["solve_efie", "solve_mfie", "SolveSettings"]

log = logging.getLogger(__name__)


class SolveSettings:
    """Options shared by the solve helpers."""

    def __init__(self, quadrature: QuadratureOptions | None = None, hmatrix: bool = False,
                 aca_tol: float = 1e-6, eta: float = 2.0, leaf_size: int = 32,
                 gmres_tol: float = 1e-8, restart: int | None = None, max_iter: int = 5000,
                 workers: int = 1, save_matrix=None, load_matrix=None):
        self.quadrature = quadrature or QuadratureOptions()
        self.hmatrix = hmatrix
        self.aca_tol = aca_tol
        self.eta = eta
        self.leaf_size = leaf_size
        self.gmres_tol = gmres_tol
        self.restart = restart
        self.max_iter = max_iter
        self.workers = workers
        self.save_matrix = save_matrix
        self.load_matrix = load_matrix


def _solve(op, settings: SolveSettings):
    rhs = op.rhs()
    if settings.hmatrix or settings.load_matrix:
        from .hmatrix import build_hmatrix, iterative_solve, load_hmatrix, save_hmatrix

        if settings.load_matrix:
            H = load_hmatrix(settings.load_matrix)
        else:
            H = build_hmatrix(op, settings.space_boxes, eta=settings.eta, leaf_size=settings.leaf_size,
                              tol=settings.aca_tol)
        if settings.save_matrix:
            save_hmatrix(H, settings.save_matrix)
        result = iterative_solve(H, rhs, tol=settings.gmres_tol, restart=settings.restart,
                                 max_iter=settings.max_iter)
        log.info("gmres converged in %d iterations", result.iterations)
        return result.x
    A = op.dense()
    if settings.save_matrix:
        from .assembly import write_matrix

        write_matrix(settings.save_matrix, A)
    return solve_dense(A, rhs)


def solve_efie(space: ConformingSpace, config: ScatteringConfig,
               settings: SolveSettings | None = None) -> SurfaceCurrentSolution:
    settings = settings or SolveSettings()
    op = EfieOperator(space, config, settings.quadrature, settings.workers)
    settings.space_boxes = space.dof_bounding_boxes
    x = _solve(op, settings)
    return SurfaceCurrentSolution(space, x, config, "div")


def solve_mfie(space: ConformingSpace, config: ScatteringConfig,
               settings: SolveSettings | None = None) -> SurfaceCurrentSolution:
    """MFIE solve; the current is expanded in the rotated (curl) functions."""
    settings = settings or SolveSettings()
    op = MfieOperator(space, config, settings.quadrature, settings.workers)
    settings.space_boxes = space.dof_bounding_boxes
    x = _solve(op, settings)
    return SurfaceCurrentSolution(space, x, config, "curl")
