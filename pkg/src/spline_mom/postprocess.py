"""Far fields, radar cross sections, error norms and surface-sample export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .assembly import ScatteringConfig
from .errors import SolverError, SplineMomError
from .quadrature import element_rule
from .spaces import ConformingSpace

__all__ = [
    "SurfaceCurrentSolution",
    "RcsResult",
    "far_field_E",
    "rcs",
    "to_dbsm",
    "from_dbsm",
    "hdiv_error",
    "l2_norm",
    "l2_difference",
    "export_surface_samples",
    "write_samples_csv",
    "write_samples_vtk",
    "rcs_sweep",
    "spherical_direction",
]


@dataclass
class SurfaceCurrentSolution:
    """Coefficients of a surface current in a conforming space.

    ``kind`` selects the div-conforming functions (EFIE) or their rotated
    curl-conforming partners (MFIE).
    """

    space: ConformingSpace
    coefficients: np.ndarray
    config: ScatteringConfig | None = None
    kind: str = "div"

    def element_values(self, elem, u, v):
        """Current, surface divergence (div kind only), points and weights
        factor ``J * element area`` at local coordinates."""
        eb = self.space.element_basis(elem, u, v, kind=self.kind)
        c = self.coefficients[eb.dofs]
        J = np.einsum("mnc,n->mc", eb.values, c)
        div = eb.div @ c if eb.div is not None else None
        area = eb.surface_element * (elem.s1 - elem.s0) * (elem.t1 - elem.t0)
        return J, div, eb.point, area

    def quadrature_samples(self, order: int, degenerate_upgrade: int = 3):
        """Concatenated current, divergence, points and weights over the surface."""
        Js, divs, xs, ws = [], [], [], []
        for el in self.space.surface.elements:
            rule = element_rule(order, el, degenerate_upgrade if el.degenerate_sides else 1)
            J, div, x, area = self.element_values(el, *rule.points.T)
            Js.append(J)
            divs.append(div if div is not None else np.zeros(len(J)))
            xs.append(x)
            ws.append(rule.weights * area)
        return np.concatenate(Js), np.concatenate(divs), np.concatenate(xs), np.concatenate(ws)


@dataclass(frozen=True)
class RcsResult:
    """One RCS value with its observation data."""

    sigma: float
    sigma_dbsm: float
    direction: tuple = ()
    wavenumber: float = float("nan")
    frequency: float = float("nan")
    angle: float = float("nan")
    normalised: float = float("nan")
    error: str = ""


def spherical_direction(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1
    )


def far_field_E(solution: SurfaceCurrentSolution, directions, wavenumber: float | None = None,
                eta: float | None = None, order: int | None = None) -> np.ndarray:
    """Far-field amplitude ``A`` with ``E_s ~ A exp(-j k r) / r``.

    ``A = -j k eta / (4 pi) (I - x x) int J(y) exp(j k x . y) dy``.
    """
    cfg = solution.config
    k = wavenumber if wavenumber is not None else cfg.wavenumber
    eta = eta if eta is not None else cfg.eta
    if order is None:
        order = max(solution.space.degrees) + 4
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    directions = directions / np.linalg.norm(directions, axis=1)[:, None]
    J, _, x, w = solution.quadrature_samples(order)
    phase = np.exp(1j * k * (directions @ x.T)) * w[None, :]
    I = phase @ J
    I -= directions * np.einsum("mc,mc->m", directions, I)[:, None]
    return -1j * k * eta / (4 * math.pi) * I


def to_dbsm(sigma):
    return 10.0 * np.log10(sigma)


def from_dbsm(dbsm):
    return 10.0 ** (np.asarray(dbsm) / 10.0)


def rcs(amplitude) -> tuple:
    """``sigma = 4 pi |A|^2`` (unit incident amplitude) and its dBsm value."""
    A = np.atleast_2d(np.asarray(amplitude))
    sigma = 4 * math.pi * np.sum(np.abs(A) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        db = to_dbsm(sigma)
    if np.ndim(amplitude) == 1:
        return float(sigma[0]), float(db[0])
    return sigma, db


def l2_norm(values, weights) -> float:
    v = np.asarray(values)
    if v.ndim == 1:
        return float(math.sqrt(np.sum(weights * np.abs(v) ** 2)))
    return float(math.sqrt(np.sum(weights[:, None] * np.abs(v) ** 2)))


def hdiv_error(solution: SurfaceCurrentSolution, reference, reference_div,
               order: int | None = None) -> float:
    """Relative error ``(|e|_L2 + |div e|_L2) / (|J|_L2 + |div J|_L2)``.

    ``reference`` and ``reference_div`` are callables of surface points.
    """
    if solution.kind != "div":
        raise SplineMomError("the H(div) error needs a div-conforming solution")
    if order is None:
        order = max(solution.space.degrees) + 4
    J, div, x, w = solution.quadrature_samples(order)
    Jr = reference(x)
    dr = reference_div(x)
    num = l2_norm(J - Jr, w) + l2_norm(div - dr, w)
    den = l2_norm(Jr, w) + l2_norm(dr, w)
    return num / den


def l2_difference(a: SurfaceCurrentSolution, b, order: int | None = None) -> float:
    """Relative surface L2 difference between a solution and another solution
    or a callable reference, normalised by the norm of the second."""
    if order is None:
        order = max(a.space.degrees) + 4
    Ja, _, x, w = a.quadrature_samples(order)
    if isinstance(b, SurfaceCurrentSolution):
        Jb, _, xb, _ = b.quadrature_samples(order)
        if xb.shape != x.shape or np.abs(xb - x).max() > 1e-12:
            raise SplineMomError("solutions live on different meshes")
    else:
        Jb = b(x)
    return l2_norm(Ja - Jb, w) / l2_norm(Jb, w)


# -- sample export ------------------------------------------------------------

def export_surface_samples(solution: SurfaceCurrentSolution, samples: int = 5) -> dict:
    """Current samples on a uniform ``samples x samples`` grid per element.

    Grid points are the cell centres of the subdivided element so that tips
    are never evaluated.
    """
    g = (np.arange(samples) + 0.5) / samples
    U, V = np.meshgrid(g, g)
    rows = {"element": [], "x": [], "J": []}
    for el in solution.space.surface.elements:
        J, _, x, _ = solution.element_values(el, U.ravel(), V.ravel())
        rows["element"].append(np.full(len(J), el.index))
        rows["x"].append(x)
        rows["J"].append(J)
    J = np.concatenate(rows["J"])
    return {
        "element": np.concatenate(rows["element"]),
        "position": np.concatenate(rows["x"]),
        "current": J,
        "real_magnitude": np.linalg.norm(J.real, axis=1),
        "imag_magnitude": np.linalg.norm(J.imag, axis=1),
        "samples": samples,
    }


def write_samples_csv(samples: dict, path) -> None:
    """Write samples to a path or an open text stream."""
    if hasattr(path, "write"):
        _samples_csv(samples, path)
    else:
        with open(path, "w", newline="") as fh:
            _samples_csv(samples, fh)


def _samples_csv(samples: dict, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["element", "x", "y", "z", "re_jx", "re_jy", "re_jz",
                "im_jx", "im_jy", "im_jz", "re_mag", "im_mag"])
    for e, x, J, rm, im in zip(samples["element"], samples["position"], samples["current"],
                               samples["real_magnitude"], samples["imag_magnitude"]):
        w.writerow([int(e), *(f"{v:.12e}" for v in x), *(f"{v:.12e}" for v in J.real),
                    *(f"{v:.12e}" for v in J.imag), f"{rm:.12e}", f"{im:.12e}"])


def write_samples_vtk(samples: dict, path) -> None:
    """Legacy ASCII VTK polydata with one quad per sample cell."""
    n = samples["samples"]
    pos = samples["position"]
    n_el = pos.shape[0] // (n * n)
    quads = []
    for e in range(n_el):
        base = e * n * n
        for j in range(n - 1):
            for i in range(n - 1):
                a = base + j * n + i
                quads.append((a, a + 1, a + n + 1, a + n))
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nsurface current samples\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {len(pos)} double\n")
        for x in pos:
            fh.write(f"{x[0]:.10e} {x[1]:.10e} {x[2]:.10e}\n")
        fh.write(f"POLYGONS {len(quads)} {5 * len(quads)}\n")
        for q in quads:
            fh.write(f"4 {q[0]} {q[1]} {q[2]} {q[3]}\n")
        fh.write(f"POINT_DATA {len(pos)}\n")
        for name in ("real_magnitude", "imag_magnitude"):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in samples[name]:
                fh.write(f"{v:.10e}\n")


# -- sweeps -------------------------------------------------------------------

def rcs_sweep(space: ConformingSpace, config: ScatteringConfig, wavenumbers=None,
              directions=None, angles=None, solve=None, normalise_by: float | None = None):
    """Monostatic wavenumber sweep or bistatic direction sweep.

    ``solve(space, config)`` returns a :class:`SurfaceCurrentSolution`
    (defaults to the dense EFIE).  With ``wavenumbers`` each point is a
    fresh backscatter solve; with ``directions`` one solve is reused for all
    observation directions (``angles`` only labels the rows).  Failed points
    are recorded with ``sigma = nan`` and the sweep continues.
    """
    from .solvers import solve_efie

    solve = solve or solve_efie
    out = []
    if wavenumbers is not None:
        for k in wavenumbers:
            cfg = ScatteringConfig(float(k), config.polarization, config.direction,
                                   config.epsilon, config.mu)
            back = -np.asarray(cfg.direction)
            try:
                sol = solve(space, cfg)
                sigma, db = rcs(far_field_E(sol, back)[0])
                err = ""
            except SolverError as exc:
                sigma, db, err = float("nan"), float("nan"), str(exc)
            norm = sigma / normalise_by if normalise_by else float("nan")
            out.append(RcsResult(sigma, db, tuple(back), cfg.wavenumber, cfg.frequency,
                                 normalised=norm, error=err))
        return out
    if directions is None:
        raise ValueError("either wavenumbers or directions must be given")
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if angles is None:
        angles = np.full(len(directions), np.nan)
    sol = solve(space, config)
    sig, db = rcs(far_field_E(sol, directions))
    for d, s, b, a in zip(directions, np.atleast_1d(sig), np.atleast_1d(db), angles):
        norm = s / normalise_by if normalise_by else float("nan")
        out.append(RcsResult(float(s), float(b), tuple(d), config.wavenumber, config.frequency,
                             float(a), norm))
    return out
