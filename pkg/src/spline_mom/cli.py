"""Command-line front end.

Subcommands: ``info``, ``refine``, ``solve``, ``rcs-sweep``, ``converge``,
``mie-rcs`` and ``export-samples``.  Tables go to stdout (or ``--output``)
as CSV, single results as JSON.

Exit codes: 0 success, 2 usage, 3 geometry, 4 assembly, 5 solver.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys

import numpy as np

from .assembly import ScatteringConfig
from .errors import (
    AssemblyError,
    DomainError,
    GeometryError,
    MatrixFormatError,
    SolverError,
    SpaceError,
)

log = logging.getLogger("spline_mom")

EXIT_OK, EXIT_USAGE, EXIT_GEOMETRY, EXIT_ASSEMBLY, EXIT_SOLVER = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


# -- argument helpers -----------------------------------------------------------

def parse_int_range(text: str) -> list:
    """``"2"``, ``"0..3"`` or ``"0,2,3"`` to a list of ints."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise UsageError(f"bad integer range {text!r}") from None
    if not out:
        raise UsageError(f"empty integer range {text!r}")
    return out


def parse_float_range(text: str) -> np.ndarray:
    """``"1.5"``, ``"0.5,1,2"`` or ``"start:stop:count"`` (inclusive linspace)."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, n = text.split(":")
            return np.linspace(float(a), float(b), int(n))
        return np.array([float(v) for v in text.split(",") if v])
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def parse_vector(text: str) -> tuple:
    try:
        v = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"bad vector {text!r}") from None
    if len(v) != 3:
        raise UsageError(f"vector needs three components, got {text!r}")
    return tuple(v)


def worker_count(requested: int | None = None) -> int:
    """Requested workers, capped by ``SPLINE_MOM_THREADS`` when set."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("SPLINE_MOM_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"SPLINE_MOM_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def load_surface(args):
    from .models import load_geometry, make_almond, make_sphere

    if getattr(args, "geometry", None):
        surface = load_geometry(args.geometry)
    elif args.model == "sphere":
        surface = make_sphere()
    elif args.model == "almond":
        surface = make_almond()
    else:
        raise UsageError(f"unknown model {args.model!r}")
    return surface


def _quadrature(args):
    from .quadrature import QuadratureOptions

    return QuadratureOptions(
        order=args.quad_order,
        near_threshold=args.near_threshold,
        degenerate_upgrade=args.degenerate_upgrade,
    )


def _settings(args, force_hmatrix: bool = False):
    from .solvers import SolveSettings

    return SolveSettings(
        quadrature=_quadrature(args),
        hmatrix=args.hmatrix or force_hmatrix,
        aca_tol=args.aca_tol,
        eta=args.eta,
        leaf_size=args.leaf_size,
        gmres_tol=args.gmres_tol,
        workers=worker_count(args.workers),
        save_matrix=getattr(args, "save_matrix", None),
        load_matrix=getattr(args, "load_matrix", None),
    )


def _config(args, model: str | None = None) -> ScatteringConfig:
    pol = parse_vector(args.polarization) if args.polarization else None
    dirn = parse_vector(args.direction) if args.direction else None
    if pol is None and dirn is None and model == "almond":
        # head-on incidence from +x, vertical polarisation
        dirn, pol = (-1.0, 0.0, 0.0), (0.0, 0.0, 1.0)
    pol = pol or (1.0, 0.0, 0.0)
    dirn = dirn or (0.0, 0.0, 1.0)
    if args.frequency is not None:
        return ScatteringConfig.from_frequency(args.frequency, pol, dirn)
    if args.k is None:
        raise UsageError("give --k or --frequency")
    return ScatteringConfig(args.k, pol, dirn)


def _solver(args):
    from .solvers import solve_efie, solve_mfie

    return solve_mfie if args.formulation == "mfie" else solve_efie


def _write_rows(args, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in r])
    _emit(args, buf.getvalue())


def _emit(args, text: str):
    out = getattr(args, "output", None)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(args, data):
    _emit(args, json.dumps(data, indent=2, sort_keys=True) + "\n")


# -- commands -----------------------------------------------------------------

def cmd_info(args):
    from .spaces import ConformingSpace, parse_degree_pair

    surface = load_surface(args)
    rows = []
    for h in parse_int_range(args.href):
        refined = surface.refine(h)
        for deg in args.degree:
            space = ConformingSpace(refined, "div", parse_degree_pair(deg))
            rows.append([args.geometry or args.model, f"h{h}", refined.n_elements, deg,
                         space.global_dim])
    _write_rows(args, ["model", "mesh", "elements", "degree", "dofs"], rows)
    return EXIT_OK


def cmd_refine(args):
    from .models import save_geometry

    surface = load_surface(args).refine(_single_href(args))
    save_geometry(surface, args.output)
    log.info("wrote %d patches, %d elements to %s", len(surface.patches), surface.n_elements,
             args.output)
    return EXIT_OK


def _single_href(args) -> int:
    levels = parse_int_range(args.href)
    if len(levels) != 1 or levels[0] < 0:
        raise UsageError(f"--href needs one non-negative level here, got {args.href!r}")
    return levels[0]


def _solve_once(args):
    from .spaces import ConformingSpace, parse_degree_pair

    surface = load_surface(args).refine(_single_href(args))
    space = ConformingSpace(surface, "div", parse_degree_pair(args.degree))
    cfg = _config(args, args.model if not args.geometry else None)
    solution = _solver(args)(space, cfg, _settings(args))
    return space, cfg, solution


def cmd_solve(args):
    from .postprocess import far_field_E, rcs

    space, cfg, solution = _solve_once(args)
    back = -np.asarray(cfg.direction)
    sigma, db = rcs(far_field_E(solution, back)[0])
    out = {
        "formulation": args.formulation,
        "dofs": space.global_dim,
        "elements": space.surface.n_elements,
        "wavenumber": cfg.wavenumber,
        "frequency": cfg.frequency,
        "sigma": sigma,
        "sigma_dbsm": db,
    }
    if not args.geometry and args.model == "sphere":
        out["sigma_normalised"] = sigma / math.pi
    if args.coefficients:
        np.save(args.coefficients, solution.coefficients)
    _json(args, out)
    return EXIT_OK


def cmd_rcs_sweep(args):
    from .postprocess import rcs_sweep, spherical_direction
    from .spaces import ConformingSpace, parse_degree_pair

    surface = load_surface(args).refine(_single_href(args))
    space = ConformingSpace(surface, "div", parse_degree_pair(args.degree))
    settings = _settings(args)
    solve = _solver(args)

    def run(sp_, cfg):
        return solve(sp_, cfg, settings)

    sphere = not args.geometry and args.model == "sphere"
    if args.ka is not None:
        if not sphere:
            raise UsageError("--ka sweeps are defined for the unit sphere model")
        cfg = _config(argparse.Namespace(**{**vars(args), "k": 1.0, "frequency": None}))
        res = rcs_sweep(space, cfg, wavenumbers=parse_float_range(args.ka), solve=run,
                        normalise_by=math.pi)
        _write_rows(args, ["ka", "sigma_normalised"], [[r.wavenumber, r.normalised] for r in res])
        return EXIT_OK if all(not r.error for r in res) else EXIT_SOLVER
    angles = parse_float_range(args.angles)
    rad = np.radians(angles)
    if args.plane == "xy":
        dirs = spherical_direction(np.full_like(rad, math.pi / 2), rad)
    elif args.plane == "xz":
        dirs = spherical_direction(rad, np.zeros_like(rad))
    else:
        raise UsageError(f"unknown plane {args.plane!r}")
    cfg = _config(args, None if args.geometry else args.model)
    res = rcs_sweep(space, cfg, directions=dirs, angles=angles, solve=run)
    _write_rows(args, ["angle_deg", "sigma_dbsm"], [[float(r.angle), r.sigma_dbsm] for r in res])
    return EXIT_OK


def convergence_study(k: float, degrees, hrefs, settings_for, order: int | None = None):
    """Sphere H(div) errors against the Mie current.

    ``settings_for(n_dofs)`` returns the :class:`SolveSettings` for one solve.
    Returns rows ``(degree, h, dofs, error)`` and a ``{degree: slope}`` map
    of least-squares slopes of ``log(error)`` against ``log(2^h)``.
    """
    from .mie import MieSeries, mie_current_cartesian, mie_current_divergence
    from .models import make_sphere
    from .postprocess import hdiv_error
    from .solvers import solve_efie
    from .spaces import ConformingSpace, parse_degree_pair

    cfg = ScatteringConfig(k)
    series = MieSeries(k)
    base = make_sphere()
    rows, slopes = [], {}
    for deg in degrees:
        errs = []
        for h in hrefs:
            space = ConformingSpace(base.refine(h), "div", parse_degree_pair(deg))
            sol = solve_efie(space, cfg, settings_for(space.global_dim))
            err = hdiv_error(sol, lambda x: mie_current_cartesian(series, x),
                             lambda x: mie_current_divergence(series, x), order)
            rows.append((deg, h, space.global_dim, err))
            errs.append(err)
        if len(hrefs) > 1:
            slopes[deg] = -float(np.polyfit(np.array(hrefs) * math.log(2), np.log(errs), 1)[0])
    return rows, slopes


def cmd_converge(args):
    if not args.geometry and args.model != "sphere":
        raise UsageError("the convergence study needs the sphere model")
    def settings_for(n):
        return _settings(args, force_hmatrix=n > args.dense_limit)

    hrefs = parse_int_range(args.href)
    rows, slopes = convergence_study(args.k, args.degrees, hrefs, settings_for)
    table = [[d, f"h{h}", n, e, slopes.get(d, float("nan"))] for d, h, n, e in rows]
    _write_rows(args, ["degree", "mesh", "dofs", "hdiv_error", "slope"], table)
    return EXIT_OK


def cmd_mie_rcs(args):
    from .mie import MieSeries, mie_bistatic_rcs, mie_rcs

    ka = parse_float_range(args.ka)
    if args.theta is not None:
        theta = parse_float_range(args.theta)
        s = mie_bistatic_rcs(MieSeries(float(ka[0])), np.radians(theta), args.phi * math.pi / 180)
        _write_rows(args, ["theta_deg", "sigma_normalised"], [[float(t), float(v)] for t, v in zip(theta, s)])
        return EXIT_OK
    rows = [[float(x), mie_rcs(MieSeries(float(x)))] for x in ka]
    _write_rows(args, ["ka", "sigma_normalised"], rows)
    return EXIT_OK


def cmd_export_samples(args):
    from .postprocess import export_surface_samples, write_samples_csv, write_samples_vtk

    _, _, solution = _solve_once(args)
    samples = export_surface_samples(solution, args.samples)
    if args.csv:
        write_samples_csv(samples, args.csv)
    if args.vtk:
        write_samples_vtk(samples, args.vtk)
    if not args.csv and not args.vtk:
        buf = io.StringIO()
        write_samples_csv(samples, buf)
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def _geometry_args(p, href_default="0"):
    p.add_argument("--model", choices=["sphere", "almond"], default="sphere")
    p.add_argument("--geometry", help="JSON geometry file (overrides --model)")
    p.add_argument("--href", default=href_default, help="h-refinement level(s)")


def _solver_args(p):
    p.add_argument("--degree", default="1,0", help="first component degrees, e.g. 2,1")
    p.add_argument("--k", type=float, help="wavenumber [1/m]")
    p.add_argument("--frequency", type=float, help="frequency [Hz], free space")
    p.add_argument("--polarization", help="unit polarisation vector, e.g. 0,0,1")
    p.add_argument("--direction", help="unit propagation direction, e.g. -1,0,0")
    p.add_argument("--formulation", choices=["efie", "mfie"], default="efie")
    _numerics_args(p)


def _numerics_args(p):
    p.add_argument("--quad-order", type=int, default=None)
    p.add_argument("--near-threshold", type=float, default=1.5)
    p.add_argument("--degenerate-upgrade", type=int, default=3)
    p.add_argument("--hmatrix", action="store_true", help="H-matrix operator with GMRES")
    p.add_argument("--aca-tol", type=float, default=1e-6)
    p.add_argument("--eta", type=float, default=2.0)
    p.add_argument("--leaf-size", type=int, default=32)
    p.add_argument("--gmres-tol", type=float, default=1e-8)
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spline-mom", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("info", help="element and DOF counts")
    _geometry_args(p)
    p.add_argument("--degree", nargs="+", default=["1,0"])
    p.add_argument("--output")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("refine", help="write an h-refined geometry file")
    _geometry_args(p)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("solve", help="single scattering solve")
    _geometry_args(p)
    _solver_args(p)
    p.add_argument("--save-matrix")
    p.add_argument("--load-matrix")
    p.add_argument("--coefficients", help="save the coefficient vector (.npy)")
    p.add_argument("--output")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("rcs-sweep", help="monostatic ka sweep or bistatic angle sweep")
    _geometry_args(p)
    _solver_args(p)
    p.add_argument("--ka", help="sphere monostatic sweep values")
    p.add_argument("--angles", default="0:360:73", help="bistatic angles in degrees")
    p.add_argument("--plane", choices=["xy", "xz"], default="xy")
    p.add_argument("--output")
    p.set_defaults(func=cmd_rcs_sweep)

    p = sub.add_parser("converge", help="sphere H(div) error study against the Mie current")
    _geometry_args(p, "0..2")
    p.add_argument("--k", type=float, default=3.0)
    p.add_argument("--degrees", nargs="+", default=["1,0", "2,1"])
    p.add_argument("--dense-limit", type=int, default=300,
                   help="larger systems use the H-matrix path")
    _numerics_args(p)
    p.add_argument("--output")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("mie-rcs", help="analytic sphere RCS")
    p.add_argument("--ka", default="0.1:10:100")
    p.add_argument("--theta", help="bistatic angles in degrees (uses the first ka)")
    p.add_argument("--phi", type=float, default=0.0, help="bistatic azimuth in degrees")
    p.add_argument("--output")
    p.set_defaults(func=cmd_mie_rcs)

    p = sub.add_parser("export-samples", help="solve and write surface-current samples")
    _geometry_args(p)
    _solver_args(p)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--csv")
    p.add_argument("--vtk")
    p.set_defaults(func=cmd_export_samples)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GeometryError, SpaceError) as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (AssemblyError, MatrixFormatError) as exc:
        print(f"assembly error: {exc}", file=sys.stderr)
        return EXIT_ASSEMBLY
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():  # pragma: no cover
    sys.exit(cli_main())
