"""Built-in reference geometries and the JSON multipatch geometry format.

Geometry JSON (version 1)::

    {
      "format": "spline-mom-geometry",
      "version": 1,
      "patches": [
        {"degrees": [p, q],
         "knots": [[...], [...]],
         "control_points": [[X, Y, Z, W], ...]}      # homogeneous, a = j*n + i
      ],
      "edges": [{"patches": [ia, ib], "sides": [sa, sb], "reversed": false}],
      "degenerate": [[patch, side], ...]             # optional, informational
    }

Sides are numbered 0: t=0, 1: s=1, 2: t=1, 3: s=0.  The edge table is
mandatory; connectivity is never inferred from geometry when loading.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GeometryError, SchemaError, SplineMomError
from .geometry import Edge, MultipatchSurface, NurbsPatch, match_edges
from .spline import KnotVector, insert_knots

__all__ = [
    "make_sphere",
    "make_almond",
    "almond_point",
    "almond_deviation",
    "AlmondFit",
    "ALMOND_LENGTH",
    "load_geometry",
    "save_geometry",
    "surface_to_dict",
    "surface_from_dict",
    "GEOMETRY_FORMAT",
]

GEOMETRY_FORMAT = "spline-mom-geometry"
GEOMETRY_VERSION = 1


# --------------------------------------------------------------------------
# sphere
# --------------------------------------------------------------------------

def _cobb_face() -> np.ndarray:
    """Homogeneous 5x5 control net of the +z face of the six-patch sphere."""
    s2, s3 = math.sqrt(2.0), math.sqrt(3.0)
    row0 = [
        (4 * (1 - s3), 4 * (1 - s3), 4 * (s3 - 1), 4 * (3 - s3)),
        (-s2, s2 * (s3 - 4), s2 * (4 - s3), s2 * (3 * s3 - 2)),
        (0.0, 4 * (1 - 2 * s3) / 3, 4 * (2 * s3 - 1) / 3, 4 * (5 - s3) / 3),
    ]
    a11 = (2 - 3 * s3) / 2
    z11 = (s3 + 6) / 2
    b21 = s2 * (2 * s3 - 7) / 3
    z21 = 5 * math.sqrt(6.0) / 3
    w21 = s2 * (s3 + 6) / 3
    P = np.zeros((5, 5, 4))
    for i, (X, Y, Z, W) in enumerate(row0):
        for ii, sx in ((i, 1.0), (4 - i, -1.0)):
            P[ii, 0] = (sx * X, Y, Z, W)
            P[ii, 4] = (sx * X, -Y, Z, W)
            P[0, ii] = (Y, sx * X, Z, W)
            P[4, ii] = (-Y, sx * X, Z, W)
    for i, j in ((1, 1), (1, 3), (3, 1), (3, 3)):
        P[i, j] = (a11 * (-1 if i == 3 else 1), a11 * (-1 if j == 3 else 1), z11, z11)
    for sg in (1.0, -1.0):
        P[2, 2 - int(sg)] = (0.0, sg * b21, z21, w21)
        P[2 - int(sg), 2] = (sg * b21, 0.0, z21, w21)
    P[2, 2] = (0.0, 0.0, 4 * (5 - s3) / 3, 4 * (5 * s3 - 1) / 9)
    return P


_CUBE_ROTATIONS = (
    np.eye(3),
    np.array([[1, 0, 0], [0, -1, 0], [0, 0, -1]]),
    np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0]]),
    np.array([[0, 0, -1], [0, 1, 0], [1, 0, 0]]),
    np.array([[1, 0, 0], [0, 0, 1], [0, -1, 0]]),
    np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]]),
)


def make_sphere(radius: float = 1.0) -> MultipatchSurface:
    """Exact sphere from six biquartic rational patches in a cube layout."""
    face = _cobb_face()
    kv = KnotVector(np.r_[np.zeros(5), np.ones(5)], 4)
    patches = []
    for R in _CUBE_ROTATIONS:
        ctrl = face.copy()
        ctrl[..., :3] = radius * face[..., :3] @ R.T
        patches.append(NurbsPatch(kv, kv, ctrl))
    return MultipatchSurface(patches, match_edges(patches, tol=1e-9 * radius))


# --------------------------------------------------------------------------
# almond
# --------------------------------------------------------------------------

ALMOND_LENGTH = 0.2524
_FRONT = 0.416667
_BACK = 0.58333
_HALF_WIDTH = 0.193333
_HALF_HEIGHT = 0.064444
_BACK_SCALE = 4.83345
_BACK_RADIUS = 2.08335


def almond_profile(t):
    """Normalised cross-section scale ``rho(t)`` (1 at the widest section)."""
    t = np.asarray(t, dtype=float)
    front = np.sqrt(np.clip(1.0 - (t / _FRONT) ** 2, 0.0, None))
    back = _BACK_SCALE / _HALF_WIDTH * (
        np.sqrt(np.clip(1.0 - (t / _BACK_RADIUS) ** 2, 0.0, None)) - 0.96
    )
    return np.where(t <= 0, front, np.clip(back, 0.0, None))


def almond_point(s, t, length: float = ALMOND_LENGTH) -> np.ndarray:
    """Analytic almond surface; ``t`` in [-0.416667, 0.58333], ``s`` in [-pi, pi]."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    rho = almond_profile(t)
    return np.stack(
        [
            length * t,
            _HALF_WIDTH * length * rho * np.cos(s),
            _HALF_HEIGHT * length * rho * np.sin(s),
        ],
        axis=-1,
    )


def _elevate(ctrl: np.ndarray) -> np.ndarray:
    """Degree-elevate a homogeneous Bezier curve by one."""
    p = ctrl.shape[0] - 1
    out = np.empty((p + 2,) + ctrl.shape[1:])
    out[0], out[-1] = ctrl[0], ctrl[-1]
    for i in range(1, p + 1):
        a = i / (p + 1)
        out[i] = a * ctrl[i - 1] + (1 - a) * ctrl[i]
    return out


def _front_axial():
    """Rational cubic for (x/L, rho) over the front half-ellipsoid, tip first."""
    c = math.sqrt(0.5)
    quad = np.array([[-_FRONT, 0.0, 1.0], [-_FRONT * c, c, c], [0.0, 1.0, 1.0]])
    return KnotVector(np.r_[np.zeros(4), np.ones(4)], 3), _elevate(quad)


def _back_axial(n_elements: int, n_samples: int = 400):
    """Cubic least-squares fit of the rear profile, junction first, tip last."""
    from .spline import eval_basis

    kv = KnotVector.uniform(n_elements, 3)
    u = np.linspace(0.0, 1.0, n_samples)
    B = eval_basis(kv, u)
    target = almond_profile(u * _BACK)
    coef = np.zeros(kv.n)
    coef[0], coef[-1] = 1.0, 0.0
    rhs = target - B[:, 0] * coef[0] - B[:, -1] * coef[-1]
    coef[1:-1] = np.linalg.lstsq(B[:, 1:-1], rhs, rcond=None)[0]
    # x is linear in u: Greville abscissae reproduce it exactly
    greville = np.array([kv.knots[i + 1: i + 4].mean() for i in range(kv.n)])
    hom = np.stack([greville * _BACK, coef, np.ones(kv.n)], axis=1)
    return kv, hom


def _semicircle():
    """Rational cubic half circle from (1, 0) through (0, 1) to (-1, 0)."""
    w = np.array([1.0, 1 / 3, 1 / 3, 1.0])
    pts = np.array([[1.0, 0.0], [1.0, 2.0], [-1.0, 2.0], [-1.0, 0.0]])
    hom = np.concatenate([pts * w[:, None], w[:, None]], axis=1)
    return KnotVector(np.r_[np.zeros(4), np.ones(4)], 3), hom


def _almond_patch(kv_ax, ax, kv_c, circ, length, lower):
    """Tensor product of an axial (x, rho) curve and a circumferential curve."""
    wa, wc = ax[:, 2], circ[:, 2]
    xa, ra = ax[:, 0] / wa, ax[:, 1] / wa
    cx, cy = circ[:, 0] / wc, circ[:, 1] / wc
    if lower:
        cy = -cy
    n, m = ax.shape[0], circ.shape[0]
    pts = np.empty((m, n, 3))
    pts[..., 0] = length * xa[None, :]
    pts[..., 1] = _HALF_WIDTH * length * cx[:, None] * ra[None, :]
    pts[..., 2] = _HALF_HEIGHT * length * cy[:, None] * ra[None, :]
    weights = wc[:, None] * wa[None, :]
    # circumferential direction is s, axial direction is t
    patch = NurbsPatch.from_points(kv_c, kv_ax, pts, weights)
    # keep the normal pointing outwards
    fr = patch.surface_frame(0.5, 0.5)
    if np.dot(fr.unit_normal[0], fr.point[0] - np.array([fr.point[0][0], 0, 0])) < 0:
        patch = NurbsPatch(kv_c, kv_ax, patch.control[::-1].copy())
    return patch


@dataclass
class AlmondFit:
    """Fit diagnostics of the almond construction."""

    max_deviation: float
    relative_deviation: float
    junction_normal_defect: float


def make_almond(length: float = ALMOND_LENGTH, n_circ: int = 9, n_axial: int = 8,
                tol: float = 1e-4) -> MultipatchSurface:
    """Four bicubic patches (front/back x upper/lower) with two degenerate tips.

    Raises
    ------
    GeometryError
        If the fitted surface deviates from the analytic one by more than
        ``tol * length``.
    """
    kv_f, front = _front_axial()
    kv_b, back = _back_axial(n_axial)
    kv_c, circ = _semicircle()
    interior = np.arange(1, n_axial) / n_axial
    kv_f, T = insert_knots(kv_f, interior)
    front = T @ front
    kv_c, T = insert_knots(kv_c, np.arange(1, n_circ) / n_circ)
    circ = T @ circ
    patches = []
    for kv_ax, ax in ((kv_f, front), (kv_b, back)):
        for lower in (False, True):
            patches.append(_almond_patch(kv_ax, ax, kv_c, circ, length, lower))
    surface = MultipatchSurface(patches, match_edges(patches, tol=1e-10 * length))
    fit = almond_deviation(surface, length)
    surface.fit = fit
    if fit.relative_deviation > tol:
        raise GeometryError(
            f"almond fit deviation {fit.relative_deviation:.2e} L exceeds {tol:.1e} L"
        )
    return surface


def almond_deviation(surface: MultipatchSurface, length: float = ALMOND_LENGTH,
                     n: int = 60) -> AlmondFit:
    """Maximum distance between the patches and the analytic almond.

    Each surface point is compared with the analytic point at the same axial
    station and elliptic angle.
    """
    g = np.linspace(0.0, 1.0, n)
    S, T = np.meshgrid(g, g)
    worst = 0.0
    for patch in surface.patches:
        x = patch.map_point(S.ravel(), T.ravel())
        t = x[:, 0] / length
        s = np.arctan2(x[:, 2] / _HALF_HEIGHT, x[:, 1] / _HALF_WIDTH)
        worst = max(worst, float(np.linalg.norm(x - almond_point(s, t, length), axis=1).max()))
    # normal jump across the t = 0 junction
    defect = 0.0
    for e in surface.edges:
        pa, pb = surface.patches[e.patch_a], surface.patches[e.patch_b]
        xa = pa.map_point(*_side(e.side_a, g[1:-1]))
        if abs(xa[:, 0]).max() > 1e-12 * length:
            continue
        tb = 1 - g[1:-1] if e.reversed else g[1:-1]
        na = pa.surface_frame(*_side(e.side_a, g[1:-1])).unit_normal
        nb = pb.surface_frame(*_side(e.side_b, tb)).unit_normal
        defect = max(defect, float(np.linalg.norm(na - nb, axis=1).max()))
    return AlmondFit(worst, worst / length, defect)


def _side(side, tau):
    from .geometry import side_param

    return side_param(side, tau)


# --------------------------------------------------------------------------
# JSON geometry format
# --------------------------------------------------------------------------

def surface_to_dict(surface: MultipatchSurface) -> dict:
    return {
        "format": GEOMETRY_FORMAT,
        "version": GEOMETRY_VERSION,
        "patches": [
            {
                "degrees": [p.kv_s.degree, p.kv_t.degree],
                "knots": [p.kv_s.knots.tolist(), p.kv_t.knots.tolist()],
                "control_points": p.flat_control().tolist(),
            }
            for p in surface.patches
        ],
        "edges": [
            {"patches": [e.patch_a, e.patch_b], "sides": [e.side_a, e.side_b], "reversed": e.reversed}
            for e in surface.edges
        ],
        "degenerate": [list(d) for d in surface.degenerate_sides],
    }


def surface_from_dict(data: dict, watertight_tol: float = 1e-8) -> MultipatchSurface:
    if not isinstance(data, dict):
        raise SchemaError("geometry document must be a JSON object")
    if data.get("format") != GEOMETRY_FORMAT:
        raise SchemaError(f"unknown geometry format {data.get('format')!r}")
    if data.get("version") != GEOMETRY_VERSION:
        raise SchemaError(f"unsupported geometry version {data.get('version')!r}")
    if "patches" not in data or not data["patches"]:
        raise SchemaError("geometry has no patches")
    if "edges" not in data:
        raise SchemaError("geometry has no edge table; connectivity must be explicit")
    patches = []
    for ip, rec in enumerate(data["patches"]):
        try:
            p, q = (int(d) for d in rec["degrees"])
            kv_s = KnotVector(rec["knots"][0], p)
            kv_t = KnotVector(rec["knots"][1], q)
            cp = np.asarray(rec["control_points"], dtype=float)
            if cp.shape != (kv_s.n * kv_t.n, 4):
                raise SchemaError(
                    f"expected {kv_s.n * kv_t.n} homogeneous control points, got shape {cp.shape}"
                )
            ctrl = cp.reshape(kv_t.n, kv_s.n, 4).transpose(1, 0, 2)
            patches.append(NurbsPatch(kv_s, kv_t, ctrl))
        except SchemaError as exc:
            raise SchemaError(f"patch {ip}: {exc}") from exc
        except (KeyError, TypeError, IndexError, ValueError, SplineMomError) as exc:
            raise SchemaError(f"patch {ip}: {exc}") from exc
    edges = []
    for ie, rec in enumerate(data["edges"]):
        try:
            (a, b), (sa, sb) = rec["patches"], rec["sides"]
            if not (0 <= a < len(patches) and 0 <= b < len(patches)):
                raise SchemaError("patch index out of range")
            if sa not in range(4) or sb not in range(4):
                raise SchemaError("side must be 0..3")
            edges.append(Edge(int(a), int(sa), int(b), int(sb), bool(rec.get("reversed", False))))
        except SchemaError as exc:
            raise SchemaError(f"edge {ie}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"edge {ie}: malformed record ({exc})") from exc
    surface = MultipatchSurface(patches, edges, check=True, watertight_tol=watertight_tol)
    if "degenerate" in data:
        declared = {tuple(d) for d in data["degenerate"]}
        if declared != set(surface.degenerate_sides):
            raise SchemaError(
                f"declared degenerate sides {sorted(declared)} do not match "
                f"detected {sorted(surface.degenerate_sides)}"
            )
    return surface


def save_geometry(surface: MultipatchSurface, path) -> None:
    Path(path).write_text(json.dumps(surface_to_dict(surface), indent=1))


def load_geometry(path, watertight_tol: float = 1e-8) -> MultipatchSurface:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return surface_from_dict(data, watertight_tol)
