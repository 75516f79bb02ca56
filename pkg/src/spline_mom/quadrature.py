"""Gauss rules, singular Sauter-Schwab rules and element-pair classification.

Pair rules live on ``[0,1]^2 x [0,1]^2`` and return nodes ``(x1, x2, y1, y2)``
in canonical position:

* coincident: both points on the same square,
* edge adjacent: the shared edge is ``x2 = 0`` and ``y2 = 0`` with
  ``x1 = y1`` identifying the same physical point,
* vertex adjacent: the shared vertex is the origin of both squares.

``classify_pair`` returns the square symmetries that carry the canonical
configuration onto the actual element-local coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import AssemblyError
from .geometry import MeshElement, MultipatchSurface

__all__ = [
    "QuadratureRule",
    "PairKind",
    "PairClass",
    "gauss_rule",
    "gauss_legendre",
    "sauter_schwab_rule",
    "classify_pair",
    "element_rule",
    "upgrade_for_degeneracy",
    "square_map",
    "QuadratureOptions",
]


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size


class PairKind(str, Enum):
    COINCIDENT = "coincident"
    EDGE = "edge_adjacent"
    VERTEX = "vertex_adjacent"
    NEAR = "regular_near"
    FAR = "regular_far"


@dataclass(frozen=True)
class PairClass:
    kind: PairKind
    map_a: int = 0
    map_b: int = 0
    degenerate: bool = False

    @property
    def singular(self) -> bool:
        return self.kind in (PairKind.COINCIDENT, PairKind.EDGE, PairKind.VERTEX)


@dataclass(frozen=True)
class QuadratureOptions:
    """Assembly quadrature settings.

    ``order`` is the number of Gauss points per direction for regular pairs
    (``None`` means degree + 2); ``singular_order`` the base order of the
    singular rules (``None`` means ``order``).
    """

    order: int | None = None
    singular_order: int | None = None
    near_threshold: float = 1.5
    near_depth: int = 1
    degenerate_upgrade: int = 3
    degenerate_extra: int = 2

    def resolve(self, degree: int) -> "QuadratureOptions":
        n = self.order if self.order is not None else degree + 2
        ns = self.singular_order if self.singular_order is not None else n
        return QuadratureOptions(n, ns, self.near_threshold, self.near_depth,
                                 self.degenerate_upgrade, self.degenerate_extra)


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if n < 1:
        raise ValueError("quadrature order must be at least 1")
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_rule(n: int, dim: int = 2) -> QuadratureRule:
    """Tensor Gauss-Legendre rule with ``n`` points per direction on [0,1]^dim."""
    x, w = gauss_legendre(n)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return QuadratureRule(pts, wts)


def _graded_1d(n: int, factor: int, toward: int, ratio: float = 0.15):
    """Composite Gauss rule on [0,1] with ``factor`` geometrically graded
    sub-intervals accumulating at ``toward`` (0 or 1)."""
    x, w = gauss_legendre(n)
    if factor <= 1:
        return np.array(x), np.array(w)
    br = np.r_[0.0, ratio ** np.arange(factor - 1, 0, -1), 1.0]
    pts = np.concatenate([a + (b - a) * x for a, b in zip(br[:-1], br[1:])])
    wts = np.concatenate([(b - a) * w for a, b in zip(br[:-1], br[1:])])
    if toward == 1:
        pts = 1.0 - pts[::-1]
        wts = wts[::-1]
    return pts, wts


def _uniform_1d(n: int, pieces: int):
    x, w = gauss_legendre(n)
    br = np.linspace(0.0, 1.0, pieces + 1)
    pts = np.concatenate([a + (b - a) * x for a, b in zip(br[:-1], br[1:])])
    wts = np.concatenate([(b - a) * w for a, b in zip(br[:-1], br[1:])])
    return pts, wts


def element_rule(n: int, elem: MeshElement | None = None, factor: int = 1,
                 pieces: int = 1) -> QuadratureRule:
    """Single-element rule, optionally subdivided and graded toward
    collapsed sides of ``elem``."""
    du = dv = None
    if elem is not None and factor > 1:
        for side in elem.degenerate_sides:
            if side == 0:
                dv = 0
            elif side == 2:
                dv = 1
            elif side == 1:
                du = 1
            elif side == 3:
                du = 0
    if du is None:
        xu, wu = _uniform_1d(n, pieces)
    else:
        xu, wu = _graded_1d(n, factor * pieces, du)
    if dv is None:
        xv, wv = _uniform_1d(n, pieces)
    else:
        xv, wv = _graded_1d(n, factor * pieces, dv)
    U, V = np.meshgrid(xu, xv, indexing="ij")
    W = np.outer(wu, wv)
    return QuadratureRule(np.stack([U.ravel(), V.ravel()], axis=1), W.ravel())


def upgrade_for_degeneracy(n: int, elem: MeshElement, factor: int = 3) -> QuadratureRule:
    """Base rule of order ``n``, graded toward any collapsed side of ``elem``.

    Non-degenerate elements get the plain tensor Gauss rule.
    """
    return element_rule(n, elem, factor if elem.degenerate_sides else 1)


# -- square symmetries ------------------------------------------------------

_D4 = (
    lambda u, v: (u, v),
    lambda u, v: (1 - u, v),
    lambda u, v: (u, 1 - v),
    lambda u, v: (1 - u, 1 - v),
    lambda u, v: (v, u),
    lambda u, v: (1 - v, u),
    lambda u, v: (v, 1 - u),
    lambda u, v: (1 - v, 1 - u),
)

_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def square_map(index: int, u, v):
    """Apply the square symmetry ``index`` (0..7) to local coordinates."""
    return _D4[index](u, v)


def _map_for(origin: int, along: int) -> int:
    """Symmetry sending canonical (0,0) to corner ``origin`` and (1,0) to
    corner ``along``."""
    o, a = _CORNERS[origin], _CORNERS[along]
    for k, f in enumerate(_D4):
        if np.allclose(f(0.0, 0.0), o) and np.allclose(f(1.0, 0.0), a):
            return k
    raise AssertionError("corners are not adjacent")


# -- Sauter-Schwab rules ------------------------------------------------------

def _rel_branches(z, w):
    """Relative-coordinate branches on one dimension: returns list of (x, y)."""
    return [(z + (1 - z) * w, (1 - z) * w), ((1 - z) * w, z + (1 - z) * w)]


@lru_cache(maxsize=None)
def _sauter_schwab(kind: str, n: int) -> QuadratureRule:
    g = gauss_rule(n, 4)
    r, a, b, c = g.points.T
    w0 = g.weights
    pts, wts = [], []
    if kind == PairKind.COINCIDENT.value:
        # (z1, z2) by Duffy on two triangles; (w1, w2) free
        for z1, z2 in ((r, r * a), (r * a, r)):
            jac = r
            for x1, y1 in _rel_branches(z1, b):
                for x2, y2 in _rel_branches(z2, c):
                    pts.append(np.stack([x1, x2, y1, y2], axis=1))
                    wts.append(w0 * jac * (1 - z1) * (1 - z2))
    elif kind == PairKind.EDGE.value:
        # (z, x2, y2) singular at the origin: Duffy over three pyramids
        for z, x2, y2 in ((r, r * a, r * b), (r * a, r, r * b), (r * a, r * b, r)):
            jac = r * r
            for x1, y1 in _rel_branches(z, c):
                pts.append(np.stack([x1, x2, y1, y2], axis=1))
                wts.append(w0 * jac * (1 - z))
    elif kind == PairKind.VERTEX.value:
        q = [r, r * a, r * b, r * c]
        for k in range(4):
            order = q[1:k + 1] + [q[0]] + q[k + 1:]
            pts.append(np.stack(order, axis=1))
            wts.append(w0 * r ** 3)
    else:
        raise AssemblyError(f"no singular rule for pair kind {kind!r}; use tensor Gauss")
    P = np.concatenate(pts)
    W = np.concatenate(wts)
    P.setflags(write=False)
    W.setflags(write=False)
    return QuadratureRule(P, W)


def sauter_schwab_rule(kind, n: int) -> QuadratureRule:
    """Singular pair rule for a coincident, edge- or vertex-adjacent pair.

    Node counts are ``8 n^4``, ``6 n^4`` and ``4 n^4`` respectively; the
    weights sum to one.
    """
    kind = PairKind(kind)
    return _sauter_schwab(kind.value, int(n))


# -- classification -----------------------------------------------------------

_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))


def _distance_ratio(surface: MultipatchSurface, a: int, b: int) -> float:
    sa, sb = surface.element_samples[a], surface.element_samples[b]
    d = np.sqrt(((sa[:, None, :] - sb[None, :, :]) ** 2).sum(-1)).min()
    diam = max(surface.element_diameters[a], surface.element_diameters[b])
    return float(d / diam)


def classify_pair(surface: MultipatchSurface, ea: MeshElement, eb: MeshElement,
                  near_threshold: float = 1.5) -> PairClass:
    """Adjacency class of an element pair from the mesh topology.

    Pairs that meet only at a collapsed tip are treated as near pairs with
    graded quadrature, flagged ``degenerate``.
    """
    if ea.index == eb.index:
        return PairClass(PairKind.COINCIDENT, 0, 0, bool(ea.degenerate_sides))
    ca, cb = ea.corners, eb.corners
    shared = set(ca) & set(cb)
    degenerate = bool(ea.degenerate_sides or eb.degenerate_sides)
    if len(shared) >= 2:
        for ia, ja in _EDGES:
            if ca[ia] == ca[ja] or {ca[ia], ca[ja]} - shared:
                continue
            for ib, jb in _EDGES:
                if {cb[ib], cb[jb]} == {ca[ia], ca[ja]} and cb[ib] != cb[jb]:
                    ma = _map_for(ia, ja)
                    mb = _map_for(ib, jb) if cb[ib] == ca[ia] else _map_for(jb, ib)
                    return PairClass(PairKind.EDGE, ma, mb, degenerate)
    if shared:
        tips = _tip_vertices(surface)
        regular = [v for v in shared if v not in tips]
        if regular:
            v = min(regular)
            ia, ib = ca.index(v), cb.index(v)
            ma = _map_for(ia, (ia + 1) % 4)
            mb = _map_for(ib, (ib + 1) % 4)
            return PairClass(PairKind.VERTEX, ma, mb, degenerate)
        return PairClass(PairKind.NEAR, 0, 0, True)
    ratio = _distance_ratio(surface, ea.index, eb.index)
    if ratio < near_threshold:
        return PairClass(PairKind.NEAR, 0, 0, degenerate)
    return PairClass(PairKind.FAR, 0, 0, degenerate)


def _tip_vertices(surface: MultipatchSurface) -> frozenset:
    cache = getattr(surface, "_tip_cache", None)
    if cache is None:
        tips = set()
        for el in surface.elements:
            c = el.corners
            for i, j in _EDGES:
                if c[i] == c[j]:
                    tips.add(c[i])
        cache = frozenset(tips)
        surface._tip_cache = cache
    return cache


def near_pairs(surface: MultipatchSurface, near_threshold: float = 1.5):
    """All unordered element pairs ``(a, b, PairClass)`` with ``a <= b`` that
    are not regular-far."""
    boxes = surface.element_boxes
    diam = surface.element_diameters
    n = surface.n_elements
    lo, hi = boxes[:, 0], boxes[:, 1]
    gap = np.maximum(0.0, np.maximum(lo[:, None, :] - hi[None, :, :], lo[None, :, :] - hi[:, None, :]))
    box_dist = np.sqrt((gap ** 2).sum(-1))
    dmax = np.maximum(diam[:, None], diam[None, :])
    corners = [set(el.corners) for el in surface.elements]
    out = []
    elems = surface.elements
    for a in range(n):
        cand = np.nonzero(box_dist[a, a:] < near_threshold * dmax[a, a:])[0] + a
        for b in cand:
            if b != a and not (corners[a] & corners[b]):
                if _distance_ratio(surface, a, int(b)) >= near_threshold:
                    continue
            pc = classify_pair(surface, elems[a], elems[int(b)], near_threshold)
            if pc.kind != PairKind.FAR:
                out.append((a, int(b), pc))
    return out
