"""NURBS patches, surface differential geometry and multipatch surfaces.

Patch sides are numbered counter-clockwise in the parametric square::

    side 0: t = 0      side 1: s = 1      side 2: t = 1      side 3: s = 0

Along sides 0 and 2 the edge parameter is ``s``, along sides 1 and 3 it is
``t``; both run from 0 to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import CompatibilityError, DomainError, GeometryError, WatertightnessError
from .spline import KnotVector, TensorSpace, bernstein, bezier_extract, insert_knots

__all__ = [
    "NurbsPatch",
    "SurfaceFrame",
    "ParametricMesh",
    "build_parametric_mesh",
    "Edge",
    "MeshElement",
    "MultipatchSurface",
    "assemble_multipatch",
    "match_edges",
    "side_param",
    "DEGENERATE_TOL",
]

DEGENERATE_TOL = 1e-12
_COINCIDENT_TOL = 1e-10


def side_param(side: int, tau):
    """Parametric coordinates of edge parameter ``tau`` on a patch side."""
    tau = np.asarray(tau, dtype=float)
    zero = np.zeros_like(tau)
    one = np.ones_like(tau)
    return {
        0: (tau, zero),
        1: (one, tau),
        2: (tau, one),
        3: (zero, tau),
    }[side]


@dataclass(frozen=True)
class SurfaceFrame:
    """Differential geometry at a batch of parameter points.

    ``jacobian`` has shape ``(M, 3, 2)``; ``pseudoinverse`` is NaN where the
    frame is degenerate.
    """

    point: np.ndarray
    jacobian: np.ndarray
    surface_element: np.ndarray
    unit_normal: np.ndarray
    pseudoinverse: np.ndarray
    degenerate: np.ndarray


def _frame_from_jacobian(x, jac, scale2):
    a1 = jac[..., 0]
    a2 = jac[..., 1]
    cross = np.cross(a1, a2)
    J = np.sqrt(
        (a1[..., 1] * a2[..., 2] - a1[..., 2] * a2[..., 1]) ** 2
        + (a1[..., 2] * a2[..., 0] - a1[..., 0] * a2[..., 2]) ** 2
        + (a1[..., 0] * a2[..., 1] - a1[..., 1] * a2[..., 0]) ** 2
    )
    degenerate = J < DEGENERATE_TOL * scale2
    Jsafe = np.where(degenerate, 1.0, J)
    normal = cross / Jsafe[..., None]
    normal[degenerate] = np.nan
    gram = np.einsum("...ki,...kj->...ij", jac, jac)
    gram[degenerate] = np.eye(2)
    pinv = np.linalg.solve(gram, np.swapaxes(jac, -1, -2))
    pinv[degenerate] = np.nan
    return SurfaceFrame(x, jac, J, normal, pinv, degenerate)


class NurbsPatch:
    """Tensor-product NURBS surface patch.

    Parameters
    ----------
    kv_s, kv_t : KnotVector
        Knot vectors in the first and second parametric direction.
    control : ndarray, shape (n, m, 4)
        Homogeneous control points ``(x w, y w, z w, w)`` indexed ``[i, j]``.
    """

    def __init__(self, kv_s: KnotVector, kv_t: KnotVector, control):
        control = np.array(control, dtype=float)
        if control.shape != (kv_s.n, kv_t.n, 4):
            raise GeometryError(
                f"control net shape {control.shape} does not match "
                f"{(kv_s.n, kv_t.n, 4)}"
            )
        if np.any(control[..., 3] <= 0):
            raise GeometryError("NURBS weights must be positive")
        control.setflags(write=False)
        self.kv_s = kv_s
        self.kv_t = kv_t
        self.control = control

    @classmethod
    def from_points(cls, kv_s, kv_t, points, weights=None):
        points = np.asarray(points, dtype=float)
        if weights is None:
            weights = np.ones(points.shape[:2])
        weights = np.asarray(weights, dtype=float)
        return cls(kv_s, kv_t, np.concatenate([points * weights[..., None], weights[..., None]], axis=-1))

    @property
    def space(self) -> TensorSpace:
        return TensorSpace(self.kv_s, self.kv_t)

    @property
    def degrees(self) -> tuple[int, int]:
        return self.kv_s.degree, self.kv_t.degree

    @property
    def points(self) -> np.ndarray:
        """Euclidean control points ``(n, m, 3)``."""
        return self.control[..., :3] / self.control[..., 3:]

    @property
    def weights(self) -> np.ndarray:
        return self.control[..., 3]

    def flat_control(self) -> np.ndarray:
        """Control points in linear order ``a = j * n + i``."""
        return self.control.transpose(1, 0, 2).reshape(-1, 4)

    @cached_property
    def diameter(self) -> float:
        pts = self.points.reshape(-1, 3)
        return float(np.linalg.norm(pts.max(0) - pts.min(0)))

    @cached_property
    def _bezier(self):
        ex_s = bezier_extract(self.kv_s)
        ex_t = bezier_extract(self.kv_t)
        p, q = self.degrees
        nes, net = ex_s.n_elements, ex_t.n_elements
        out = np.empty((nes, net, p + 1, q + 1, 4))
        for ie in range(nes):
            i0 = ex_s.first_basis(ie, p)
            Cs = ex_s.operators[ie]
            for je in range(net):
                j0 = ex_t.first_basis(je, q)
                Ct = ex_t.operators[je]
                local = self.control[i0: i0 + p + 1, j0: j0 + q + 1]
                out[ie, je] = np.einsum("ik,jl,ijc->klc", Cs, Ct, local)
        return out

    @property
    def bezier_control(self) -> np.ndarray:
        """Homogeneous Bezier control nets ``(ne_s, ne_t, p+1, q+1, 4)``."""
        return self._bezier

    @property
    def breaks_s(self):
        return self.kv_s.breaks

    @property
    def breaks_t(self):
        return self.kv_t.breaks

    def locate(self, s, t):
        """Element indices and local coordinates of parameter points."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any((s < 0) | (s > 1) | (t < 0) | (t > 1)):
            raise DomainError("parameters must lie in [0, 1]^2")
        bs, bt = self.breaks_s, self.breaks_t
        ie = np.clip(np.searchsorted(bs, s, side="right") - 1, 0, bs.size - 2)
        je = np.clip(np.searchsorted(bt, t, side="right") - 1, 0, bt.size - 2)
        u = (s - bs[ie]) / (bs[ie + 1] - bs[ie])
        v = (t - bt[je]) / (bt[je + 1] - bt[je])
        return ie, je, u, v

    def element_eval(self, ie, je, u, v, derivatives: bool = True):
        """Point and patch-parameter Jacobian at local coordinates of elements.

        ``ie``, ``je`` may be scalars or arrays matching ``u``.  Returns
        ``x (M, 3)`` and, if requested, ``jac (M, 3, 2)`` with derivatives
        taken with respect to the patch parameters ``(s, t)``.
        """
        u = np.atleast_1d(np.asarray(u, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        p, q = self.degrees
        Bu = bernstein(p, u, 1)
        Bv = bernstein(q, v, 1)
        ctrl = self._bezier[ie, je]
        if ctrl.ndim == 3:
            A = np.einsum("mi,mj,ijc->mc", Bu[0], Bv[0], ctrl)
        else:
            A = np.einsum("mi,mj,mijc->mc", Bu[0], Bv[0], ctrl)
        w = A[:, 3:]
        x = A[:, :3] / w
        if not derivatives:
            return x, None
        if ctrl.ndim == 3:
            Au = np.einsum("mi,mj,ijc->mc", Bu[1], Bv[0], ctrl)
            Av = np.einsum("mi,mj,ijc->mc", Bu[0], Bv[1], ctrl)
        else:
            Au = np.einsum("mi,mj,mijc->mc", Bu[1], Bv[0], ctrl)
            Av = np.einsum("mi,mj,mijc->mc", Bu[0], Bv[1], ctrl)
        bs, bt = self.breaks_s, self.breaks_t
        ie = np.broadcast_to(ie, u.shape)
        je = np.broadcast_to(je, u.shape)
        hs = (bs[ie + 1] - bs[ie])[:, None]
        ht = (bt[je + 1] - bt[je])[:, None]
        xs = (Au[:, :3] - x * Au[:, 3:]) / w / hs
        xt = (Av[:, :3] - x * Av[:, 3:]) / w / ht
        return x, np.stack([xs, xt], axis=-1)

    def map_point(self, s, t) -> np.ndarray:
        """Physical point(s) ``F(s, t)``."""
        scalar = np.ndim(s) == 0 and np.ndim(t) == 0
        ie, je, u, v = self.locate(s, t)
        x, _ = self.element_eval(ie, je, u, v, derivatives=False)
        return x[0] if scalar else x

    def surface_frame(self, s, t) -> SurfaceFrame:
        ie, je, u, v = self.locate(s, t)
        x, jac = self.element_eval(ie, je, u, v)
        return _frame_from_jacobian(x, jac, self.diameter ** 2)

    def refine(self, new_s=(), new_t=()) -> "NurbsPatch":
        """Insert knots in either direction; the surface is unchanged."""
        kv_s, Ts = insert_knots(self.kv_s, new_s)
        kv_t, Tt = insert_knots(self.kv_t, new_t)
        control = np.einsum("ai,bj,ijc->abc", Ts, Tt, self.control)
        return NurbsPatch(kv_s, kv_t, control)

    def side_control(self, side: int) -> np.ndarray:
        """Homogeneous control points along a side, in edge-parameter order."""
        c = self.control
        return {0: c[:, 0], 1: c[-1, :], 2: c[:, -1], 3: c[0, :]}[side]

    def side_knots(self, side: int) -> KnotVector:
        return self.kv_s if side in (0, 2) else self.kv_t

    def side_is_degenerate(self, side: int) -> bool:
        pts = self.side_control(side)
        pts = pts[:, :3] / pts[:, 3:]
        spread = np.linalg.norm(pts - pts[0], axis=1).max()
        return bool(spread <= _COINCIDENT_TOL * max(self.diameter, 1.0))

    def __repr__(self):
        return f"NurbsPatch(degrees={self.degrees}, n={self.kv_s.n}x{self.kv_t.n})"


@dataclass(frozen=True)
class ParametricMesh:
    """Elements ``(s0, s1) x (t0, t1)`` of one patch, ordered ``j * n + i``."""

    breaks_s: np.ndarray
    breaks_t: np.ndarray

    @property
    def n_elements(self) -> int:
        return (self.breaks_s.size - 1) * (self.breaks_t.size - 1)

    @property
    def elements(self) -> np.ndarray:
        bs, bt = self.breaks_s, self.breaks_t
        S0, T0 = np.meshgrid(bs[:-1], bt[:-1])
        S1, T1 = np.meshgrid(bs[1:], bt[1:])
        return np.stack([S0.ravel(), S1.ravel(), T0.ravel(), T1.ravel()], axis=1)


def build_parametric_mesh(space: TensorSpace) -> ParametricMesh:
    return ParametricMesh(space.space_s.breaks, space.space_t.breaks)


@dataclass(frozen=True)
class Edge:
    """A shared edge between ``patch_a``/``side_a`` and ``patch_b``/``side_b``.

    ``reversed`` is true when the edge parameter of side b runs opposite to
    that of side a.
    """

    patch_a: int
    side_a: int
    patch_b: int
    side_b: int
    reversed: bool = False


@dataclass(frozen=True)
class MeshElement:
    index: int
    patch: int
    ie: int
    je: int
    s0: float
    s1: float
    t0: float
    t1: float
    corners: tuple
    degenerate_sides: tuple = ()


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb

    def labels(self):
        roots = np.array([self.find(i) for i in range(self.parent.size)])
        _, lab = np.unique(roots, return_inverse=True)
        return lab


def _side_nodes(ns: int, nt: int, side: int) -> np.ndarray:
    """Grid-node linear indices ``j * (ns + 1) + i`` along a side."""
    if side == 0:
        return np.arange(ns + 1)
    if side == 2:
        return nt * (ns + 1) + np.arange(ns + 1)
    if side == 3:
        return np.arange(nt + 1) * (ns + 1)
    return np.arange(nt + 1) * (ns + 1) + ns


class MultipatchSurface:
    """Watertight collection of NURBS patches with explicit edge table.

    Parameters
    ----------
    patches : sequence of NurbsPatch
    edges : sequence of Edge
        Every interior edge of the surface exactly once.
    check : bool
        Validate knot compatibility and watertightness on construction.
    """

    def __init__(self, patches, edges, check: bool = True, watertight_tol: float = 1e-8):
        self.patches = tuple(patches)
        self.edges = tuple(edges)
        self.watertight_tol = watertight_tol
        self.degenerate_sides = tuple(
            (ip, side)
            for ip, patch in enumerate(self.patches)
            for side in range(4)
            if patch.side_is_degenerate(side)
        )
        if check:
            self.check_compatibility()
            self.check_watertight()

    # -- validation ---------------------------------------------------------
    def check_compatibility(self):
        seen = set()
        for e in self.edges:
            for key in ((e.patch_a, e.side_a), (e.patch_b, e.side_b)):
                if key in seen:
                    raise CompatibilityError(f"patch side {key} appears in two edges")
                seen.add(key)
            ka = self.patches[e.patch_a].side_knots(e.side_a).knots
            kb = self.patches[e.patch_b].side_knots(e.side_b).knots
            if e.reversed:
                kb = 1.0 - kb[::-1]
            if ka.shape != kb.shape or np.abs(ka - kb).max() > 1e-12:
                raise CompatibilityError(
                    f"knot vectors differ on edge {e}: {ka.tolist()} vs {kb.tolist()}"
                )

    def edge_mismatch(self, edge: Edge, n_samples: int = 50) -> float:
        tau = np.linspace(0.0, 1.0, n_samples)
        pa = self.patches[edge.patch_a].map_point(*side_param(edge.side_a, tau))
        tb = 1.0 - tau if edge.reversed else tau
        pb = self.patches[edge.patch_b].map_point(*side_param(edge.side_b, tb))
        return float(np.linalg.norm(pa - pb, axis=1).max())

    def check_watertight(self, n_samples: int = 50):
        for e in self.edges:
            err = self.edge_mismatch(e, n_samples)
            if err > self.watertight_tol:
                raise WatertightnessError(f"edge {e} is not watertight (gap {err:.3e})")

    # -- topology -----------------------------------------------------------
    @property
    def n_patches(self) -> int:
        return len(self.patches)

    @cached_property
    def geometry_connectivity(self):
        """Global geometry index of every control point, ``C_g[i][a]``.

        Coincident control points are collapsed into one index, which also
        merges the many control points of a degenerate tip.
        """
        flat = [p.flat_control() for p in self.patches]
        pts = np.concatenate([f[:, :3] / f[:, 3:] for f in flat])
        scale = max(p.diameter for p in self.patches)
        uf = _UnionFind(pts.shape[0])
        for a, b in cKDTree(pts).query_pairs(_COINCIDENT_TOL * max(scale, 1.0)):
            uf.union(a, b)
        labels = uf.labels()
        out, start = [], 0
        for f in flat:
            out.append(labels[start: start + f.shape[0]])
            start += f.shape[0]
        return out

    @property
    def n_geometry(self) -> int:
        return int(max(c.max() for c in self.geometry_connectivity) + 1)

    @cached_property
    def degenerate_points(self) -> np.ndarray:
        pts = []
        for ip, side in self.degenerate_sides:
            c = self.patches[ip].side_control(side)[0]
            pts.append(c[:3] / c[3])
        if not pts:
            return np.zeros((0, 3))
        pts = np.array(pts)
        keep = []
        for x in pts:
            if not any(np.linalg.norm(x - y) < 1e-9 for y in keep):
                keep.append(x)
        return np.array(keep)

    @cached_property
    def _vertex_topology(self):
        shapes = []
        offsets = [0]
        for p in self.patches:
            ns, nt = p.kv_s.n_elements, p.kv_t.n_elements
            shapes.append((ns, nt))
            offsets.append(offsets[-1] + (ns + 1) * (nt + 1))
        uf = _UnionFind(offsets[-1])
        for e in self.edges:
            na = offsets[e.patch_a] + _side_nodes(*shapes[e.patch_a], e.side_a)
            nb = offsets[e.patch_b] + _side_nodes(*shapes[e.patch_b], e.side_b)
            if e.reversed:
                nb = nb[::-1]
            if na.size != nb.size:
                raise CompatibilityError(f"element counts differ along edge {e}")
            for a, b in zip(na, nb):
                uf.union(a, b)
        for ip, side in self.degenerate_sides:
            nodes = offsets[ip] + _side_nodes(*shapes[ip], side)
            for a in nodes[1:]:
                uf.union(nodes[0], a)
        return uf.labels(), offsets, shapes

    @property
    def n_vertices(self) -> int:
        return int(self._vertex_topology[0].max() + 1)

    @cached_property
    def elements(self) -> tuple:
        labels, offsets, shapes = self._vertex_topology
        degenerate = set(self.degenerate_sides)
        out = []
        for ip, p in enumerate(self.patches):
            ns, nt = shapes[ip]
            bs, bt = p.breaks_s, p.breaks_t
            for je in range(nt):
                for ie in range(ns):
                    node = lambda i, j: labels[offsets[ip] + j * (ns + 1) + i]
                    corners = (node(ie, je), node(ie + 1, je), node(ie + 1, je + 1), node(ie, je + 1))
                    dsides = []
                    if je == 0 and (ip, 0) in degenerate:
                        dsides.append(0)
                    if ie == ns - 1 and (ip, 1) in degenerate:
                        dsides.append(1)
                    if je == nt - 1 and (ip, 2) in degenerate:
                        dsides.append(2)
                    if ie == 0 and (ip, 3) in degenerate:
                        dsides.append(3)
                    out.append(
                        MeshElement(
                            len(out), ip, ie, je, bs[ie], bs[ie + 1], bt[je], bt[je + 1],
                            tuple(int(c) for c in corners), tuple(dsides),
                        )
                    )
        return tuple(out)

    @property
    def n_elements(self) -> int:
        return sum(p.kv_s.n_elements * p.kv_t.n_elements for p in self.patches)

    def element_eval(self, elem: MeshElement, u, v, derivatives=True):
        return self.patches[elem.patch].element_eval(elem.ie, elem.je, u, v, derivatives)

    @cached_property
    def element_boxes(self) -> np.ndarray:
        """Axis-aligned box ``(n_el, 2, 3)`` of every element (Bezier hull)."""
        boxes = np.empty((self.n_elements, 2, 3))
        for el in self.elements:
            net = self.patches[el.patch].bezier_control[el.ie, el.je].reshape(-1, 4)
            pts = net[:, :3] / net[:, 3:]
            boxes[el.index, 0] = pts.min(0)
            boxes[el.index, 1] = pts.max(0)
        return boxes

    @cached_property
    def element_samples(self) -> np.ndarray:
        """5 x 5 grid of surface points per element ``(n_el, 25, 3)``."""
        g = np.linspace(0.0, 1.0, 5)
        U, V = np.meshgrid(g, g)
        out = np.empty((self.n_elements, 25, 3))
        for el in self.elements:
            out[el.index] = self.element_eval(el, U.ravel(), V.ravel(), derivatives=False)[0]
        return out

    @cached_property
    def element_diameters(self) -> np.ndarray:
        s = self.element_samples
        d = np.linalg.norm(s[:, :, None, :] - s[:, None, :, :], axis=-1)
        return d.max(axis=(1, 2))

    @property
    def diameter(self) -> float:
        b = self.element_boxes
        return float(np.linalg.norm(b[:, 1].max(0) - b[:, 0].min(0)))

    # -- refinement ---------------------------------------------------------
    def refine(self, levels: int = 1) -> "MultipatchSurface":
        """Uniform h-refinement: bisect every element ``levels`` times."""
        patches = list(self.patches)
        for _ in range(levels):
            new = []
            for p in patches:
                bs, bt = p.breaks_s, p.breaks_t
                new.append(p.refine(0.5 * (bs[1:] + bs[:-1]), 0.5 * (bt[1:] + bt[:-1])))
            patches = new
        return MultipatchSurface(patches, self.edges, check=False, watertight_tol=self.watertight_tol)

    def __repr__(self):
        return (
            f"MultipatchSurface({self.n_patches} patches, {self.n_elements} elements, "
            f"{len(self.edges)} edges, {len(self.degenerate_sides)} degenerate sides)"
        )


def assemble_multipatch(patches, edges, watertight_tol: float = 1e-8) -> MultipatchSurface:
    return MultipatchSurface(patches, edges, check=True, watertight_tol=watertight_tol)


def match_edges(patches, tol: float = 1e-9, n_samples: int = 11) -> list:
    """Find shared edges geometrically (used for the built-in models only)."""
    tau = np.linspace(0.0, 1.0, n_samples)
    curves = {}
    for ip, p in enumerate(patches):
        for side in range(4):
            if p.side_is_degenerate(side):
                continue
            curves[(ip, side)] = p.map_point(*side_param(side, tau))
    keys = sorted(curves)
    used = set()
    edges = []
    for ka in keys:
        if ka in used:
            continue
        for kb in keys:
            if kb <= ka or kb in used or kb[0] == ka[0] and kb[1] == ka[1]:
                continue
            ca, cb = curves[ka], curves[kb]
            if np.abs(ca - cb).max() < tol:
                rev = False
            elif np.abs(ca - cb[::-1]).max() < tol:
                rev = True
            else:
                continue
            edges.append(Edge(ka[0], ka[1], kb[0], kb[1], rev))
            used.update((ka, kb))
            break
    return edges
