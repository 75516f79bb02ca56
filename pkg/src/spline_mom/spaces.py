"""Div- and curl-conforming B-spline spaces on multipatch surfaces.

A space of degree ``(p, q)`` has two parametric vector components per patch:

* component 1, ``B(s, t) e_s`` with ``B`` in the spline space of degrees
  ``(p, q - 1)``,
* component 2, ``B(s, t) e_t`` with degrees ``(p - 1, q)``.

The div-conforming functions are the contravariant Piola images
``N = DF v / J``; the curl-conforming functions are ``n x N``, which equals
the covariant Piola image of the rotated parametric field.  Both spaces share
indices, connectivity and signs, so ``N_div = -n x N_curl`` holds function by
function.

Local DOFs are numbered component 1 first, each as ``a = j * n + i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SpaceError
from .geometry import MeshElement, MultipatchSurface
from .spline import KnotVector, bernstein, bezier_extract

__all__ = [
    "ConformingSpace",
    "ElementBasis",
    "VectorBasisEvaluation",
    "build_conforming_space",
    "eval_div_basis",
    "eval_curl_basis",
    "evaluate_field",
    "parse_degree_pair",
]

# outward direction of the parametric normal on each side
_SIDE_SIGN = {0: -1, 1: 1, 2: 1, 3: -1}


def parse_degree_pair(text) -> tuple[int, int]:
    """Degrees of the full space from the first-component pair ``"p,q-1"``.

    ``"1,0"`` denotes the lowest-order space ``(1,0) x (0,1)``.
    """
    if isinstance(text, str):
        parts = [int(v) for v in text.replace("x", ",").split(",")[:2]]
    else:
        parts = [int(v) for v in text]
    p, q1 = parts
    return p, q1 + 1


@dataclass(frozen=True)
class _PatchSpace:
    kv: tuple  # ((kv_s, kv_t) of component 1, (kv_s, kv_t) of component 2)
    counts: tuple  # (n_b1, n_b2)
    shapes: tuple  # ((n1, m1), (n2, m2))
    extraction: tuple  # same layout as kv


@dataclass
class ElementBasis:
    """Active basis functions of one element evaluated at local points.

    ``values`` has shape ``(M, n_active, 3)`` and already includes the DOF
    signs; ``div`` is the signed surface divergence (div spaces only).
    """

    element: MeshElement
    dofs: np.ndarray
    signs: np.ndarray
    point: np.ndarray
    surface_element: np.ndarray
    normal: np.ndarray
    values: np.ndarray
    div: np.ndarray | None


# public alias matching the domain vocabulary
VectorBasisEvaluation = ElementBasis


class ConformingSpace:
    """Global div- or curl-conforming space over a multipatch surface.

    Parameters
    ----------
    surface : MultipatchSurface
    kind : {"div", "curl"}
    degrees : (int, int)
        ``(p, q)``; component spaces have degrees ``(p, q-1)`` and
        ``(p-1, q)``.
    drop_degenerate : bool
        Remove the normal-component functions attached to collapsed patch
        sides.  Their Piola images are not square integrable at the tip.
    """

    def __init__(self, surface: MultipatchSurface, kind: str = "div", degrees=(1, 1),
                 drop_degenerate: bool = True):
        if kind not in ("div", "curl"):
            raise SpaceError(f"unknown space kind {kind!r}")
        p, q = (int(d) for d in degrees)
        if p < 1 or q < 1:
            raise SpaceError(f"degrees must be at least 1, got {(p, q)}")
        self.surface = surface
        self.kind = kind
        self.degrees = (p, q)
        self.drop_degenerate = drop_degenerate
        self.patch_spaces = tuple(self._patch_space(patch) for patch in surface.patches)
        self._build_connectivity()

    # -- construction -------------------------------------------------------
    def _patch_space(self, patch) -> _PatchSpace:
        p, q = self.degrees
        bs, bt = patch.breaks_s, patch.breaks_t
        s_hi, s_lo = KnotVector.from_breaks(bs, p), KnotVector.from_breaks(bs, p - 1)
        t_hi, t_lo = KnotVector.from_breaks(bt, q), KnotVector.from_breaks(bt, q - 1)
        kv = ((s_hi, t_lo), (s_lo, t_hi))
        shapes = tuple((a.n, b.n) for a, b in kv)
        counts = tuple(n * m for n, m in shapes)
        ex = {}
        extraction = tuple(
            tuple(ex.setdefault(id(k), bezier_extract(k)) for k in pair) for pair in kv
        )
        return _PatchSpace(kv, counts, shapes, extraction)

    def _side_dofs(self, ip: int, side: int) -> np.ndarray:
        """Local indices of the normal-component functions on a side, in
        edge-parameter order."""
        ps = self.patch_spaces[ip]
        if side in (1, 3):
            n, m = ps.shapes[0]
            i = n - 1 if side == 1 else 0
            return np.arange(m) * n + i
        n, m = ps.shapes[1]
        j = m - 1 if side == 2 else 0
        return ps.counts[0] + j * n + np.arange(n)

    def _build_connectivity(self):
        surf = self.surface
        n_local = [sum(ps.counts) for ps in self.patch_spaces]
        glob = [np.full(n, -2, dtype=np.int64) for n in n_local]
        sign = [np.ones(n, dtype=np.int8) for n in n_local]
        links = []
        for e in surf.edges:
            a, b = (e.patch_a, e.side_a), (e.patch_b, e.side_b)
            if b[0] < a[0]:
                a, b = b, a
            da, db = self._side_dofs(*a), self._side_dofs(*b)
            if da.size != db.size:
                raise SpaceError(f"incompatible edge discretisations on {e}")
            if e.reversed:
                db = db[::-1]
            s = -_SIDE_SIGN[a[1]] * _SIDE_SIGN[b[1]]
            for la, lb in zip(da, db):
                glob[b[0]][lb] = -3
                links.append((a[0], la, b[0], lb, s))
        if self.drop_degenerate:
            for ip, side in surf.degenerate_sides:
                glob[ip][self._side_dofs(ip, side)] = -1
                sign[ip][self._side_dofs(ip, side)] = 0
        counter = 0
        for g in glob:
            owned = g == -2
            g[owned] = np.arange(counter, counter + owned.sum())
            counter += int(owned.sum())
        for pa, la, pb, lb, s in links:
            if glob[pa][la] < 0:
                raise SpaceError("shared-edge function attached to a degenerate side")
            glob[pb][lb] = glob[pa][la]
            sign[pb][lb] = s
        self.connectivity = tuple(glob)
        self.signs = tuple(sign)
        self.global_dim = counter

    # -- element level ------------------------------------------------------
    @property
    def n_local(self) -> tuple:
        return tuple(sum(ps.counts) for ps in self.patch_spaces)

    def element_dofs(self, elem: MeshElement):
        """Local indices, global indices and signs of the active functions."""
        key = elem.index
        cache = self._element_dof_cache
        if key not in cache:
            ps = self.patch_spaces[elem.patch]
            p, q = self.degrees
            local = []
            for c, ((ks, kt), (es, et)) in enumerate(zip(ps.kv, ps.extraction)):
                n = ps.shapes[c][0]
                i0 = es.first_basis(elem.ie, ks.degree)
                j0 = et.first_basis(elem.je, kt.degree)
                ii = np.arange(i0, i0 + ks.degree + 1)
                jj = np.arange(j0, j0 + kt.degree + 1)
                off = 0 if c == 0 else ps.counts[0]
                local.append((off + jj[:, None] * n + ii[None, :]).ravel())
            local = np.concatenate(local)
            g = self.connectivity[elem.patch][local]
            sg = self.signs[elem.patch][local]
            keep = g >= 0
            cache[key] = (local, g, sg.astype(float), keep)
        return cache[key]

    @cached_property
    def _element_dof_cache(self):
        return {}

    def _component_values(self, elem: MeshElement, u, v):
        """Parametric scalar values and derivatives of both components.

        Returns per component ``(B, dB)`` with ``B`` of shape ``(M, k)``
        and ``dB`` the derivative along the component direction with respect
        to the patch parameter.
        """
        ps = self.patch_spaces[elem.patch]
        hs = elem.s1 - elem.s0
        ht = elem.t1 - elem.t0
        out = []
        for c, ((ks, kt), (es, et)) in enumerate(zip(ps.kv, ps.extraction)):
            bu = bernstein(ks.degree, u, 1)
            bv = bernstein(kt.degree, v, 1)
            Cs = es.operators[elem.ie]
            Ct = et.operators[elem.je]
            Nu = bu[0] @ Cs.T
            Nv = bv[0] @ Ct.T
            if c == 0:
                dN = (bu[1] @ Cs.T) / hs
                B = (Nv[:, :, None] * Nu[:, None, :]).reshape(u.size, -1)
                dB = (Nv[:, :, None] * dN[:, None, :]).reshape(u.size, -1)
            else:
                dN = (bv[1] @ Ct.T) / ht
                B = (Nv[:, :, None] * Nu[:, None, :]).reshape(u.size, -1)
                dB = (dN[:, :, None] * Nu[:, None, :]).reshape(u.size, -1)
            out.append((B, dB))
        return out

    def element_basis(self, elem: MeshElement, u, v, kind: str | None = None) -> ElementBasis:
        """Evaluate the signed active basis functions at local coordinates.

        ``kind`` overrides the space kind (``"div"`` or ``"curl"``); both
        share the same functions up to the rotation by the normal.
        """
        kind = kind or self.kind
        u = np.atleast_1d(np.asarray(u, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        _, g, sg, keep = self.element_dofs(elem)
        x, jac = self.surface.element_eval(elem, u, v)
        cross = np.cross(jac[..., 0], jac[..., 1])
        J = np.linalg.norm(cross, axis=1)
        if np.any(J <= 0):
            raise SpaceError(f"degenerate frame inside element {elem.index}")
        normal = cross / J[:, None]
        (B1, dB1), (B2, dB2) = self._component_values(elem, u, v)
        vals = np.concatenate(
            [B1[:, :, None] * jac[:, None, :, 0], B2[:, :, None] * jac[:, None, :, 1]], axis=1
        ) / J[:, None, None]
        div = np.concatenate([dB1, dB2], axis=1) / J[:, None]
        vals = vals[:, keep] * sg[keep][None, :, None]
        div = div[:, keep] * sg[keep][None, :]
        if kind == "curl":
            vals = np.cross(normal[:, None, :], vals)
            div = None
        return ElementBasis(elem, g[keep], sg[keep], x, J, normal, vals, div)

    # -- global data ---------------------------------------------------------
    @cached_property
    def dof_bounding_boxes(self) -> np.ndarray:
        """Axis-aligned box ``(N_b, 2, 3)`` covering every DOF's support."""
        boxes = np.empty((self.global_dim, 2, 3))
        boxes[:, 0] = np.inf
        boxes[:, 1] = -np.inf
        eb = self.surface.element_boxes
        for el in self.surface.elements:
            _, g, _, keep = self.element_dofs(el)
            g = g[keep]
            np.minimum.at(boxes[:, 0], g, eb[el.index, 0])
            np.maximum.at(boxes[:, 1], g, eb[el.index, 1])
        return boxes

    @cached_property
    def dof_elements(self) -> list:
        """Element indices in the support of each DOF."""
        out = [[] for _ in range(self.global_dim)]
        for el in self.surface.elements:
            _, g, _, keep = self.element_dofs(el)
            for d in g[keep]:
                out[d].append(el.index)
        return out

    def __repr__(self):
        p, q = self.degrees
        return (
            f"ConformingSpace({self.kind}, ({p},{q - 1})x({p - 1},{q}), "
            f"N_b={self.global_dim})"
        )


def build_conforming_space(surface: MultipatchSurface, kind: str = "div", degrees=(1, 1),
                           drop_degenerate: bool = True) -> ConformingSpace:
    return ConformingSpace(surface, kind, degrees, drop_degenerate)


def eval_div_basis(space: ConformingSpace, elem: MeshElement, u, v) -> ElementBasis:
    return space.element_basis(elem, u, v, kind="div")


def eval_curl_basis(space: ConformingSpace, elem: MeshElement, u, v) -> ElementBasis:
    return space.element_basis(elem, u, v, kind="curl")


def evaluate_field(space: ConformingSpace, coefficients, patch: int, s, t,
                   kind: str | None = None, with_div: bool = False):
    """Evaluate ``sum_A c_A N_A`` at patch parameters ``(s, t)``.

    Returns the field ``(M, 3)`` and, with ``with_div``, its surface
    divergence ``(M,)``.
    """
    coefficients = np.asarray(coefficients)
    if coefficients.shape != (space.global_dim,):
        raise SpaceError(
            f"coefficient vector has shape {coefficients.shape}, expected ({space.global_dim},)"
        )
    p = space.surface.patches[patch]
    ie, je, u, v = p.locate(s, t)
    ns = p.kv_s.n_elements
    field = np.zeros((u.size, 3), dtype=np.result_type(coefficients, float))
    div = np.zeros(u.size, dtype=field.dtype)
    first = sum(
        q.kv_s.n_elements * q.kv_t.n_elements for q in space.surface.patches[:patch]
    )
    for key in np.unique(je * ns + ie):
        mask = (je * ns + ie) == key
        elem = space.surface.elements[first + int(key)]
        eb = space.element_basis(elem, u[mask], v[mask], kind=kind)
        c = coefficients[eb.dofs]
        field[mask] = np.einsum("mnc,n->mc", eb.values, c)
        if with_div and eb.div is not None:
            div[mask] = eb.div @ c
    return (field, div) if with_div else field
