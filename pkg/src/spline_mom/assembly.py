"""Helmholtz kernels and Galerkin assembly of the EFIE and MFIE systems.

Time convention is ``exp(+j omega t)``, so outgoing waves carry
``exp(-j k r)``.

Assembly works at the level of quadrature points.  Every element gets a
fixed tensor rule (graded toward collapsed tips); the regular part of the
Galerkin matrix is ``Psi G Psi^T`` where ``Psi`` maps point values to DOFs
and ``G`` is the kernel matrix between points.  Kernel entries between
elements that are adjacent or close are masked out of ``G`` and replaced by
a sparse correction computed with singular or refined pair rules.  The same
``block`` routine produces arbitrary sub-blocks for the dense path and for
the hierarchical-matrix approximation.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import AssemblyError, DomainError, MatrixFormatError, SingularEvaluationError, SolverError
from .quadrature import (
    QuadratureOptions,
    element_rule,
    near_pairs,
    sauter_schwab_rule,
    square_map,
)
from .spaces import ConformingSpace

__all__ = [
    "EPS0",
    "MU0",
    "C0",
    "ScatteringConfig",
    "greens",
    "grad_greens",
    "incident_field_E",
    "incident_field_H",
    "PointSet",
    "EfieOperator",
    "MfieOperator",
    "assemble_efie",
    "assemble_mfie",
    "solve_dense",
    "write_matrix",
    "read_matrix",
]

MU0 = 4e-7 * math.pi
C0 = 299792458.0
EPS0 = 1.0 / (MU0 * C0 ** 2)


@dataclass(frozen=True)
class ScatteringConfig:
    """Plane-wave excitation and background medium.

    Parameters
    ----------
    wavenumber : float
        ``k = omega sqrt(eps mu)``.
    polarization, direction : array_like
        Unit polarisation ``p`` and propagation direction ``d`` with
        ``p . d = 0``.
    """

    wavenumber: float
    polarization: tuple = (1.0, 0.0, 0.0)
    direction: tuple = (0.0, 0.0, 1.0)
    epsilon: float = EPS0
    mu: float = MU0

    def __post_init__(self):
        k = float(self.wavenumber)
        if not k > 0:
            raise DomainError(f"wavenumber must be positive, got {k}")
        p = np.asarray(self.polarization, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1) > 1e-12:
            raise DomainError("propagation direction must be a unit vector")
        if abs(np.linalg.norm(p) - 1) > 1e-12:
            raise DomainError("polarisation must be a unit vector")
        if abs(p @ d) > 1e-12:
            raise DomainError("polarisation must be orthogonal to the propagation direction")
        object.__setattr__(self, "wavenumber", k)
        object.__setattr__(self, "polarization", tuple(p.tolist()))
        object.__setattr__(self, "direction", tuple(d.tolist()))

    @classmethod
    def from_frequency(cls, frequency: float, polarization=(1.0, 0.0, 0.0),
                       direction=(0.0, 0.0, 1.0), epsilon: float = EPS0, mu: float = MU0):
        k = 2 * math.pi * frequency * math.sqrt(epsilon * mu)
        return cls(k, polarization, direction, epsilon, mu)

    @property
    def omega(self) -> float:
        return self.wavenumber / math.sqrt(self.epsilon * self.mu)

    @property
    def eta(self) -> float:
        return math.sqrt(self.mu / self.epsilon)

    @property
    def frequency(self) -> float:
        return self.omega / (2 * math.pi)


def greens(r, k: float):
    """Helmholtz fundamental solution ``exp(-j k r) / (4 pi r)``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise SingularEvaluationError("Green's function evaluated at zero distance")
    return np.exp(-1j * k * r) / (4 * math.pi * r)


def grad_greens(x, y, k: float):
    """Gradient of the Green's function with respect to the field point ``x``.

    Equals ``G(r) (j k + 1/r) (y - x) / r``: it points from ``x`` toward ``y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x
    r = np.linalg.norm(d, axis=-1)
    if np.any(r <= 0):
        raise SingularEvaluationError("Green's gradient evaluated at coincident points")
    g = greens(r, k) * (1j * k + 1.0 / r) / r
    return g[..., None] * d


def _phase(config: ScatteringConfig, x):
    d = np.asarray(config.direction)
    return np.exp(-1j * config.wavenumber * (np.asarray(x) @ d))


def incident_field_E(config: ScatteringConfig, x):
    """Incident plane wave ``p exp(-j k d . x)``."""
    x = np.asarray(x, dtype=float)
    return _phase(config, x)[..., None] * np.asarray(config.polarization)


def incident_field_H(config: ScatteringConfig, x):
    """Incident magnetic field ``(d x p) / eta exp(-j k d . x)``."""
    x = np.asarray(x, dtype=float)
    h = np.cross(config.direction, config.polarization) / config.eta
    return _phase(config, x)[..., None] * h


# --------------------------------------------------------------------------
# quadrature points and point-to-DOF maps
# --------------------------------------------------------------------------

class PointSet:
    """Quadrature points of every element and their sparse DOF couplings.

    ``div[c]`` / ``curl[c]`` are ``(N, P)`` CSR matrices holding
    ``weight * component c`` of each basis function at each point;
    ``divergence`` holds weighted surface divergences.
    """

    def __init__(self, space: ConformingSpace, order: int, degenerate_upgrade: int = 3,
                 with_curl: bool = False):
        surface = space.surface
        xs, ws, owners = [], [], []
        trip = {key: ([], [], []) for key in ("d0", "d1", "d2", "dv", "c0", "c1", "c2")}
        ptr = [0]
        for el in surface.elements:
            rule = element_rule(order, el, degenerate_upgrade if el.degenerate_sides else 1)
            u, v = rule.points.T
            eb = space.element_basis(el, u, v, kind="div")
            w = rule.weights * eb.surface_element * (el.s1 - el.s0) * (el.t1 - el.t0)
            m, na = u.size, eb.dofs.size
            cols = ptr[-1] + np.repeat(np.arange(m), na)
            rws = np.tile(eb.dofs, m)
            wv = eb.values * w[:, None, None]
            for c in range(3):
                t = trip[f"d{c}"]
                t[0].append(rws)
                t[1].append(cols)
                t[2].append(wv[:, :, c].ravel())
            t = trip["dv"]
            t[0].append(rws)
            t[1].append(cols)
            t[2].append((eb.div * w[:, None]).ravel())
            if with_curl:
                cv = np.cross(eb.normal[:, None, :], eb.values) * w[:, None, None]
                for c in range(3):
                    t = trip[f"c{c}"]
                    t[0].append(rws)
                    t[1].append(cols)
                    t[2].append(cv[:, :, c].ravel())
            xs.append(eb.point)
            ws.append(w)
            owners.append(np.full(m, el.index))
            ptr.append(ptr[-1] + m)
        self.points = np.concatenate(xs)
        self.weights = np.concatenate(ws)
        self.element_of = np.concatenate(owners)
        self.element_ptr = np.array(ptr)
        shape = (space.global_dim, self.points.shape[0])

        def csr(key):
            r, c, v = (np.concatenate(a) for a in trip[key])
            return sp.csr_matrix((v, (r, c)), shape=shape)

        self.div = [csr(f"d{c}") for c in range(3)]
        self.divergence = csr("dv")
        self.curl = [csr(f"c{c}") for c in range(3)] if with_curl else None
        self.n_points = shape[1]

    def element_points(self, elements) -> np.ndarray:
        ptr = self.element_ptr
        return np.concatenate([np.arange(ptr[e], ptr[e + 1]) for e in elements])


def _pair_points(space, pc, ea, eb, opts: QuadratureOptions):
    """Quadrature data for a close element pair.

    Returns ``(basis_a, basis_b, weights, tensor)``: for singular pairs the
    nodes are paired one to one; for near pairs the rule is a tensor product
    and ``weights`` is a pair ``(wa, wb)``.
    """
    if pc.singular:
        n = opts.singular_order + (opts.degenerate_extra if pc.degenerate else 0)
        rule = sauter_schwab_rule(pc.kind, n)
        x1, x2, y1, y2 = rule.points.T
        ua, va = square_map(pc.map_a, x1, x2)
        ub, vb = square_map(pc.map_b, y1, y2)
        ba = space.element_basis(ea, ua, va, kind="div")
        bb = space.element_basis(eb, ub, vb, kind="div")
        w = rule.weights * ba.surface_element * bb.surface_element
        w = w * (ea.s1 - ea.s0) * (ea.t1 - ea.t0) * (eb.s1 - eb.s0) * (eb.t1 - eb.t0)
        return ba, bb, w, False
    pieces = 2 ** opts.near_depth
    factor = opts.degenerate_upgrade
    ra = element_rule(opts.order, ea, factor if ea.degenerate_sides else 1, pieces)
    rb = element_rule(opts.order, eb, factor if eb.degenerate_sides else 1, pieces)
    ba = space.element_basis(ea, *ra.points.T, kind="div")
    bb = space.element_basis(eb, *rb.points.T, kind="div")
    wa = ra.weights * ba.surface_element * (ea.s1 - ea.s0) * (ea.t1 - ea.t0)
    wb = rb.weights * bb.surface_element * (eb.s1 - eb.s0) * (eb.t1 - eb.t0)
    return ba, bb, (wa, wb), True


def _kernel(R, k):
    return np.exp(-1j * k * R) / (4 * math.pi * R)


class _Operator:
    """Common machinery of the EFIE and MFIE operators."""

    kind = ""

    def __init__(self, space: ConformingSpace, config: ScatteringConfig,
                 options: QuadratureOptions | None = None, workers: int = 1):
        if space.kind != "div":
            raise AssemblyError("operators are built on the div-conforming space")
        self.space = space
        self.config = config
        self.k = config.wavenumber
        self.options = (options or QuadratureOptions()).resolve(max(space.degrees))
        self.workers = max(1, int(workers))
        self.surface = space.surface
        self.shape = (space.global_dim, space.global_dim)
        self.points = PointSet(space, self.options.order, self.options.degenerate_upgrade,
                               with_curl=self.kind == "MFIE")
        self.pairs = near_pairs(self.surface, self.options.near_threshold)
        n_el = self.surface.n_elements
        mask = np.zeros((n_el, n_el), dtype=bool)
        for a, b, _ in self.pairs:
            mask[a, b] = mask[b, a] = True
        self.near_mask = mask
        self._dof_elements = space.dof_elements
        self.near = self._near_correction()

    # -- subclass hooks ---------------------------------------------------------
    def _far_block(self, rows, cols, pr, pc, G, X, Y, R, mask):  # pragma: no cover - abstract
        raise NotImplementedError

    def _local(self, pc, ea, eb):  # pragma: no cover - abstract
        raise NotImplementedError

    # -- near field ---------------------------------------------------------------
    def _near_correction(self):
        elems = self.surface.elements
        rr, cc, vv = [], [], []
        for a, b, pc in self.pairs:
            try:
                blocks = self._local(pc, elems[a], elems[b])
            except FloatingPointError as exc:  # pragma: no cover - defensive
                raise AssemblyError(f"quadrature failed for element pair ({a}, {b}): {exc}") from exc
            for (da, db, M) in blocks:
                if not np.all(np.isfinite(M)):
                    raise AssemblyError(
                        f"non-finite contribution for element pair ({a}, {b}), class {pc.kind.value}"
                    )
                rr.append(np.repeat(da, db.size))
                cc.append(np.tile(db, da.size))
                vv.append(M.ravel())
        extra = self._extra_sparse()
        if rr:
            near = sp.csr_matrix(
                (np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
                shape=self.shape, dtype=complex,
            )
        else:
            near = sp.csr_matrix(self.shape, dtype=complex)
        if extra is not None:
            near = near + extra
        near.sum_duplicates()
        return near.tocsr()

    def _extra_sparse(self):
        return None

    # -- entries -------------------------------------------------------------------
    def _support_points(self, dofs):
        els = sorted({e for d in dofs for e in self._dof_elements[d]})
        return self.points.element_points(els)

    def block(self, rows, cols) -> np.ndarray:
        """Exact sub-block ``A[rows][:, cols]`` of the Galerkin matrix."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        ps = self.points
        pr = self._support_points(rows)
        pc = self._support_points(cols)
        X, Y = ps.points[pr], ps.points[pc]
        R = cdist(X, Y)
        mask = self.near_mask[np.ix_(ps.element_of[pr], ps.element_of[pc])]
        R[mask] = 1.0
        G = _kernel(R, self.k)
        G[mask] = 0.0
        out = self._far_block(rows, cols, pr, pc, G, X, Y, R, mask)
        out += self.near[rows][:, cols].toarray()
        return out

    def dense(self, block_size: int = 96) -> np.ndarray:
        n = self.shape[0]
        out = np.empty(self.shape, dtype=complex)
        cols = np.arange(n)
        chunks = [np.arange(i, min(i + block_size, n)) for i in range(0, n, block_size)]

        def work(rows):
            out[rows] = self.block(rows, cols)

        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                list(pool.map(work, chunks))
        else:
            for rows in chunks:
                work(rows)
        return out

    def matvec(self, x):
        return self.dense() @ x


def _rows_of(mat, rows, pts):
    return mat[rows][:, pts].toarray()


class EfieOperator(_Operator):
    """EFIE Galerkin operator ``Z`` and forcing ``f``.

    ``Z_AB = int int G N_A . N_B - k^-2 int int G div N_A div N_B``
    """

    kind = "EFIE"

    def _far_block(self, rows, cols, pr, pc, G, X, Y, R, mask):
        ps = self.points
        out = np.zeros((rows.size, cols.size), dtype=complex)
        for c in range(3):
            A = _rows_of(ps.div[c], rows, pr)
            B = _rows_of(ps.div[c], cols, pc)
            out += A @ G @ B.T
        A = _rows_of(ps.divergence, rows, pr)
        B = _rows_of(ps.divergence, cols, pc)
        out -= (A @ G @ B.T) / self.k ** 2
        return out

    def _local(self, pc, ea, eb):
        ba, bb, w, tensor = _pair_points(self.space, pc, ea, eb, self.options)
        k = self.k
        if tensor:
            wa, wb = w
            R = cdist(ba.point, bb.point)
            G = _kernel(R, k)
            VA = ba.values * wa[:, None, None]
            VB = bb.values * wb[:, None, None]
            M = np.einsum("qac,qr,rbc->ab", VA, G, VB, optimize=True)
            M -= ((ba.div * wa[:, None]).T @ G @ (bb.div * wb[:, None])) / k ** 2
        else:
            R = np.linalg.norm(ba.point - bb.point, axis=1)
            wG = w * _kernel(R, k)
            M = np.einsum("q,qac,qbc->ab", wG, ba.values, bb.values, optimize=True)
            M -= np.einsum("q,qa,qb->ab", wG, ba.div, bb.div, optimize=True) / k ** 2
        if ea.index == eb.index:
            return [(ba.dofs, bb.dofs, M)]
        return [(ba.dofs, bb.dofs, M), (bb.dofs, ba.dofs, M.T)]

    def rhs(self) -> np.ndarray:
        """``f_A = (1 / (j omega mu)) int N_A . E_inc``."""
        ps = self.points
        E = incident_field_E(self.config, ps.points)
        f = sum(ps.div[c] @ E[:, c] for c in range(3))
        return f / (1j * self.k * self.config.eta)


_CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


class MfieOperator(_Operator):
    """MFIE Galerkin operator ``Y`` and forcing ``g``.

    ``Y_AB = 1/2 int N_A . N_B + int N_A(x) . int grad_y G(x, y) x M_B(y)``
    with test functions ``N_A`` from the div space and trial functions
    ``M_B = n x N_B`` from the curl space.  The surface current is
    ``J = sum_B c_B M_B``.
    """

    kind = "MFIE"

    def _far_block(self, rows, cols, pr, pc, G, X, Y, R, mask):
        ps = self.points
        g = G * (1j * self.k + 1.0 / R) / R
        D = [_rows_of(ps.div[c], rows, pr) for c in range(3)]
        C = [_rows_of(ps.curl[c], cols, pc) for c in range(3)]
        out = np.zeros((rows.size, cols.size), dtype=complex)
        for i, j, kk in _CYCLIC:
            Mi = g * (X[:, i][:, None] - Y[:, i][None, :])
            out += D[kk] @ Mi @ C[j].T - D[j] @ Mi @ C[kk].T
        return out

    def _extra_sparse(self):
        return 0.5 * self.mass_matrix()

    def mass_matrix(self) -> sp.csr_matrix:
        """Gram matrix ``int N_A . N_B`` (identical for the div and curl functions)."""
        ps = self.points
        w = ps.weights
        M = sum(ps.div[c] @ sp.diags(1.0 / w) @ ps.div[c].T for c in range(3))
        return sp.csr_matrix(M, dtype=complex)

    def _local(self, pc, ea, eb):
        ba, bb, w, tensor = _pair_points(self.space, pc, ea, eb, self.options)
        k = self.k
        ca = np.cross(ba.normal[:, None, :], ba.values)
        cb = np.cross(bb.normal[:, None, :], bb.values)
        if tensor:
            wa, wb = w
            d = ba.point[:, None, :] - bb.point[None, :, :]
            R = np.linalg.norm(d, axis=-1)
            g = _kernel(R, k) * (1j * k + 1.0 / R) / R
            g = g * wa[:, None] * wb[None, :]
            # K_ab = sum g (x - y) . (M_b(y) x N_a(x))
            Kab = np.zeros((ba.dofs.size, bb.dofs.size), dtype=complex)
            Kba = np.zeros((bb.dofs.size, ba.dofs.size), dtype=complex)
            for i, j, kk in _CYCLIC:
                Mi = g * d[:, :, i]
                Kab += ba.values[:, :, kk].T @ Mi @ cb[:, :, j] - ba.values[:, :, j].T @ Mi @ cb[:, :, kk]
                # roles swapped: x' = y, y' = x, so (x' - y') = -d
                Kba -= bb.values[:, :, kk].T @ Mi.T @ ca[:, :, j] - bb.values[:, :, j].T @ Mi.T @ ca[:, :, kk]
        else:
            d = ba.point - bb.point
            R = np.linalg.norm(d, axis=1)
            g = w * _kernel(R, k) * (1j * k + 1.0 / R) / R
            # (x - y) . (M_b x N_a)
            cross_ab = np.cross(cb[:, None, :, :], ba.values[:, :, None, :])  # (q, a, b, 3)
            Kab = np.einsum("q,qi,qabi->ab", g, d, cross_ab, optimize=True)
            cross_ba = np.cross(ca[:, None, :, :], bb.values[:, :, None, :])  # (q, b, a, 3)
            Kba = np.einsum("q,qi,qbai->ba", g, -d, cross_ba, optimize=True)
        if ea.index == eb.index:
            return [(ba.dofs, bb.dofs, Kab)]
        return [(ba.dofs, bb.dofs, Kab), (bb.dofs, ba.dofs, Kba)]

    def rhs(self) -> np.ndarray:
        """``g_A = int N_A . H_inc``."""
        ps = self.points
        H = incident_field_H(self.config, ps.points)
        return sum(ps.div[c] @ H[:, c] for c in range(3))


def assemble_efie(space: ConformingSpace, config: ScatteringConfig,
                  options: QuadratureOptions | None = None, workers: int = 1):
    """Dense EFIE matrix and forcing vector."""
    op = EfieOperator(space, config, options, workers)
    return op.dense(), op.rhs()


def assemble_mfie(space: ConformingSpace, config: ScatteringConfig,
                  options: QuadratureOptions | None = None, workers: int = 1):
    """Dense MFIE matrix and forcing vector."""
    op = MfieOperator(space, config, options, workers)
    return op.dense(), op.rhs()


def solve_dense(matrix, rhs, residual_tol: float = 1e-10) -> np.ndarray:
    """LU solve with a residual check."""
    A = np.asarray(matrix)
    b = np.asarray(rhs)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise SolverError(f"incompatible system shapes {A.shape} and {b.shape}")
    try:
        with np.errstate(all="raise"):
            lu = scipy.linalg.lu_factor(A, check_finite=True)
        x = scipy.linalg.lu_solve(lu, b)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        raise SolverError(f"direct solve failed: {exc}") from exc
    if np.any(np.abs(np.diag(lu[0])) == 0) or not np.all(np.isfinite(x)):
        raise SolverError("matrix is singular")
    nb = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b) / (nb if nb > 0 else 1.0)
    if res > residual_tol:
        raise SolverError(f"direct solve residual {res:.2e} exceeds {residual_tol:.0e}", [res])
    return x


# --------------------------------------------------------------------------
# matrix export
# --------------------------------------------------------------------------

def write_matrix(path, matrix) -> None:
    """Binary export: ``uint64 rows, uint64 cols`` then row-major
    interleaved real/imaginary little-endian doubles."""
    A = np.ascontiguousarray(matrix, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", *A.shape))
        fh.write(A.view("<f8").tobytes())


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise MatrixFormatError(f"{path}: truncated header")
    m, n = struct.unpack("<QQ", data[:16])
    body = data[16:]
    if len(body) != 16 * m * n:
        raise MatrixFormatError(f"{path}: expected {16 * m * n} bytes of data, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").view(np.complex128).reshape(m, n).copy()
