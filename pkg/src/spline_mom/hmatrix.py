"""Hierarchical-matrix approximation of the Galerkin operators.

Cluster trees split DOF sets at the median box centre along the longest axis
of the node box.  Block pairs with ``min(diam) <= eta * dist`` are
approximated by partially pivoted adaptive cross approximation (ACA); the
remaining leaf pairs are stored densely.

Binary file layout (all little endian)::

    b"SMHM"  uint32 version
    uint64 n_rows, n_cols
    uint64[n_rows] row permutation, uint64[n_cols] column permutation
    row tree, column tree:   uint64 n_nodes, then per node
                             int64 start, end, left, right; f8[6] box
    uint64 n_blocks, then per block
        int64 row_node, col_node, kind (0 dense, 1 low rank), rank
        dense: complex f8 pairs, row major (m x n)
        low rank: U (m x rank) then V (rank x n), complex f8 pairs
"""

from __future__ import annotations

import logging
import math
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import MatrixFormatError, SolverError

__all__ = [
    "ClusterTree",
    "Block",
    "HMatrix",
    "build_cluster_tree",
    "build_block_tree",
    "aca_approximate",
    "build_hmatrix",
    "h_matvec",
    "iterative_solve",
    "IterativeResult",
    "save_hmatrix",
    "load_hmatrix",
    "HIGH_FREQUENCY_WARNING",
]

log = logging.getLogger(__name__)

MAGIC = b"SMHM"
VERSION = 1
HIGH_FREQUENCY_WARNING = 40.0


@dataclass
class ClusterTree:
    """Binary cluster tree over DOF indices.

    Node ``i`` owns ``perm[start[i]:end[i]]``; ``left``/``right`` are -1 for
    leaves.  ``boxes[i]`` is ``(2, 3)``: lower and upper corners.
    """

    perm: np.ndarray
    start: np.ndarray
    end: np.ndarray
    left: np.ndarray
    right: np.ndarray
    boxes: np.ndarray
    leaf_size: int = 32

    @property
    def n_nodes(self) -> int:
        return self.start.size

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def indices(self, node: int) -> np.ndarray:
        return self.perm[self.start[node]: self.end[node]]

    def size(self, node: int) -> int:
        return int(self.end[node] - self.start[node])

    def diameter(self, node: int) -> float:
        b = self.boxes[node]
        return float(np.linalg.norm(b[1] - b[0]))

    def leaves(self) -> list:
        return [i for i in range(self.n_nodes) if self.left[i] < 0]

    def depth(self, node: int = 0) -> int:
        if self.left[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))


def build_cluster_tree(dof_boxes, leaf_size: int = 32) -> ClusterTree:
    """Median bisection along the longest axis of each node box."""
    boxes = np.asarray(dof_boxes, dtype=float)
    n = boxes.shape[0]
    centres = 0.5 * (boxes[:, 0] + boxes[:, 1])
    perm = np.arange(n)
    start, end, left, right, nboxes = [], [], [], [], []

    def make(lo, hi):
        idx = perm[lo:hi]
        node = len(start)
        start.append(lo)
        end.append(hi)
        left.append(-1)
        right.append(-1)
        nboxes.append(np.stack([boxes[idx, 0].min(0), boxes[idx, 1].max(0)]))
        if hi - lo > leaf_size:
            b = nboxes[node]
            axis = int(np.argmax(b[1] - b[0]))
            order = np.argsort(centres[idx, axis], kind="stable")
            perm[lo:hi] = idx[order]
            mid = lo + (hi - lo) // 2
            left[node] = make(lo, mid)
            right[node] = make(mid, hi)
        return node

    make(0, n)
    return ClusterTree(perm, np.array(start), np.array(end), np.array(left), np.array(right),
                       np.array(nboxes), leaf_size)


def _box_distance(a, b) -> float:
    gap = np.maximum(0.0, np.maximum(a[0] - b[1], b[0] - a[1]))
    return float(np.linalg.norm(gap))


@dataclass
class Block:
    row_node: int
    col_node: int
    admissible: bool
    dense: np.ndarray | None = None
    U: np.ndarray | None = None
    V: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return 0 if self.U is None else self.U.shape[1]

    def stored_entries(self) -> int:
        if self.dense is not None:
            return self.dense.size
        return self.U.size + self.V.size


def build_block_tree(row_tree: ClusterTree, col_tree: ClusterTree, eta: float = 2.0) -> list:
    """Partition the index product into admissible and dense leaf pairs.

    Returns a list of ``(row_node, col_node, admissible)``.
    """
    if eta <= 0:
        raise ValueError("admissibility parameter must be positive")
    out = []
    stack = [(0, 0)]
    while stack:
        r, c = stack.pop()
        dist = _box_distance(row_tree.boxes[r], col_tree.boxes[c])
        diam = min(row_tree.diameter(r), col_tree.diameter(c))
        if dist > 0 and diam <= eta * dist:
            out.append((r, c, True))
            continue
        rl, cl = row_tree.is_leaf(r), col_tree.is_leaf(c)
        if rl and cl:
            out.append((r, c, False))
        elif rl:
            stack.extend([(r, col_tree.right[c]), (r, col_tree.left[c])])
        elif cl:
            stack.extend([(row_tree.right[r], c), (row_tree.left[r], c)])
        else:
            stack.extend([
                (row_tree.right[r], col_tree.right[c]), (row_tree.right[r], col_tree.left[c]),
                (row_tree.left[r], col_tree.right[c]), (row_tree.left[r], col_tree.left[c]),
            ])
    out.sort(key=lambda t: (row_tree.start[t[0]], col_tree.start[t[1]]))
    return out


def aca_approximate(get_row, get_col, shape, tol: float = 1e-6, max_rank: int | None = None):
    """Partially pivoted ACA.

    ``get_row(i)`` and ``get_col(j)`` return row ``i`` and column ``j`` of
    the block.  Stops when ``|u_r| |v_r| <= tol |U V|_F``.  Pivots are
    chosen deterministically (largest modulus, lowest index on ties).

    Returns ``(U, V, rank)``, or ``None`` when the rank reaches ``max_rank``
    without meeting the tolerance.
    """
    m, n = shape
    if max_rank is None:
        max_rank = min(m, n)
    us, vs = [], []
    norm2 = 0.0
    used_rows = np.zeros(m, dtype=bool)
    i = 0
    misses = 0
    scale = 0.0  # largest pivot so far; residuals below round-off of it count as zero
    while len(us) < max_rank:
        used_rows[i] = True
        row = np.array(get_row(i), dtype=complex)
        for u, v in zip(us, vs):
            row -= u[i] * v
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) <= max(1e-300, 1e-13 * scale) or not np.isfinite(row[j]):
            misses += 1
            free = np.nonzero(~used_rows)[0]
            if free.size == 0 or misses > 3:
                break
            i = int(free[0])
            continue
        scale = max(scale, abs(row[j]))
        v = row / row[j]
        col = np.array(get_col(j), dtype=complex)
        for uk, vk in zip(us, vs):
            col -= uk * vk[j]
        u = col
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        cross = sum(2 * np.real(np.vdot(uk, u) * np.vdot(vk, v)) for uk, vk in zip(us, vs))
        norm2 += nu ** 2 * nv ** 2 + cross
        us.append(u)
        vs.append(v)
        if nu * nv <= tol * math.sqrt(max(norm2, 0.0)):
            break
        score = np.abs(u)
        score[used_rows] = -1.0
        if score.max() < 0:
            break
        i = int(np.argmax(score))
    else:
        if len(us) < min(m, n):
            return None
    if not us:
        return np.zeros((m, 0), complex), np.zeros((0, n), complex), 0
    return np.ascontiguousarray(np.array(us).T), np.array(vs), len(us)


@dataclass
class HMatrix:
    shape: tuple
    row_tree: ClusterTree
    col_tree: ClusterTree
    blocks: list
    tol: float = 1e-6
    eta: float = 2.0

    def matvec(self, x):
        x = np.asarray(x)
        single = x.ndim == 1
        X = x.reshape(x.shape[0], -1)
        Xp = X[self.col_tree.perm]
        Yp = np.zeros((self.shape[0], X.shape[1]), dtype=np.result_type(X, complex))
        rt, ct = self.row_tree, self.col_tree
        for b in self.blocks:
            r0, r1 = rt.start[b.row_node], rt.end[b.row_node]
            c0, c1 = ct.start[b.col_node], ct.end[b.col_node]
            if b.dense is not None:
                Yp[r0:r1] += b.dense @ Xp[c0:c1]
            elif b.rank:
                Yp[r0:r1] += b.U @ (b.V @ Xp[c0:c1])
        Y = np.empty_like(Yp)
        Y[rt.perm] = Yp
        return Y[:, 0] if single else Y

    __matmul__ = matvec

    def to_dense(self) -> np.ndarray:
        return self.matvec(np.eye(self.shape[1]))

    def stored_entries(self) -> int:
        return sum(b.stored_entries() for b in self.blocks)

    @property
    def compression(self) -> float:
        return self.stored_entries() / (self.shape[0] * self.shape[1])

    @property
    def admissible_fraction(self) -> float:
        area = 0
        for b in self.blocks:
            if b.admissible:
                area += self.row_tree.size(b.row_node) * self.col_tree.size(b.col_node)
        return area / (self.shape[0] * self.shape[1])

    def as_linear_operator(self):
        return spla.LinearOperator(self.shape, matvec=self.matvec, dtype=complex)


def build_hmatrix(operator, dof_boxes, eta: float = 2.0, leaf_size: int = 32,
                  tol: float = 1e-6, workers: int = 1,
                  frequency_threshold: float = HIGH_FREQUENCY_WARNING) -> HMatrix:
    """Approximate ``operator`` (anything with ``block(rows, cols)``,
    ``shape`` and ``k``) as an H-matrix."""
    boxes = np.asarray(dof_boxes)
    tree = build_cluster_tree(boxes, leaf_size)
    extent = tree.diameter(0)
    k = getattr(operator, "k", 0.0)
    if k * extent > frequency_threshold:
        warnings.warn(
            f"k * diameter = {k * extent:.1f} exceeds {frequency_threshold:.0f}; low-rank "
            "compression degrades at high wavenumbers",
            RuntimeWarning,
        )
    pairs = build_block_tree(tree, tree, eta)

    def make(item):
        r, c, adm = item
        rows, cols = tree.indices(r), tree.indices(c)
        if adm:
            res = aca_approximate(
                lambda i: operator.block(rows[i: i + 1], cols)[0],
                lambda j: operator.block(rows, cols[j: j + 1])[:, 0],
                (rows.size, cols.size), tol,
            )
            if res is None:
                log.warning("ACA stagnated on block (%d, %d); storing it densely", r, c)
            elif res[2] * (rows.size + cols.size) < rows.size * cols.size:
                return Block(r, c, True, U=res[0], V=res[1])
        return Block(r, c, adm, dense=operator.block(rows, cols))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            blocks = list(pool.map(make, pairs))
    else:
        blocks = [make(p) for p in pairs]
    return HMatrix(tuple(operator.shape), tree, tree, blocks, tol, eta)


def h_matvec(H: HMatrix, x):
    return H.matvec(x)


@dataclass
class IterativeResult:
    x: np.ndarray
    iterations: int
    residuals: list
    converged: bool


def iterative_solve(operator, rhs, tol: float = 1e-8, restart: int | None = None,
                    max_iter: int = 5000) -> IterativeResult:
    """Restarted GMRES with residual history.

    ``restart`` defaults to ``min(n, 1000)``: short restart cycles stagnate
    on the ill-conditioned EFIE systems of elongated bodies.

    Raises
    ------
    SolverError
        When the relative residual does not reach ``tol`` within
        ``max_iter`` inner iterations.
    """
    b = np.asarray(rhs, dtype=complex)
    if isinstance(operator, HMatrix):
        A = operator.as_linear_operator()
    elif isinstance(operator, np.ndarray):
        A = spla.aslinearoperator(operator)
    else:
        A = operator
    history = []
    nb = np.linalg.norm(b)
    if nb == 0:
        return IterativeResult(np.zeros_like(b), 0, [0.0], True)
    restart = min(restart or 1000, b.size)
    x, info = spla.gmres(
        A, b, rtol=tol, atol=0.0, restart=restart, maxiter=max(1, max_iter // restart) + 1,
        callback=lambda r: history.append(float(r)), callback_type="pr_norm",
    )
    res = float(np.linalg.norm(b - A.matvec(x)) / nb)
    if info != 0 or res > 10 * tol:
        raise SolverError(f"GMRES did not converge (info={info}, residual {res:.2e})", history)
    return IterativeResult(x, len(history), history + [res], True)


# -- serialisation --------------------------------------------------------------

def _write_tree(fh, tree: ClusterTree):
    fh.write(struct.pack("<Q", tree.n_nodes))
    for i in range(tree.n_nodes):
        fh.write(struct.pack("<qqqq", tree.start[i], tree.end[i], tree.left[i], tree.right[i]))
        fh.write(np.ascontiguousarray(tree.boxes[i], dtype="<f8").tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise MatrixFormatError("H-matrix file is truncated")
    return data


def _read_tree(fh, perm, leaf_size):
    (n,) = struct.unpack("<Q", _read_exact(fh, 8))
    start, end, left, right, boxes = [], [], [], [], []
    for _ in range(n):
        s, e, l, r = struct.unpack("<qqqq", _read_exact(fh, 32))
        start.append(s)
        end.append(e)
        left.append(l)
        right.append(r)
        boxes.append(np.frombuffer(_read_exact(fh, 48), dtype="<f8").reshape(2, 3))
    return ClusterTree(perm, np.array(start), np.array(end), np.array(left), np.array(right),
                       np.array(boxes), leaf_size)


def _write_complex(fh, a):
    fh.write(np.ascontiguousarray(a, dtype=np.complex128).view("<f8").tobytes())


def _read_complex(fh, shape):
    n = int(np.prod(shape))
    return np.frombuffer(_read_exact(fh, 16 * n), dtype="<f8").view(np.complex128).reshape(shape).copy()


def save_hmatrix(H: HMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<QQ", *H.shape))
        fh.write(struct.pack("<dd", H.tol, H.eta))
        fh.write(struct.pack("<Q", H.row_tree.leaf_size))
        fh.write(np.asarray(H.row_tree.perm, dtype="<u8").tobytes())
        fh.write(np.asarray(H.col_tree.perm, dtype="<u8").tobytes())
        _write_tree(fh, H.row_tree)
        _write_tree(fh, H.col_tree)
        fh.write(struct.pack("<Q", len(H.blocks)))
        for b in H.blocks:
            kind = 0 if b.dense is not None else 1
            fh.write(struct.pack("<qqqq", b.row_node, b.col_node, kind | (int(b.admissible) << 1), b.rank))
            if kind == 0:
                _write_complex(fh, b.dense)
            else:
                _write_complex(fh, b.U)
                _write_complex(fh, b.V)


def load_hmatrix(path) -> HMatrix:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise MatrixFormatError(f"{path}: not an H-matrix file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise MatrixFormatError(f"{path}: unsupported H-matrix version {version}")
        m, n = struct.unpack("<QQ", _read_exact(fh, 16))
        tol, eta = struct.unpack("<dd", _read_exact(fh, 16))
        (leaf,) = struct.unpack("<Q", _read_exact(fh, 8))
        prow = np.frombuffer(_read_exact(fh, 8 * m), dtype="<u8").astype(np.int64)
        pcol = np.frombuffer(_read_exact(fh, 8 * n), dtype="<u8").astype(np.int64)
        rt = _read_tree(fh, prow, leaf)
        ct = _read_tree(fh, pcol, leaf)
        (nb,) = struct.unpack("<Q", _read_exact(fh, 8))
        blocks = []
        for _ in range(nb):
            r, c, kind, rank = struct.unpack("<qqqq", _read_exact(fh, 32))
            rm, cn = rt.size(r), ct.size(c)
            adm = bool(kind >> 1)
            if kind & 1 == 0:
                blocks.append(Block(r, c, adm, dense=_read_complex(fh, (rm, cn))))
            else:
                U = _read_complex(fh, (rm, rank))
                V = _read_complex(fh, (rank, cn))
                blocks.append(Block(r, c, adm, U=U, V=V))
        if fh.read(1):
            raise MatrixFormatError(f"{path}: trailing data after last block")
    return HMatrix((int(m), int(n)), rt, ct, blocks, tol, eta)
