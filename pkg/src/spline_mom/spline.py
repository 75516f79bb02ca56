"""Univariate and tensor-product B-splines.

Knot vectors are open and normalised to [0, 1].  Evaluation comes in two
flavours: the classical Cox-de Boor recursion (``eval_basis_ders``) and the
Bezier-extraction path (``bernstein`` combined with ``bezier_extract``) that
the assembly code uses for bulk evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, RefinementError

__all__ = [
    "KnotVector",
    "TensorSpace",
    "BezierExtraction",
    "find_span",
    "eval_basis_ders",
    "insert_knot",
    "insert_knots",
    "bezier_extract",
    "bernstein",
]

_KNOT_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open knot vector on [0, 1].

    Parameters
    ----------
    knots : array_like
        Non-decreasing knot sequence.  The first and last ``degree + 1``
        entries must equal 0 and 1.
    degree : int
        Polynomial degree ``p >= 0``.
    """

    knots: np.ndarray
    degree: int

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        p = int(self.degree)
        object.__setattr__(self, "degree", p)
        if p < 0:
            raise DomainError(f"degree must be non-negative, got {p}")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise DomainError("knot vector too short for its degree")
        if np.any(np.diff(knots) < 0):
            raise DomainError("knot vector must be non-decreasing")
        if np.any(knots[: p + 1] != 0.0) or np.any(knots[-(p + 1):] != 1.0):
            raise DomainError(
                f"knot vector is not open on [0, 1] for degree {p}: {knots.tolist()}"
            )
        breaks, mult = np.unique(knots, return_counts=True)
        # degree 0 allows simple interior knots (piecewise constants)
        if breaks.size > 2 and mult[1:-1].max() > max(p, 1):
            raise DomainError("interior knot multiplicity exceeds the degree")

    @classmethod
    def from_breaks(cls, breaks, degree: int, multiplicity: int = 1) -> "KnotVector":
        """Open knot vector with the given breakpoints and interior multiplicity."""
        breaks = np.asarray(breaks, dtype=float)
        p = int(degree)
        interior = np.repeat(breaks[1:-1], multiplicity)
        knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
        return cls(knots, p)

    @classmethod
    def uniform(cls, n_elements: int, degree: int) -> "KnotVector":
        return cls.from_breaks(np.linspace(0.0, 1.0, n_elements + 1), degree)

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @cached_property
    def breaks(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return self.breaks.size - 1

    def multiplicity(self, u: float) -> int:
        return int(np.count_nonzero(np.abs(self.knots - u) <= _KNOT_TOL))

    def element_spans(self) -> np.ndarray:
        """Knot-span index of every non-empty element, in order."""
        k = np.nonzero(np.diff(self.knots) > 0)[0]
        return k

    def __eq__(self, other):
        return (
            isinstance(other, KnotVector)
            and self.degree == other.degree
            and np.array_equal(self.knots, other.knots)
        )

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    def __repr__(self):
        return f"KnotVector(degree={self.degree}, knots={self.knots.tolist()})"


def find_span(kv: KnotVector, u: float) -> int:
    """Index ``k`` with ``knots[k] <= u < knots[k+1]``.

    At ``u == 1`` the last non-empty span is returned.
    """
    if not (0.0 <= u <= 1.0):
        raise DomainError(f"parameter {u} outside [0, 1]")
    U = kv.knots
    n = kv.n
    if u >= U[n]:
        return n - 1
    return int(np.searchsorted(U, u, side="right") - 1)


def eval_basis_ders(kv: KnotVector, u: float, order: int = 0) -> np.ndarray:
    """Non-zero basis functions and derivatives at ``u``.

    Returns an array of shape ``(order + 1, p + 1)``; row ``k`` holds the
    ``k``-th derivatives of ``B_{span-p}, ..., B_span``.  Derivatives of
    order higher than ``p`` are zero.
    """
    if order < 0:
        raise DomainError("derivative order must be non-negative")
    p = kv.degree
    U = kv.knots
    span = find_span(kv, u)
    ndu = np.zeros((p + 1, p + 1))
    ndu[0, 0] = 1.0
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    for j in range(1, p + 1):
        left[j] = u - U[span + 1 - j]
        right[j] = U[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((order + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, min(order, p) + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, min(order, p) + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


def eval_basis(kv: KnotVector, u) -> np.ndarray:
    """Full basis vector ``(len(u), n)`` at an array of parameters."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.zeros((u.size, kv.n))
    p = kv.degree
    for i, ui in enumerate(u):
        span = find_span(kv, ui)
        out[i, span - p: span + 1] = eval_basis_ders(kv, ui, 0)[0]
    return out


def insert_knot(kv: KnotVector, u: float) -> tuple[KnotVector, np.ndarray]:
    """Insert a single knot (Boehm's algorithm).

    Returns the refined knot vector and the transfer matrix ``T`` of shape
    ``(n + 1, n)`` so that refined coefficients are ``T @ old``.
    """
    if not (0.0 < u < 1.0):
        raise RefinementError(f"inserted knot {u} must lie strictly inside (0, 1)")
    p = kv.degree
    if kv.multiplicity(u) + 1 > max(p, 1):
        raise RefinementError(
            f"inserting {u} would raise its multiplicity above {max(p, 1)}"
        )
    U = kv.knots
    k = find_span(kv, u)
    n = kv.n
    T = np.zeros((n + 1, n))
    for i in range(n + 1):
        if i <= k - p:
            T[i, i] = 1.0
        elif i >= k + 1:
            T[i, i - 1] = 1.0
        else:
            alpha = (u - U[i]) / (U[i + p] - U[i])
            T[i, i] = alpha
            T[i, i - 1] = 1.0 - alpha
    new = KnotVector(np.insert(U, k + 1, u), p)
    return new, T


def insert_knots(kv: KnotVector, values) -> tuple[KnotVector, np.ndarray]:
    """Insert several knots; the transfer matrices are composed."""
    T = np.eye(kv.n)
    for u in sorted(values):
        kv, Ti = insert_knot(kv, float(u))
        T = Ti @ T
    return kv, T


def bernstein(p: int, u, order: int = 0) -> np.ndarray:
    """Bernstein polynomials of degree ``p`` on [0, 1] and their derivatives.

    Returns an array of shape ``(order + 1, len(u), p + 1)``.  Values are
    built with the triangular (de Casteljau) recurrence
    ``B^k_i = (1 - u) B^{k-1}_i + u B^{k-1}_{i-1}``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    tables = [np.ones((u.size, 1))]
    for k in range(1, p + 1):
        prev = tables[-1]
        cur = np.zeros((u.size, k + 1))
        cur[:, :k] += (1.0 - u)[:, None] * prev
        cur[:, 1:] += u[:, None] * prev
        tables.append(cur)
    out = np.zeros((order + 1, u.size, p + 1))
    out[0] = tables[p]
    for d in range(1, order + 1):
        if d > p:
            break
        # d-th derivative: p!/(p-d)! * sum_j (-1)^(d-j) C(d,j) B^{p-d}_{i-j}
        low = tables[p - d]
        acc = np.zeros((u.size, p + 1))
        coef = 1.0
        for j in range(d + 1):
            sign = (-1) ** (d - j)
            acc[:, j: j + p - d + 1] += sign * _binom(d, j) * low
        for m in range(d):
            coef *= p - m
        out[d] = coef * acc
    return out


def _binom(n: int, k: int) -> float:
    from math import comb

    return float(comb(n, k))


@dataclass(frozen=True, eq=False)
class BezierExtraction:
    """Per-element extraction operators.

    ``operators[e]`` maps the Bernstein basis on element ``e`` to the
    ``p + 1`` B-splines supported there: ``B = C @ bernstein``.
    """

    operators: np.ndarray
    spans: np.ndarray
    breaks: np.ndarray

    @property
    def n_elements(self) -> int:
        return self.operators.shape[0]

    def first_basis(self, e: int, degree: int) -> int:
        return int(self.spans[e]) - degree


def bezier_extract(kv: KnotVector) -> BezierExtraction:
    """Bezier extraction operators of an open knot vector.

    Built by repeated knot insertion at each interior break; the operator
    of a Bernstein-like element is the identity.
    """
    U = kv.knots
    p = kv.degree
    m = U.size
    spans = kv.element_spans()
    ne = spans.size
    if p == 0:
        ops = np.ones((ne, 1, 1))
        return BezierExtraction(ops, spans, kv.breaks)

    # 1-based transcription; U1(i) == U[i - 1]
    def U1(i):
        return U[i - 1]

    ops = [np.eye(p + 1)]
    a = p + 1
    b = a + 1
    nb = 0
    while b < m:
        nxt = np.eye(p + 1)
        i = b
        while b < m and U1(b + 1) == U1(b):
            b += 1
        mult = b - i + 1
        if mult < p:
            numer = U1(b) - U1(a)
            alphas = np.zeros(p + 1)
            for j in range(p, mult, -1):
                alphas[j - mult] = numer / (U1(a + j) - U1(a))
            r = p - mult
            C = ops[nb]
            for j in range(1, r + 1):
                save = r - j + 1
                s = mult + j
                for k in range(p + 1, s, -1):
                    alpha = alphas[k - s]
                    C[:, k - 1] = alpha * C[:, k - 1] + (1.0 - alpha) * C[:, k - 2]
                if b < m:
                    nxt[save - 1: j + save, save - 1] = C[p - j: p + 1, p]
        nb += 1
        if b < m:
            ops.append(nxt)
            a = b
            b += 1
    ops = np.array(ops[:ne])
    return BezierExtraction(ops, spans, kv.breaks)


@dataclass(frozen=True, eq=False)
class TensorSpace:
    """Tensor product ``S^p x S^q`` with linear index ``a = j * n + i``."""

    space_s: KnotVector
    space_t: KnotVector

    @property
    def dim(self) -> int:
        return self.space_s.n * self.space_t.n

    @property
    def degrees(self) -> tuple[int, int]:
        return self.space_s.degree, self.space_t.degree

    def index(self, i, j):
        return np.asarray(j) * self.space_s.n + np.asarray(i)

    def ij(self, a):
        return np.asarray(a) % self.space_s.n, np.asarray(a) // self.space_s.n

    def eval(self, s, t) -> np.ndarray:
        """Full tensor basis ``(len(s), dim)`` at paired points."""
        Bs = eval_basis(self.space_s, s)
        Bt = eval_basis(self.space_t, t)
        return (Bt[:, :, None] * Bs[:, None, :]).reshape(Bs.shape[0], -1)
