import math

import numpy as np
import pytest

from spline_mom.assembly import (
    EfieOperator,
    MfieOperator,
    ScatteringConfig,
    assemble_efie,
    grad_greens,
    greens,
    incident_field_E,
    incident_field_H,
    read_matrix,
    solve_dense,
    write_matrix,
)
from spline_mom.errors import DomainError, MatrixFormatError, SingularEvaluationError, SolverError
from spline_mom.geometry import MultipatchSurface, NurbsPatch
from spline_mom.models import make_sphere
from spline_mom.quadrature import QuadratureOptions
from spline_mom.spaces import ConformingSpace
from spline_mom.spline import KnotVector


@pytest.fixture(scope="module")
def sphere0():
    return make_sphere()


def test_greens_examples():
    assert abs(greens(1.0, 0.0) - 1 / (4 * math.pi)) < 1e-15
    r = np.linspace(0.1, 5, 7)
    assert np.allclose(np.abs(greens(r, 3.7)), 1 / (4 * math.pi * r), rtol=1e-14)
    assert abs(greens(2.0, math.pi) - 1 / (8 * math.pi)) < 1e-15
    with pytest.raises(SingularEvaluationError):
        greens(0.0, 1.0)


@pytest.mark.parametrize("k", [0.0, 1.3, 7.0])
def test_grad_greens_matches_finite_differences(k):
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    g = grad_greens(x, y, k)
    h = 1e-6
    fd = np.array([
        (greens(np.linalg.norm(y - x - h * e), k) - greens(np.linalg.norm(y - x + h * e), k)) / (2 * h)
        for e in np.eye(3)
    ])
    assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-6
    if k == 0.0:
        d = y - x
        laplace = d / (4 * math.pi * np.linalg.norm(d) ** 3)
        assert np.allclose(g, laplace, rtol=1e-13)


def test_grad_greens_antisymmetry_and_growth():
    x, y = np.array([0.1, 0.2, 0.3]), np.array([-1.0, 0.5, 2.0])
    assert np.allclose(grad_greens(x, y, 2.0), -grad_greens(y, x, 2.0), rtol=0, atol=1e-15)
    r, k = 3.0, 500.0
    g = grad_greens(np.zeros(3), np.array([r, 0, 0]), k)
    assert abs(np.linalg.norm(g) / (k / (4 * math.pi * r)) - 1) < 1e-3
    with pytest.raises(SingularEvaluationError):
        grad_greens(x, x, 1.0)


def test_incident_fields():
    cfg = ScatteringConfig(2.0, (0, 1, 0), (1, 0, 0))
    assert np.allclose(incident_field_E(cfg, np.zeros(3)), [0, 1, 0])
    x = np.random.default_rng(0).standard_normal((20, 3))
    E = incident_field_E(cfg, x)
    H = incident_field_H(cfg, x)
    assert np.allclose(np.linalg.norm(E, axis=1), 1.0)
    assert np.allclose(E @ np.array(cfg.direction), 0.0)
    assert np.allclose(H * cfg.eta, np.cross(cfg.direction, E))


def test_config_validation():
    with pytest.raises(DomainError):
        ScatteringConfig(0.0)
    with pytest.raises(DomainError):
        ScatteringConfig(1.0, (0, 0, 1), (0, 0, 1))
    with pytest.raises(DomainError):
        ScatteringConfig(1.0, (2, 0, 0))
    cfg = ScatteringConfig.from_frequency(1.19e9)
    assert abs(cfg.wavenumber - 2 * math.pi * 1.19e9 / 299792458.0) < 1e-9
    assert abs(cfg.frequency - 1.19e9) < 1e-3
    assert abs(cfg.eta - 376.730313) < 1e-5


def test_efie_matrix_is_symmetric(sphere0):
    space = ConformingSpace(sphere0, "div", (2, 2))
    Z, f = assemble_efie(space, ScatteringConfig(3.0))
    assert np.abs(Z - Z.T).max() / np.abs(Z).max() < 1e-8
    assert f.shape == (space.global_dim,)


def test_efie_quadrature_self_convergence(sphere0):
    space = ConformingSpace(sphere0, "div", (1, 1))
    cfg = ScatteringConfig(3.0)
    Z = [assemble_efie(space, cfg, QuadratureOptions(order=n))[0] for n in (6, 8, 10, 12)]
    change = [np.abs(b - a).max() / np.abs(b).max() for a, b in zip(Z, Z[1:])]
    assert all(b < a for a, b in zip(change, change[1:]))
    # the h0 elements each cover a sixth of the sphere, so convergence sets in late
    assert change[-1] < 1e-6


def test_forcing_is_linear_in_polarisation(sphere0):
    space = ConformingSpace(sphere0, "div", (1, 1))
    d = (0, 0, 1)
    fx = EfieOperator(space, ScatteringConfig(2.0, (1, 0, 0), d)).rhs()
    fy = EfieOperator(space, ScatteringConfig(2.0, (0, 1, 0), d)).rhs()
    c = 1 / math.sqrt(2)
    fxy = EfieOperator(space, ScatteringConfig(2.0, (c, c, 0), d)).rhs()
    assert np.allclose(fxy, c * (fx + fy), rtol=0, atol=1e-14 * np.abs(fx).max())


def test_block_matches_dense(sphere0):
    space = ConformingSpace(sphere0, "div", (2, 2))
    op = EfieOperator(space, ScatteringConfig(3.0))
    Z = op.dense()
    rows, cols = np.array([0, 5, 17, 40]), np.array([3, 5, 47])
    assert np.allclose(op.block(rows, cols), Z[np.ix_(rows, cols)], rtol=0, atol=1e-14 * np.abs(Z).max())


def test_mfie_mass_block_is_hermitian_positive_definite(sphere0):
    space = ConformingSpace(sphere0, "div", (2, 2))
    M = (0.5 * MfieOperator(space, ScatteringConfig(1.0)).mass_matrix()).toarray()
    assert np.abs(M - M.conj().T).max() < 1e-14 * np.abs(M).max()
    assert np.linalg.eigvalsh(M).min() > 0


def _flat_surface(n_el=2, p=2, q=2):
    ks, kt = KnotVector.uniform(n_el, p), KnotVector.uniform(n_el, q)
    # Greville abscissae give the identity map
    gs = np.array([ks.knots[i + 1:i + p + 1].mean() for i in range(ks.n)])
    gt = np.array([kt.knots[j + 1:j + q + 1].mean() for j in range(kt.n)])
    S, T = np.meshgrid(gs, gt, indexing="ij")
    patch = NurbsPatch.from_points(ks, kt, np.stack([S, T, 0 * S], axis=-1))
    return MultipatchSurface([patch], [])


def _spline_integrals(kv: KnotVector):
    t, p = np.asarray(kv.knots), kv.degree
    return np.array([(t[i + p + 1] - t[i]) / (p + 1) for i in range(kv.n)])


def test_mfie_forcing_on_flat_patch_matches_closed_form():
    surf = _flat_surface()
    p, q = 2, 2
    space = ConformingSpace(surf, "div", (p, q))
    cfg = ScatteringConfig(1.5, (1, 0, 0), (0, 0, 1))
    g = MfieOperator(space, cfg).rhs()
    # the phase is constant on z = 0, so H is constant: (d x p) / eta = y / eta
    H = np.array([0.0, 1.0, 0.0]) / cfg.eta
    breaks = np.linspace(0, 1, 3)
    s_lo, t_hi = KnotVector.from_breaks(breaks, p - 1), KnotVector.from_breaks(breaks, q)
    # only the second component (degrees (p-1, q)) carries a y part
    expected = np.outer(_spline_integrals(s_lo), _spline_integrals(t_hi)).ravel() * H[1]
    n1 = KnotVector.from_breaks(breaks, p).n * KnotVector.from_breaks(breaks, q - 1).n
    assert space.global_dim == n1 + expected.size
    assert np.abs(np.sort(np.abs(g))[-expected.size:] - np.sort(np.abs(expected))).max() < 1e-10 * H[1]
    assert np.abs(np.sort(np.abs(g))[: n1]).max() < 1e-16
    assert abs(abs(g.sum()) - H[1]) < 1e-10 * H[1]


def test_solve_dense_examples():
    b = np.array([1 + 2j, -3.0, 0.5j])
    assert np.array_equal(solve_dense(np.eye(3), b), b)
    A = np.array([[2, 1j], [0, 1]])
    x = solve_dense(A, np.array([2 + 1j, 1]))
    assert np.allclose(x, [1, 1])
    rng = np.random.default_rng(1)
    A = rng.standard_normal((100, 100)) + 1j * rng.standard_normal((100, 100)) + 20 * np.eye(100)
    b = rng.standard_normal(100) + 0j
    x = solve_dense(A, b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-12


def test_solve_dense_errors():
    with pytest.raises(SolverError):
        solve_dense(np.zeros((2, 2)), np.ones(2))
    with pytest.raises(SolverError):
        solve_dense(np.eye(3), np.ones(2))


def test_matrix_export_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    A = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    path = tmp_path / "z.bin"
    write_matrix(path, A)
    data = path.read_bytes()
    assert len(data) == 16 + 16 * 12
    assert np.frombuffer(data[16:24], "<f8")[0] == A[0, 0].real
    assert np.array_equal(read_matrix(path), A)
    path.write_bytes(data[:-8])
    with pytest.raises(MatrixFormatError):
        read_matrix(path)
