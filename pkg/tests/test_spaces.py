import numpy as np
import pytest

from spline_mom.errors import SpaceError
from spline_mom.geometry import MultipatchSurface, NurbsPatch, match_edges, side_param
from spline_mom.models import make_almond, make_sphere
from spline_mom.spaces import (
    ConformingSpace,
    eval_curl_basis,
    eval_div_basis,
    evaluate_field,
    parse_degree_pair,
)
from spline_mom.spline import KnotVector

TABLE_SPHERE = {
    0: (12, 48, 108, 192),
    1: (48, 108, 192, 300),
    2: (192, 300, 432, 588),
    3: (768, 972, 1200, 1452),
    4: (3072, 3468, 3888, 4332),
}
TABLE_ALMOND = {0: (558, 700, 858), 1: (2268, 2546, 2840), 2: (9144, 9694, 10260)}
DEGREES = ("1,0", "2,1", "3,2", "4,3")


@pytest.fixture(scope="module")
def sphere():
    return make_sphere()


@pytest.fixture(scope="module")
def almond():
    return make_almond()


def random_patch(seed=0, p=3, n_el=2, scale=1.0):
    rng = np.random.default_rng(seed)
    kv = KnotVector.uniform(n_el, p)
    g = np.linspace(0, 1, kv.n)
    S, T = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([S, T, 0.3 * np.sin(2 * S + T)], axis=-1) + 0.02 * rng.standard_normal((kv.n, kv.n, 3))
    w = rng.uniform(0.7, 1.4, (kv.n, kv.n))
    return NurbsPatch.from_points(kv, kv, scale * pts, w)


def flat_patch(n_el=1, p=2, offset=0.0):
    kv = KnotVector.uniform(n_el, 1)
    g = np.linspace(0, 1, kv.n)
    S, T = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([S + offset, T, 0 * S], axis=-1)
    patch = NurbsPatch.from_points(kv, kv, pts)
    return patch.refine() if p == 1 else _elevated(patch, p)


def _elevated(patch, p):
    # a flat bilinear map represented at degree p by exact interpolation
    kv = KnotVector.from_breaks(patch.breaks_s, p)
    gre = np.array([kv.knots[i + 1: i + p + 1].mean() for i in range(kv.n)])
    S, T = np.meshgrid(gre, gre, indexing="ij")
    x = patch.map_point(S.ravel(), T.ravel()).reshape(kv.n, kv.n, 3)
    return NurbsPatch.from_points(kv, kv, x)


def test_parse_degree_pair():
    assert parse_degree_pair("1,0") == (1, 1)
    assert parse_degree_pair("4,3") == (4, 4)
    assert parse_degree_pair((2, 1)) == (2, 2)


@pytest.mark.parametrize("h", sorted(TABLE_SPHERE))
def test_sphere_dof_table(sphere, h):
    surf = sphere.refine(h)
    dims = tuple(ConformingSpace(surf, "div", parse_degree_pair(d)).global_dim for d in DEGREES)
    assert dims == TABLE_SPHERE[h]


@pytest.mark.parametrize("h", sorted(TABLE_ALMOND))
def test_almond_dof_table(almond, h):
    surf = almond.refine(h)
    dims = tuple(ConformingSpace(surf, "div", parse_degree_pair(d)).global_dim for d in DEGREES[:3])
    assert dims == TABLE_ALMOND[h]


def test_degenerate_functions_can_be_retained(almond):
    kept = ConformingSpace(almond, "div", (1, 1), drop_degenerate=False)
    dropped = ConformingSpace(almond, "div", (1, 1))
    # one normal-component function per collapsed side and circumferential element
    assert kept.global_dim > dropped.global_dim


def test_invalid_space_arguments(sphere):
    with pytest.raises(SpaceError):
        ConformingSpace(sphere, "grad", (1, 1))
    with pytest.raises(SpaceError):
        ConformingSpace(sphere, "div", (0, 1))
    space = ConformingSpace(sphere, "div", (1, 1))
    with pytest.raises(SpaceError):
        evaluate_field(space, np.zeros(3), 0, [0.5], [0.5])


def test_local_counts_add_up(sphere):
    space = ConformingSpace(sphere.refine(1), "div", (2, 2))
    for ps, n in zip(space.patch_spaces, space.n_local):
        assert sum(ps.counts) == n
        # every local function maps to exactly one global DOF
    allg = np.concatenate(space.connectivity)
    assert set(allg.tolist()) == set(range(space.global_dim))


def test_flat_patch_physical_equals_parametric():
    surf = MultipatchSurface([flat_patch(n_el=2, p=2)], [])
    space = ConformingSpace(surf, "div", (2, 2))
    el = surf.elements[3]
    u, v = np.array([0.2, 0.7]), np.array([0.4, 0.9])
    eb = eval_div_basis(space, el, u, v)
    assert np.allclose(eb.surface_element, 1.0)
    vals = eb.values
    # first-component functions point along x, second along y
    n1 = space.patch_spaces[0].counts[0]
    local, _, _, keep = space.element_dofs(el)
    first = local[keep] < n1
    assert np.allclose(vals[:, first, 1:], 0.0)
    assert np.allclose(vals[:, ~first][:, :, [0, 2]], 0.0)
    cb = eval_curl_basis(space, el, u, v)
    # rotation by the normal maps x to y and y to -x
    assert np.allclose(cb.values[:, first, 1], vals[:, first, 0])


def test_scaling_geometry_scales_basis():
    a = MultipatchSurface([random_patch(1)], [])
    b = MultipatchSurface([random_patch(1, scale=3.0)], [])
    sa, sb = ConformingSpace(a, "div", (2, 2)), ConformingSpace(b, "div", (2, 2))
    u, v = np.array([0.3, 0.6]), np.array([0.5, 0.1])
    ea = eval_div_basis(sa, a.elements[1], u, v)
    eb = eval_div_basis(sb, b.elements[1], u, v)
    assert np.allclose(eb.values, ea.values / 3.0)
    assert np.allclose(eb.div, ea.div / 9.0)


def test_piola_formula():
    patch = random_patch(2)
    surf = MultipatchSurface([patch], [])
    space = ConformingSpace(surf, "div", (3, 3))
    el = surf.elements[2]
    u, v = np.array([0.25]), np.array([0.75])
    eb = eval_div_basis(space, el, u, v)
    s = el.s0 + u * (el.s1 - el.s0)
    t = el.t0 + v * (el.t1 - el.t0)
    fr = patch.surface_frame(s, t)
    (B1, _), (B2, _) = space._component_values(el, u, v)
    _, _, sg, keep = space.element_dofs(el)
    hat = np.zeros((B1.shape[1] + B2.shape[1], 2))
    hat[: B1.shape[1], 0] = B1[0]
    hat[B1.shape[1]:, 1] = B2[0]
    expect = (hat @ fr.jacobian[0].T) / fr.surface_element[0]
    assert np.allclose(eb.values[0], expect[keep] * sg[keep][:, None], atol=1e-12)


def _pulled_back_flux(space, patch, coef, s, t):
    f = evaluate_field(space, coef, 0, np.array([s]), np.array([t]))
    fr = patch.surface_frame(np.array([s]), np.array([t]))
    return fr.surface_element[0] * (fr.pseudoinverse[0] @ f[0])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_divergence_matches_finite_differences(seed):
    patch = random_patch(seed)
    surf = MultipatchSurface([patch], [])
    space = ConformingSpace(surf, "div", (3, 3))
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(space.global_dim)
    for s, t in rng.uniform(0.05, 0.95, (4, 2)):
        _, dv = evaluate_field(space, coef, 0, np.array([s]), np.array([t]), with_div=True)
        h = 1e-6
        fd = (
            (_pulled_back_flux(space, patch, coef, s + h, t) - _pulled_back_flux(space, patch, coef, s - h, t))[0]
            + (_pulled_back_flux(space, patch, coef, s, t + h) - _pulled_back_flux(space, patch, coef, s, t - h))[1]
        ) / (2 * h)
        fd /= patch.surface_frame(np.array([s]), np.array([t])).surface_element[0]
        assert abs(dv[0] - fd) / max(1.0, abs(dv[0])) < 1e-5


def test_piola_divergence_commutation():
    # div of the mapped field equals the parametric divergence over J
    patch = random_patch(4)
    surf = MultipatchSurface([patch], [])
    space = ConformingSpace(surf, "div", (2, 2))
    el = surf.elements[0]
    u, v = np.array([0.3, 0.8]), np.array([0.6, 0.2])
    eb = eval_div_basis(space, el, u, v)
    (_, d1), (_, d2) = space._component_values(el, u, v)
    _, _, sg, keep = space.element_dofs(el)
    hat_div = np.concatenate([d1, d2], axis=1)[:, keep] * sg[keep]
    assert np.allclose(eb.div, hat_div / eb.surface_element[:, None], atol=1e-10)


@pytest.mark.parametrize("model", ["sphere", "almond"])
def test_curl_div_relation(model, sphere, almond):
    surf = sphere.refine(1) if model == "sphere" else almond
    space = ConformingSpace(surf, "div", (2, 2))
    rng = np.random.default_rng(5)
    for el in surf.elements[:: max(1, surf.n_elements // 12)]:
        u, v = rng.uniform(0.05, 0.95, (2, 6))
        d = eval_div_basis(space, el, u, v)
        c = eval_curl_basis(space, el, u, v)
        back = -np.cross(d.normal[:, None, :], c.values)
        assert np.abs(back - d.values).max() <= 1e-10 * max(1.0, np.abs(d.values).max())
        tang = np.abs(np.einsum("mnc,mc->mn", c.values, c.normal)).max()
        assert tang <= 1e-12 * max(1.0, np.abs(c.values).max())


def _outward_conormal(frame, side):
    tangent = frame.jacobian[:, :, 0 if side in (0, 2) else 1]
    tangent = tangent / np.linalg.norm(tangent, axis=1)[:, None]
    inward = frame.jacobian[:, :, 1 if side in (0, 2) else 0]
    inward = inward - np.einsum("mi,mi->m", inward, tangent)[:, None] * tangent
    nu = inward / np.linalg.norm(inward, axis=1)[:, None]
    return (1.0 if side in (1, 2) else -1.0) * nu, tangent


def _edge_jumps(surf, space, coef, kind):
    tau = np.linspace(0.01, 0.99, 100)
    worst = 0.0
    for e in surf.edges:
        pa, pb = surf.patches[e.patch_a], surf.patches[e.patch_b]
        sa, ta = side_param(e.side_a, tau)
        sb, tb = side_param(e.side_b, 1 - tau if e.reversed else tau)
        fa = evaluate_field(space, coef, e.patch_a, sa, ta)
        fb = evaluate_field(space, coef, e.patch_b, sb, tb)
        nu_a, tan_a = _outward_conormal(pa.surface_frame(sa, ta), e.side_a)
        nu_b, tan_b = _outward_conormal(pb.surface_frame(sb, tb), e.side_b)
        if kind == "div":
            jump = np.abs(np.einsum("mi,mi->m", fa, nu_a) + np.einsum("mi,mi->m", fb, nu_b))
        else:
            sign = np.sign(np.einsum("mi,mi->m", tan_a, tan_b))
            jump = np.abs(np.einsum("mi,mi->m", fa, tan_a) - sign * np.einsum("mi,mi->m", fb, tan_b))
        worst = max(worst, jump.max() / np.abs(fa).max())
    return worst


@pytest.mark.parametrize("model", ["sphere", "almond"])
@pytest.mark.parametrize("kind", ["div", "curl"])
def test_cross_edge_continuity(model, kind, sphere, almond):
    surf = sphere.refine(1) if model == "sphere" else almond
    space = ConformingSpace(surf, kind, (2, 2))
    coef = np.random.default_rng(6).standard_normal(space.global_dim)
    assert _edge_jumps(surf, space, coef, kind) < 1e-10


def _curved(x, y):
    return 0.3 * np.sin(2 * x + y)


def _reversed_pair():
    kv = KnotVector.uniform(2, 2)
    g = np.linspace(0, 1, kv.n)
    S, T = np.meshgrid(g, g, indexing="ij")
    a = NurbsPatch.from_points(kv, kv, np.stack([S, T, _curved(S, T)], axis=-1))
    # second patch runs its t parameter downwards, so the shared edge is reversed
    Tb = T[:, ::-1]
    b = NurbsPatch.from_points(kv, kv, np.stack([1 + S, Tb, _curved(1 + S, Tb)], axis=-1))
    return a, b


def test_continuity_with_reversed_edges_and_reordered_patches():
    a, b = _reversed_pair()
    dims = set()
    for patches in ([a, b], [b, a]):
        edges = match_edges(patches, tol=1e-9)
        assert len(edges) == 1 and edges[0].reversed
        surf = MultipatchSurface(patches, edges)
        space = ConformingSpace(surf, "div", (2, 2))
        dims.add(space.global_dim)
        coef = np.random.default_rng(8).standard_normal(space.global_dim)
        assert _edge_jumps(surf, space, coef, "div") < 1e-10
    assert len(dims) == 1


def test_zero_and_single_coefficient_fields(sphere):
    space = ConformingSpace(sphere, "div", (2, 2))
    f = evaluate_field(space, np.zeros(space.global_dim), 2, [0.3, 0.8], [0.1, 0.5])
    assert np.all(f == 0)
    coef = np.zeros(space.global_dim)
    coef[5] = 1.0
    els = space.dof_elements[5]
    el = sphere.elements[els[0]]
    eb = eval_div_basis(space, el, [0.4], [0.6])
    idx = list(eb.dofs).index(5)
    s = el.s0 + 0.4 * (el.s1 - el.s0)
    t = el.t0 + 0.6 * (el.t1 - el.t0)
    f = evaluate_field(space, coef, el.patch, [s], [t])
    assert np.allclose(f[0], eb.values[0, idx])


def test_dof_boxes_cover_supports(sphere):
    surf = sphere.refine(1)
    space = ConformingSpace(surf, "div", (2, 2))
    boxes = space.dof_bounding_boxes
    rng = np.random.default_rng(9)
    for el in surf.elements[::3]:
        eb = eval_div_basis(space, el, *rng.random((2, 10)))
        for d in eb.dofs:
            assert np.all(eb.point >= boxes[d, 0] - 1e-12)
            assert np.all(eb.point <= boxes[d, 1] + 1e-12)


def _basis_samples(space, params):
    cols = []
    for k in range(space.global_dim):
        coef = np.zeros(space.global_dim)
        coef[k] = 1.0
        vals = [evaluate_field(space, coef, ip, s, t) for ip, s, t in params]
        cols.append(np.concatenate(vals).ravel())
    return np.array(cols).T


def test_edge_orientation_leaves_field_space_unchanged():
    a, b_rev = _reversed_pair()
    kv = a.kv_s
    g = np.linspace(0, 1, kv.n)
    S, T = np.meshgrid(g, g, indexing="ij")
    b = NurbsPatch.from_points(kv, kv, np.stack([1 + S, T, _curved(1 + S, T)], axis=-1))
    rng = np.random.default_rng(10)
    s, t = rng.uniform(0.02, 0.98, (2, 15))
    rev = MultipatchSurface([a, b_rev], match_edges([a, b_rev]))
    fwd = MultipatchSurface([a, b], match_edges([a, b]))
    assert rev.edges[0].reversed and not fwd.edges[0].reversed
    sr, sf = ConformingSpace(rev, "div", (2, 2)), ConformingSpace(fwd, "div", (2, 2))
    Mr = _basis_samples(sr, [(0, s, t), (1, s, 1 - t)])
    Mf = _basis_samples(sf, [(0, s, t), (1, s, t)])
    rank = np.linalg.matrix_rank
    assert rank(Mr) == rank(Mf) == sr.global_dim
    assert rank(np.hstack([Mr, Mf]), tol=1e-9) == sr.global_dim
