import json

import numpy as np
import pytest

from spline_mom.errors import GeometryError, SchemaError, WatertightnessError
from spline_mom.models import (
    ALMOND_LENGTH,
    almond_point,
    load_geometry,
    make_almond,
    make_sphere,
    save_geometry,
    surface_from_dict,
    surface_to_dict,
)


@pytest.fixture(scope="module")
def almond():
    return make_almond()


def test_sphere_radius_oracle():
    sphere = make_sphere()
    rng = np.random.default_rng(0)
    worst = 0.0
    for patch in sphere.patches:
        s, t = rng.random(1700), rng.random(1700)
        worst = max(worst, np.abs(np.linalg.norm(patch.map_point(s, t), axis=1) - 1).max())
    assert worst < 1e-9
    centre = sphere.patches[0].map_point([0.5], [0.5])
    assert abs(np.linalg.norm(centre) - 1) < 1e-10


def test_scaled_sphere():
    sphere = make_sphere(2.0)
    x = sphere.patches[3].map_point(np.random.default_rng(1).random(100), np.linspace(0, 1, 100))
    assert np.allclose(np.linalg.norm(x, axis=1), 2.0, atol=1e-9)


def test_almond_analytic_points():
    L = ALMOND_LENGTH
    x = almond_point(0.0, 0.0)
    assert np.allclose(x, [0.0, 0.193333 * L, 0.0])
    assert np.allclose(almond_point(0.0, -0.416667)[0], -0.416667 * L)
    # back tip: the profile closes at the end of the parameter range
    assert np.allclose(almond_point(0.3, 0.58333)[1:], 0.0, atol=1e-4 * L)


def test_almond_structure(almond):
    assert len(almond.patches) == 4
    assert all(p.degrees == (3, 3) for p in almond.patches)
    assert almond.n_elements == 288
    assert len(almond.degenerate_sides) == 4
    assert almond.degenerate_points.shape == (2, 3)
    tips = np.sort(almond.degenerate_points[:, 0])
    assert np.allclose(tips, [-0.416667 * ALMOND_LENGTH, 0.58333 * ALMOND_LENGTH], atol=1e-6)
    for e in almond.edges:
        assert almond.edge_mismatch(e) < 1e-10


def test_almond_fit_tolerance(almond):
    assert almond.fit.relative_deviation < 1e-4
    assert almond.fit.junction_normal_defect < 1e-2


def test_almond_extent(almond):
    pts = np.concatenate([p.map_point(*np.random.default_rng(2).random((2, 500))) for p in almond.patches])
    L = ALMOND_LENGTH
    assert pts[:, 0].min() >= -0.416667 * L - 1e-9
    assert pts[:, 0].max() <= 0.58333 * L + 1e-9
    assert np.abs(pts[:, 1]).max() <= 0.193333 * L * (1 + 1e-4)


def test_almond_fit_failure():
    with pytest.raises(GeometryError):
        make_almond(tol=1e-12)


def test_round_trip_is_bit_stable(tmp_path, almond):
    for surf in (make_sphere(), almond):
        path = tmp_path / "g.json"
        save_geometry(surf, path)
        back = load_geometry(path)
        assert len(back.patches) == len(surf.patches)
        for a, b in zip(surf.patches, back.patches):
            assert np.array_equal(a.control, b.control)
            assert np.array_equal(a.kv_s.knots, b.kv_s.knots)
            assert np.array_equal(a.kv_t.knots, b.kv_t.knots)
        assert back.edges == surf.edges
        assert back.degenerate_sides == surf.degenerate_sides
        save_geometry(back, tmp_path / "h.json")
        assert (tmp_path / "g.json").read_bytes() == (tmp_path / "h.json").read_bytes()


def test_schema_errors_carry_context():
    doc = surface_to_dict(make_sphere())
    bad = json.loads(json.dumps(doc))
    bad["patches"][2]["control_points"] = bad["patches"][2]["control_points"][:-1]
    with pytest.raises(SchemaError, match="patch 2"):
        surface_from_dict(bad)
    bad = json.loads(json.dumps(doc))
    bad["edges"][4]["sides"] = [0, 7]
    with pytest.raises(SchemaError, match="edge 4"):
        surface_from_dict(bad)
    bad = json.loads(json.dumps(doc))
    del bad["edges"]
    with pytest.raises(SchemaError):
        surface_from_dict(bad)
    bad = json.loads(json.dumps(doc))
    bad["version"] = 99
    with pytest.raises(SchemaError):
        surface_from_dict(bad)
    bad = json.loads(json.dumps(doc))
    bad["degenerate"] = [[0, 1]]
    with pytest.raises(SchemaError):
        surface_from_dict(bad)


def test_non_watertight_document_rejected():
    doc = surface_to_dict(make_sphere())
    cp = np.array(doc["patches"][0]["control_points"])
    cp[0, :3] += 1e-3 * cp[0, 3]
    doc["patches"][0]["control_points"] = cp.tolist()
    with pytest.raises(WatertightnessError):
        surface_from_dict(doc)


def test_invalid_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(SchemaError):
        load_geometry(p)
