import json

import numpy as np
import pytest

from cvxjet.errors import InvalidJetSet, NoInteriorPoint
from cvxjet.fixtures import circle_normals
from cvxjet.surface import (FunctionModel, NormalData, icosphere, level_set_extract,
                            surface_from_normals, tangency_residuals, write_obj,
                            write_polyline_csv, write_sidecar)


def paraboloid(dim, r=1.0):
    return FunctionModel(lambda x: np.sum(x * x, 1) - r * r, lambda x: 2 * x, dim)


def test_normals_must_be_unit():
    with pytest.raises(InvalidJetSet):
        NormalData([[1.0, 0.0]], [[2.0, 0.0]])


def test_normal_data_round_trip():
    nd = circle_normals()
    back = NormalData.from_dict(json.loads(json.dumps(nd.to_dict())))
    np.testing.assert_array_equal(back.points, nd.points)


def test_icosphere_counts():
    v, f = icosphere(2)
    assert len(f) == 20 * 16
    assert len(v) == 10 * 16 + 2
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0)


def test_paraboloid_circle_radius():
    mesh = level_set_extract(paraboloid(2, 1.3), ([-3, -3], [3, 3]), resolution=64)
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.3, atol=1e-8)
    assert len(mesh.cells) == 64


def test_paraboloid_sphere():
    mesh = level_set_extract(paraboloid(3), ([-2] * 3, [2] * 3), resolution=2)
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, atol=1e-8)
    np.testing.assert_allclose(mesh.normals, mesh.vertices, atol=1e-7)


def test_no_interior_point():
    m = FunctionModel(lambda x: np.sum(x * x, 1) + 1.0, lambda x: 2 * x, 2)
    with pytest.raises(NoInteriorPoint):
        level_set_extract(m, ([-1, -1], [1, 1]), resolution=8)


def test_dimension_check():
    with pytest.raises(ValueError):
        level_set_extract(paraboloid(1), ([-1], [1]))


def test_circle_surface():
    nd = circle_normals()
    model = surface_from_normals(nd)
    np.testing.assert_allclose(model.value(nd.points), 0.0, atol=1e-10)
    assert tangency_residuals(model, nd).max() < 1e-6
    mesh = level_set_extract(model, ([-3, -3], [3, 3]), resolution=256)
    assert mesh.distance_to(nd.points).max() < 1e-3
    assert np.abs(mesh.residuals).max() < 1e-8


def test_writers(tmp_path):
    mesh2 = level_set_extract(paraboloid(2), ([-2, -2], [2, 2]), resolution=8)
    write_polyline_csv(mesh2, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x,y,nx,ny" and len(lines) == 9
    float(lines[1].split(",")[0])
    write_sidecar(mesh2, tmp_path / "c.json", {"note": 1})
    assert json.loads((tmp_path / "c.json").read_text())["vertices"] == 8
    with pytest.raises(ValueError):
        write_obj(mesh2, tmp_path / "x.obj")
    mesh3 = level_set_extract(paraboloid(3), ([-2] * 3, [2] * 3), resolution=1)
    write_obj(mesh3, tmp_path / "s.obj")
    txt = (tmp_path / "s.obj").read_text()
    assert txt.count("\nf ") + txt.startswith("f ") == 80
