import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpdm_ct.geometry import (
    ConeBeamGeometry, GeometryError, ProjectionStack, Volume, VolumeGrid, detector_coords,
    from_primary_slices, from_secondary_slices, make_geometry, primary_slices, ray_for_pixel,
    secondary_slices,
)


def test_defaults_and_shape():
    g = make_geometry()
    assert g.shape == (64, 64, 64)
    assert g.magnification == pytest.approx(2.0)
    assert g.is_uniform()
    assert g.angles[1] - g.angles[0] == pytest.approx(2 * math.pi / 64)


def test_json_round_trip(tmp_path):
    g = make_geometry(n_angles=7, fov_radius=9.5)
    d = g.to_dict()
    assert set(d) == {"dso_mm", "dsd_mm", "n_cols", "n_rows", "pixel_size_mm", "n_angles",
                      "angles_rad", "fov_radius_mm"}
    assert ConeBeamGeometry.from_dict(d) == g
    g.to_json(tmp_path / "g.json")
    assert ConeBeamGeometry.from_json(tmp_path / "g.json") == g
    assert ConeBeamGeometry.from_json(g.to_json()) == g


@pytest.mark.parametrize("kw", [
    {"dso": -1}, {"dsd": 50}, {"n_cols": 0}, {"pixel_size": 0}, {"fov_radius": 0},
    {"angles": [0.0, 0.0]}, {"angles": [0.0, 7.0], "n_angles": 2}, {"n_angles": 0},
])
def test_invalid_geometry(kw):
    with pytest.raises(GeometryError):
        make_geometry(**kw)


def test_missing_json_key():
    d = make_geometry().to_dict()
    del d["dso_mm"]
    with pytest.raises(GeometryError):
        ConeBeamGeometry.from_dict(d)


def test_angles_read_only():
    g = make_geometry(n_angles=4)
    with pytest.raises(ValueError):
        g.angles[0] = 1.0


def test_non_uniform_detected():
    g = make_geometry(angles=[0.0, 0.5, 3.0], n_angles=3)
    assert not g.is_uniform()
    assert not make_geometry(n_angles=1).is_uniform()


def test_central_ray_hits_isocentre():
    g = make_geometry(n_cols=5, n_rows=5, n_angles=8)
    for k in range(8):
        src, d = ray_for_pixel(g, 2, 2, k)
        # closest approach to the origin
        t = -src @ d
        assert np.linalg.norm(src + t * d) < 1e-12
        assert t == pytest.approx(g.dso)


def test_ray_reaches_its_pixel():
    g = make_geometry(n_cols=6, n_rows=4, n_angles=5, pixel_size=1.5)
    v, u = detector_coords(g)
    src, d = ray_for_pixel(g, 5, 0, 3)
    th = g.angles[3]
    e_w = -np.array([math.cos(th), math.sin(th), 0.0])
    t = g.dsd / (d @ e_w)
    p = src + t * d
    e_u = np.array([-math.sin(th), math.cos(th), 0.0])
    assert (p - src) @ e_w == pytest.approx(g.dsd)
    assert p @ e_u == pytest.approx(u[0])
    assert p[2] == pytest.approx(v[5])


def test_ray_index_errors():
    g = make_geometry(n_cols=4, n_rows=4, n_angles=2)
    with pytest.raises(IndexError):
        ray_for_pixel(g, 4, 0, 0)


def test_volume_grid_centred():
    grid = VolumeGrid(4, 5, 6, 0.5)
    x, y, z = grid.axes()
    assert x.mean() == pytest.approx(0) and y.mean() == pytest.approx(0) and z.mean() == pytest.approx(0)
    assert VolumeGrid.from_dict(grid.to_dict()) == grid


def test_volume_validation():
    grid = VolumeGrid(2, 2, 2, 1.0)
    with pytest.raises(GeometryError):
        Volume(grid, np.zeros((2, 2, 3)), "mu")
    with pytest.raises(GeometryError):
        Volume(grid, np.full((2, 2, 2), 0.5), "mask")
    with pytest.raises(GeometryError):
        Volume(grid, np.zeros((2, 2, 2)), "furlong")


def test_stack_validation():
    g = make_geometry(n_cols=3, n_rows=4, n_angles=5)
    with pytest.raises(GeometryError):
        ProjectionStack(g, np.zeros((4, 3, 5)), "line-integral")
    with pytest.raises(GeometryError):
        ProjectionStack(g, -np.ones(g.shape), "count")
    with pytest.raises(GeometryError):
        ProjectionStack(g, np.zeros(g.shape), "sinogram")
    p = ProjectionStack(g, np.zeros(g.shape), "line-integral", {"a": 1})
    q = p.replace(np.ones(g.shape), "normalized", b=2)
    assert q.domain_tag == "normalized" and q.meta == {"a": 1, "b": 2}


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_slice_views_round_trip(d1, d2, d3):
    x = np.arange(d1 * d2 * d3, dtype=float).reshape(d1, d2, d3)
    p = primary_slices(x)
    assert p.shape == (d3, d1, d2)
    np.testing.assert_array_equal(p[-1], x[:, :, -1])
    np.testing.assert_array_equal(from_primary_slices(p), x)
    s = secondary_slices(x)
    assert s.shape == (d1, d2, d3)
    np.testing.assert_array_equal(s[0], x[0])
    np.testing.assert_array_equal(from_secondary_slices(s), x)
