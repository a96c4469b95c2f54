import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from perspcam.errors import BehindCameraError, DegenerateGeometryError, InvalidArgumentError
from perspcam.projection import (OrthographicCamera, PerspectiveCamera, Translation,
                                 distortion_magnitude, fit_orthographic, project_orthographic,
                                 project_perspective, zolly_heuristic_focal)

points = arrays(float, (12, 3), elements=st.floats(-1, 1, allow_nan=False))


def cam(f=1000.0, size=1000):
    return PerspectiveCamera(f, size, size)


def test_on_axis_point_hits_principal_point():
    uv = project_perspective([[0, 0, 0]], cam(), Translation(0, 0, 2))
    np.testing.assert_array_equal(uv, [[500, 500]])


def test_hand_evaluated_projection():
    uv = project_perspective([[0.1, 0, 0]], cam(), Translation(0, 0, 2))
    np.testing.assert_allclose(uv, [[550, 500]], atol=1e-12)
    uv2 = project_perspective([[0.1, 0, 0]], cam(2000.0), Translation(0, 0, 2))
    np.testing.assert_allclose(uv2, [[600, 500]], atol=1e-12)


def test_behind_camera_lists_indices():
    pts = [[0, 0, 0], [0, 0, -3], [0, 0, 1], [0, 0, -2]]
    with pytest.raises(BehindCameraError) as info:
        project_perspective(pts, cam(), Translation(0, 0, 2))
    assert info.value.indices == [1, 3]


def test_camera_and_translation_validation():
    with pytest.raises(InvalidArgumentError):
        PerspectiveCamera(0.0, 10, 10)
    with pytest.raises(InvalidArgumentError):
        PerspectiveCamera(10.0, 10, 10, cx=11.0)
    with pytest.raises(InvalidArgumentError):
        Translation(0, 0, 0)
    with pytest.raises(InvalidArgumentError):
        OrthographicCamera(-1.0)
    assert cam().principal == (500.0, 500.0)


def test_orthographic_examples():
    c = OrthographicCamera(100.0, 10.0, 20.0)
    np.testing.assert_array_equal(project_orthographic([[0, 0, 7.5]], c), [[10, 20]])
    np.testing.assert_array_equal(project_orthographic([[1, 1, 0]], OrthographicCamera(100.0)),
                                  [[100, 100]])


@given(pts=points, s=st.floats(0.1, 100))
def test_orthographic_linear_in_scale(pts, s):
    a = project_orthographic(pts, OrthographicCamera(s, 3.0, -2.0))
    b = project_orthographic(pts, OrthographicCamera(2 * s, 3.0, -2.0))
    np.testing.assert_allclose(b - [3.0, -2.0], 2 * (a - [3.0, -2.0]), rtol=1e-12, atol=1e-9)


@given(pts=points, f=st.floats(10, 5000), a=st.floats(0.1, 10),
       tz=st.floats(1.5, 50), cx=st.floats(0, 640), cy=st.floats(0, 480))
def test_focal_homogeneity(pts, f, a, tz, cx, cy):
    t = Translation(0.1, -0.2, tz)
    base = project_perspective(pts, PerspectiveCamera(f, 640, 480, cx, cy), t)
    scaled = project_perspective(pts, PerspectiveCamera(a * f, 640, 480, cx, cy), t)
    np.testing.assert_allclose(scaled, a * (base - [cx, cy]) + [cx, cy], rtol=0, atol=1e-9)


def test_fit_orthographic_recovers_exact_affine():
    pts = np.random.default_rng(1).normal(size=(30, 3))
    truth = OrthographicCamera(42.0, 5.0, -7.0)
    fitted, residual = fit_orthographic(pts, project_orthographic(pts, truth))
    assert fitted.scale == pytest.approx(42.0)
    assert (fitted.tx, fitted.ty) == pytest.approx((5.0, -7.0))
    assert np.abs(residual).max() < 1e-9


def test_distortion_far_limit(rest_mesh):
    assert distortion_magnitude(rest_mesh, 1e6) < 1e-4


def test_distortion_decreasing_on_default_body(rest_mesh):
    values = [distortion_magnitude(rest_mesh, tz) for tz in (0.5, 1.0, 2.0, 5.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_fronto_parallel_plane_has_no_distortion():
    square = np.array([[-0.5, -0.5, 0.3], [0.5, -0.5, 0.3], [0.5, 0.5, 0.3], [-0.5, 0.5, 0.3]])
    assert distortion_magnitude(square, 2.0) < 1e-12


def test_distortion_rejects_collinear_points():
    line = np.column_stack([np.linspace(0, 1, 5), np.zeros(5), np.linspace(0, 1, 5)])
    with pytest.raises(DegenerateGeometryError):
        distortion_magnitude(line, 3.0)


@given(k=st.floats(0.2, 5), tz=st.floats(1.2, 20))
def test_distortion_similarity_invariance(rest_mesh, k, tz):
    a = distortion_magnitude(rest_mesh.vertices, tz)
    b = distortion_magnitude(k * rest_mesh.vertices, k * tz)
    assert b == pytest.approx(a, rel=1e-9)


def test_zolly_examples():
    assert zolly_heuristic_focal(1.0, 512.0, 2.0) == 512.0
    assert zolly_heuristic_focal(0.5, 1000.0, 1.0) == 250.0
    with pytest.raises(InvalidArgumentError):
        zolly_heuristic_focal(1.0, 512.0, 0.0)
