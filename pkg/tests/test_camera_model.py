import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cplcalib.camera_model import (
    CameraParams,
    CameraPoint,
    Extrinsics,
    ImageObservation,
    Intrinsics,
    camera_to_world,
    image_to_camera_normalized,
    image_to_camera_stereo,
    inverse_full_projection,
    pitch_rotation,
    project_to_world,
    world_to_image,
)
from cplcalib.errors import DisparityZeroOrNegative, InvalidParams

import oracles

finite = dict(allow_nan=False, allow_infinity=False)
angles = st.floats(-math.pi, math.pi, **finite)
coords = st.floats(-1e3, 1e3, **finite)
focal = st.floats(50, 5000, **finite)
pp = st.floats(0, 2000, **finite)
pixel = st.floats(0, 2000, **finite)
disparity = st.floats(0.1, 500, **finite)


def test_stereo_principal_point():
    params = CameraParams.from_values(1000, 1000, 640, 480, 0.5)
    p = image_to_camera_stereo(params, ImageObservation(640, 480, 10))
    assert (p.x_cam, p.y_cam, p.z_cam) == (50.0, 0.0, 0.0)


def test_stereo_off_axis_matches_oracle():
    params = CameraParams.from_values(1000, 500, 640, 480, 0.5)
    p = image_to_camera_stereo(params, ImageObservation(740, 380, 10))
    expected = oracles.stereo_point(1000, 500, 640, 480, 0.5, 10, 740, 380)
    assert expected == pytest.approx((50.0, -5.0, 10.0), abs=1e-12)
    assert p.as_array() == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("d", [0.0, -3.0])
def test_stereo_rejects_non_positive_disparity(d):
    params = CameraParams.from_values(1000, 1000, 640, 480, 0.5)
    with pytest.raises(DisparityZeroOrNegative):
        image_to_camera_stereo(params, ImageObservation(1, 2, d))


def test_normalized_examples():
    assert image_to_camera_normalized(Intrinsics(1000, 1000, 640, 480), 640, 480).as_array().tolist() == [1, 0, 0]
    p = image_to_camera_normalized(Intrinsics(1000, 500, 640, 480), 740, 380)
    assert p.as_array() == pytest.approx([1.0, 0.1, -0.2], abs=1e-15)


@pytest.mark.parametrize("bad", [dict(f_x=0), dict(f_y=-1), dict(f_x=math.nan), dict(u_0=-1)])
def test_intrinsics_guard(bad):
    kw = dict(f_x=1000, f_y=1000, u_0=640, v_0=480) | bad
    with pytest.raises(InvalidParams):
        Intrinsics(**kw)


def test_camera_to_world_examples():
    assert camera_to_world(Extrinsics(0, 1, 2, 3), CameraPoint(50, 0, 0)).as_array().tolist() == [51, 2, 3]
    p = camera_to_world(Extrinsics(math.pi / 2, 0, 0, 0), CameraPoint(50, 0, 2))
    expected = oracles.to_world(math.pi / 2, (0, 0, 0), (50, 0, 2))
    assert p.as_array() == pytest.approx(expected, abs=1e-12)
    assert p.as_array() == pytest.approx([2, 0, -50], abs=1e-12)
    assert camera_to_world(Extrinsics(0, 0, 0, 0), CameraPoint(1.5, -2.5, 7)).as_array().tolist() == [1.5, -2.5, 7]


def test_project_to_world_chain():
    params = CameraParams.from_values(1000, 1000, 640, 480, 0.5, 0.0, 1, 2, 3)
    assert project_to_world(params, ImageObservation(640, 480, 10)).as_array().tolist() == [51, 2, 3]
    with pytest.raises(DisparityZeroOrNegative):
        project_to_world(params, ImageObservation(640, 480, 0))


def test_theta_normalized():
    assert abs(Extrinsics(3 * math.pi, 0, 0, 0).theta_p) == pytest.approx(math.pi, abs=1e-12)
    assert Extrinsics(2 * math.pi + 0.5, 0, 0, 0).theta_p == pytest.approx(0.5, abs=1e-12)
    assert Extrinsics(0.25, 0, 0, 0).theta_p == 0.25


def test_world_to_image_inverts_chain():
    params = CameraParams.from_values(900, 800, 620, 470, 0.4, 0.2, 1, -2, 3)
    obs = ImageObservation(100.0, 700.0, 12.0)
    back = world_to_image(params, project_to_world(params, obs))
    assert (back.u, back.v, back.d) == pytest.approx((obs.u, obs.v, obs.d), rel=1e-12)


def test_principal_ray_identity_extrinsics():
    ray = inverse_full_projection(Intrinsics(1000, 1000, 640, 480), Extrinsics(0, 0, 0, 0), 640, 480)
    assert ray.origin.tolist() == [0, 0, 0]
    assert ray.direction == pytest.approx([1, 0, 0], abs=1e-15)


def test_ray_rejects_bad_intrinsics():
    with pytest.raises(InvalidParams):
        inverse_full_projection(Intrinsics(1000, 0, 640, 480), Extrinsics(0, 0, 0, 0), 1, 1)


@settings(max_examples=200, deadline=None)
@given(angles)
def test_rotation_orthogonal(theta):
    R = pitch_rotation(theta)
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12


@settings(max_examples=200, deadline=None)
@given(angles, coords, coords, coords, coords, coords, coords, coords, coords, coords)
def test_translation_equivariance(theta, tx, ty, tz, dx, dy, dz, x, y, z):
    p = CameraPoint(x, y, z)
    base = camera_to_world(Extrinsics(theta, tx, ty, tz), p).as_array()
    moved = camera_to_world(Extrinsics(theta, tx + dx, ty + dy, tz + dz), p).as_array()
    assert np.max(np.abs(moved - (base + [dx, dy, dz]))) < 1e-12 * max(1.0, np.max(np.abs(moved)))


@settings(max_examples=200, deadline=None)
@given(focal, focal, pp, pp, st.floats(0.05, 2, **finite), angles, coords, coords, coords, pixel, pixel, disparity)
def test_composition_is_bitwise_and_depth_positive(fx, fy, u0, v0, b, theta, tx, ty, tz, u, v, d):
    params = CameraParams.from_values(fx, fy, u0, v0, b, theta, tx, ty, tz)
    obs = ImageObservation(u, v, d)
    cam = image_to_camera_stereo(params, obs)
    assert cam.x_cam > 0
    assert project_to_world(params, obs) == camera_to_world(params.extrinsics, cam)
    assert project_to_world(params, obs) == project_to_world(params, obs)


@settings(max_examples=200, deadline=None)
@given(focal, focal, pp, pp, st.floats(0.05, 2, **finite), angles, coords, coords, coords, pixel, pixel, disparity)
def test_ray_consistency(fx, fy, u0, v0, b, theta, tx, ty, tz, u, v, d):
    params = CameraParams.from_values(fx, fy, u0, v0, b, theta, tx, ty, tz)
    point = project_to_world(params, ImageObservation(u, v, d)).as_array()
    ray = inverse_full_projection(params.intrinsics, params.extrinsics, u, v)
    dist = ray.distance_to(point)
    assert dist <= 1e-9 * max(1.0, np.linalg.norm(point - ray.origin))
