"""Pinhole/stereo camera types and the image -> camera -> world projection chain.

Camera frame convention: x points forward (depth), y is lateral, z is vertical.
Depth comes from disparity, ``x_cam = f_x * b / d``.  Rotation is pitch only,
about the lateral axis.

The scalar functions in this module are thin wrappers over the array kernels
``stereo_to_camera`` and ``rotate_translate``.  The kernels only use ``+ - * /``
and unary minus, so they evaluate identically on floats, numpy arrays and
:class:`cplcalib.diff.Dual` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DisparityZeroOrNegative, InvalidParams


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class Intrinsics:
    f_x: float
    f_y: float
    u_0: float
    v_0: float

    def __post_init__(self) -> None:
        if not _finite(self.f_x, self.f_y, self.u_0, self.v_0):
            raise InvalidParams(f"non-finite intrinsics: {self}")
        if self.f_x <= 0 or self.f_y <= 0:
            raise InvalidParams(f"focal lengths must be positive, got f_x={self.f_x}, f_y={self.f_y}")
        if self.u_0 < 0 or self.v_0 < 0:
            raise InvalidParams(f"principal point must be non-negative, got ({self.u_0}, {self.v_0})")

    def matrix(self) -> np.ndarray:
        return np.array([[self.f_x, 0.0, self.u_0], [0.0, self.f_y, self.v_0], [0.0, 0.0, 1.0]])

    def inverse_matrix(self) -> np.ndarray:
        """Closed-form K^-1 for zero skew."""
        return np.array(
            [
                [1.0 / self.f_x, 0.0, -self.u_0 / self.f_x],
                [0.0, 1.0 / self.f_y, -self.v_0 / self.f_y],
                [0.0, 0.0, 1.0],
            ]
        )


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [-pi, pi].  Values already in range are returned unchanged."""
    if -math.pi <= theta <= math.pi:
        return theta
    return math.remainder(theta, 2.0 * math.pi)


@dataclass(frozen=True)
class Extrinsics:
    theta_p: float
    t_x: float
    t_y: float
    t_z: float

    def __post_init__(self) -> None:
        if not _finite(self.theta_p, self.t_x, self.t_y, self.t_z):
            raise InvalidParams(f"non-finite extrinsics: {self}")
        object.__setattr__(self, "theta_p", normalize_angle(self.theta_p))

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.t_x, self.t_y, self.t_z])

    def rotation(self) -> np.ndarray:
        return pitch_rotation(self.theta_p)


@dataclass(frozen=True)
class RigParams:
    b: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.b) or self.b <= 0:
            raise InvalidParams(f"baseline must be positive and finite, got {self.b}")


@dataclass(frozen=True)
class CameraParams:
    """The nine camera-level scalars.  Disparity lives on each observation."""

    intrinsics: Intrinsics
    rig: RigParams
    extrinsics: Extrinsics

    @classmethod
    def from_values(
        cls,
        f_x: float,
        f_y: float,
        u_0: float,
        v_0: float,
        b: float,
        theta_p: float = 0.0,
        t_x: float = 0.0,
        t_y: float = 0.0,
        t_z: float = 0.0,
    ) -> CameraParams:
        return cls(Intrinsics(f_x, f_y, u_0, v_0), RigParams(b), Extrinsics(theta_p, t_x, t_y, t_z))


@dataclass(frozen=True)
class ImageObservation:
    u: float
    v: float
    d: float


@dataclass(frozen=True)
class CameraPoint:
    x_cam: float
    y_cam: float
    z_cam: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_cam, self.y_cam, self.z_cam])


@dataclass(frozen=True)
class WorldPoint:
    X: float
    Y: float
    Z: float

    def __post_init__(self) -> None:
        if not _finite(self.X, self.Y, self.Z):
            raise InvalidParams(f"world point must be finite, got ({self.X}, {self.Y}, {self.Z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z])


def pitch_rotation(theta: float) -> np.ndarray:
    """Camera-to-world rotation about the lateral (y) axis."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# --- array kernels -------------------------------------------------------


def stereo_to_camera(f_x, f_y, u_0, v_0, b, d, u, v):
    x_cam = f_x * b / d
    y_cam = -(x_cam / f_x) * (u - u_0)
    z_cam = (x_cam / f_y) * (v_0 - v)
    return x_cam, y_cam, z_cam


def rotate_translate(cos_t, sin_t, t_x, t_y, t_z, x_cam, y_cam, z_cam):
    X = x_cam * cos_t + z_cam * sin_t + t_x
    Y = y_cam + t_y
    Z = -x_cam * sin_t + z_cam * cos_t + t_z
    return X, Y, Z


# --- scalar API ----------------------------------------------------------


def image_to_camera_stereo(params: CameraParams, obs: ImageObservation) -> CameraPoint:
    if not obs.d > 0:
        raise DisparityZeroOrNegative(f"disparity must be > 0, got {obs.d}")
    k = params.intrinsics
    x, y, z = stereo_to_camera(k.f_x, k.f_y, k.u_0, k.v_0, params.rig.b, obs.d, obs.u, obs.v)
    return CameraPoint(x, y, z)


def image_to_camera_normalized(intr: Intrinsics, u: float, v: float) -> CameraPoint:
    """Monocular back-projection with unit depth.

    Note the lateral sign is opposite to :func:`image_to_camera_stereo`; both
    forms are kept verbatim and only the stereo form feeds the loss.
    """
    if not isinstance(intr, Intrinsics):
        raise InvalidParams("expected Intrinsics")
    return CameraPoint(1.0, (u - intr.u_0) / intr.f_x, (v - intr.v_0) / intr.f_y)


def camera_to_world(ext: Extrinsics, p: CameraPoint) -> WorldPoint:
    c, s = float(np.cos(ext.theta_p)), float(np.sin(ext.theta_p))
    X, Y, Z = rotate_translate(c, s, ext.t_x, ext.t_y, ext.t_z, p.x_cam, p.y_cam, p.z_cam)
    return WorldPoint(X, Y, Z)


def project_to_world(params: CameraParams, obs: ImageObservation) -> WorldPoint:
    return camera_to_world(params.extrinsics, image_to_camera_stereo(params, obs))


def world_to_image_arrays(params: CameraParams, X, Y, Z):
    """Invert the stereo chain for arrays of world coordinates -> (u, v, d)."""
    ext, k = params.extrinsics, params.intrinsics
    c, s = np.cos(ext.theta_p), np.sin(ext.theta_p)
    dx, dy, dz = X - ext.t_x, Y - ext.t_y, Z - ext.t_z
    # R^T applied to the offset
    x_cam = c * dx - s * dz
    y_cam = dy
    z_cam = s * dx + c * dz
    u = k.u_0 - k.f_x * y_cam / x_cam
    v = k.v_0 - k.f_y * z_cam / x_cam
    d = k.f_x * params.rig.b / x_cam
    return u, v, d


def world_to_image(params: CameraParams, point: WorldPoint) -> ImageObservation:
    """Scalar :func:`world_to_image_arrays`.  Raises if the point is not in front of the camera."""
    u, v, d = world_to_image_arrays(params, point.X, point.Y, point.Z)
    if not d > 0:
        raise DisparityZeroOrNegative(f"point is not in front of the camera (d={d})")
    return ImageObservation(float(u), float(v), float(d))


# Optical frame (right, down, forward) -> canonical frame (forward, lateral, vertical).
# Chosen so that K^-1 rays agree with the signs used by the stereo chain.
OPTICAL_TO_CANONICAL = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def point(self, depth: float) -> np.ndarray:
        """World point at forward depth ``depth`` (direction has unit forward component in camera frame)."""
        return self.origin + depth * self.direction

    def homogeneous(self, depth: float) -> np.ndarray:
        return np.append(self.point(depth), 1.0)

    def distance_to(self, p: np.ndarray) -> float:
        """Perpendicular distance from ``p`` to the ray's supporting line."""
        unit = self.direction / np.linalg.norm(self.direction)
        off = np.asarray(p, dtype=float) - self.origin
        return float(np.linalg.norm(off - np.dot(off, unit) * unit))


def inverse_full_projection(intr: Intrinsics, ext: Extrinsics, u: float, v: float) -> Ray:
    """Back-project pixel (u, v) through K^-1 and the inverse world->camera transform.

    Diagnostic only; the loss uses the stereo chain.
    """
    if not isinstance(intr, Intrinsics) or not isinstance(ext, Extrinsics):
        raise InvalidParams("expected Intrinsics and Extrinsics")
    R = ext.rotation()
    # world -> camera transform [R^T | -R^T t], inverted numerically
    world_to_cam = np.eye(4)
    world_to_cam[:3, :3] = R.T
    world_to_cam[:3, 3] = -R.T @ ext.translation
    cam_to_world = np.linalg.inv(world_to_cam)

    optical = intr.inverse_matrix() @ np.array([u, v, 1.0])
    ray_cam = OPTICAL_TO_CANONICAL @ optical
    origin = cam_to_world @ np.array([0.0, 0.0, 0.0, 1.0])
    direction = cam_to_world[:3, :3] @ ray_cam
    return Ray(origin=origin[:3], direction=direction)
