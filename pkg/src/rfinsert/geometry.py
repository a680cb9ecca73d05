"""Cameras, rays, and object-to-scene coordinate transforms.

Conventions: right-handed world with +z up.  Camera frame has +x right,
+y down, +z along the optical axis; pixel (0, 0) is the top-left pixel
center.  The object frame is built so its +x axis points back at the
reference camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Ray",
    "CameraModel",
    "ObjectPlacement",
    "look_at_rotation",
    "generate_ray",
    "generate_rays",
    "compute_object_center",
    "build_object_frame",
    "world_to_object",
    "object_to_world",
    "transform_ray",
]

_ORTHO_TOL = 1e-9
WORLD_UP = np.array([0.0, 0.0, 1.0])


def _check_rotation(r: np.ndarray, what: str) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"{what} must be 3x3, got {r.shape}")
    if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
        raise ValueError(f"{what} is not orthonormal")
    if np.linalg.det(r) < 0:
        raise ValueError(f"{what} must have determinant +1")
    return r


@dataclass(frozen=True)
class Ray:
    """Unit-direction ray with a [near, far] integration window."""

    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > _ORTHO_TOL:
            raise ValueError(f"ray direction must be unit length, |d| = {np.linalg.norm(d)}")
        if not (0 <= self.near < self.far):
            raise ValueError(f"require 0 <= near < far, got [{self.near}, {self.far}]")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", d)

    def point_at(self, t):
        return self.origin + np.multiply.outer(np.asarray(t, dtype=float), self.direction)


class CameraModel:
    """Pinhole camera: intrinsics (f, principal point, size) + rigid pose.

    ``rotation`` is camera-to-world: its columns are the camera's x/y/z axes
    expressed in world coordinates.
    """

    def __init__(self, focal, principal_point, image_size, rotation, center,
                 near=0.05, far=20.0):
        if focal <= 0:
            raise ValueError(f"focal length must be positive, got {focal}")
        w, h = (int(v) for v in image_size)
        cx, cy = (float(v) for v in principal_point)
        if not (0 <= cx < w and 0 <= cy < h):
            raise ValueError(f"principal point ({cx}, {cy}) outside {w}x{h} image")
        self.focal = float(focal)
        self.principal_point = (cx, cy)
        self.image_size = (w, h)
        self.rotation = _check_rotation(rotation, "camera rotation")
        self.center = np.asarray(center, dtype=float)
        self.near = float(near)
        self.far = float(far)

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[:, 2]

    @classmethod
    def looking_at(cls, position, target, focal, image_size, principal_point=None,
                   near=0.05, far=20.0):
        position = np.asarray(position, dtype=float)
        if principal_point is None:
            principal_point = ((image_size[0] - 1) / 2.0, (image_size[1] - 1) / 2.0)
        rot = look_at_rotation(position, target)
        return cls(focal, principal_point, image_size, rot, position, near=near, far=far)

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points (N, 3) -> pixel coordinates (N, 2) (u, v)."""
        pts = np.atleast_2d(points)
        cam = (pts - self.center) @ self.rotation  # world->camera
        z = cam[:, 2]
        if np.any(z <= 0):
            raise ValueError("point behind the camera")
        u = self.focal * cam[:, 0] / z + self.principal_point[0]
        v = self.focal * cam[:, 1] / z + self.principal_point[1]
        return np.stack([u, v], axis=-1)


def look_at_rotation(position, target, up=WORLD_UP) -> np.ndarray:
    """Camera-to-world rotation for a camera at ``position`` viewing ``target``."""
    forward = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ValueError("camera position coincides with the look-at target")
    forward = forward / n
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValueError("viewing direction parallel to the up vector")
    right = right / rn
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def generate_ray(camera: CameraModel, pixel) -> Ray:
    """Ray through a pixel center; origin at the camera center."""
    u, v = float(pixel[0]), float(pixel[1])
    w, h = camera.image_size
    if not (-0.5 <= u < w - 0.5 and -0.5 <= v < h - 0.5):
        raise ValueError(f"pixel ({u}, {v}) outside {w}x{h} image")
    d_cam = np.array([
        (u - camera.principal_point[0]) / camera.focal,
        (v - camera.principal_point[1]) / camera.focal,
        1.0,
    ])
    d_world = camera.rotation @ d_cam
    d_world = d_world / np.linalg.norm(d_world)
    return Ray(camera.center, d_world, camera.near, camera.far)


def generate_rays(camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Origins (N, 3) and unit directions (N, 3) for all pixels, row-major."""
    w, h = camera.image_size
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    d_cam = np.stack([
        (u - camera.principal_point[0]) / camera.focal,
        (v - camera.principal_point[1]) / camera.focal,
        np.ones_like(u),
    ], axis=-1).reshape(-1, 3)
    d_world = d_cam @ camera.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.center, d_world.shape)
    return origins, d_world


class ObjectPlacement:
    """Rigid placement + uniform scale mapping scene points into object space."""

    def __init__(self, rotation, translation, scale, center, distance):
        self.rotation = _check_rotation(rotation, "placement rotation")
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        if distance <= 0:
            raise ValueError(f"distance must be positive, got {distance}")
        self.translation = np.asarray(translation, dtype=float)
        self.scale = float(scale)
        self.center = np.asarray(center, dtype=float)
        self.distance = float(distance)
        if np.max(np.abs(self.translation + self.rotation @ self.center)) > 1e-9:
            raise ValueError("translation must equal -R @ center")

    @classmethod
    def from_center(cls, rotation, center, scale, distance):
        rotation = np.asarray(rotation, dtype=float)
        center = np.asarray(center, dtype=float)
        return cls(rotation, -rotation @ center, scale, center, distance)


def compute_object_center(camera_center, distance, direction) -> np.ndarray:
    """Object center at ``distance`` along a unit direction from the camera."""
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > _ORTHO_TOL:
        raise ValueError(f"direction must be unit length, |v| = {np.linalg.norm(direction)}")
    if distance <= 0:
        raise ValueError(f"distance must be positive, got {distance}")
    return np.asarray(camera_center, dtype=float) + distance * direction


def build_object_frame(view_dir) -> np.ndarray:
    """Object rotation from the unit camera-to-object direction.

    Rows of the result are the object axes in world coordinates; the object
    +x axis is aimed back at the camera.  Fails for vertical directions.
    """
    v = np.asarray(view_dir, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > _ORTHO_TOL:
        raise ValueError(f"view direction must be unit length, |v| = {np.linalg.norm(v)}")
    x = -v
    y = np.cross(WORLD_UP, x)
    yn = np.linalg.norm(y)
    if yn < 1e-9:
        raise ValueError("view direction parallel to the up vector; object frame undefined")
    y = y / yn
    z = np.cross(x, y)
    z = z / np.linalg.norm(z)
    return np.stack([x, y, z], axis=0)


def world_to_object(placement: ObjectPlacement, points: np.ndarray) -> np.ndarray:
    """Map world points into the (scaled) object coordinate system."""
    pts = np.asarray(points, dtype=float)
    return (pts @ placement.rotation.T + placement.translation) / placement.scale


def object_to_world(placement: ObjectPlacement, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return (pts * placement.scale - placement.translation) @ placement.rotation


def transform_ray(placement: ObjectPlacement, ray: Ray) -> tuple[Ray, float]:
    """Express a world ray in object coordinates.

    Directions stay unit length, so a world parameter u corresponds to object
    parameter u/s.  The returned interval scale 1/s converts world-length
    sample spacings into object-space spacings.
    """
    origin = world_to_object(placement, ray.origin)
    direction = placement.rotation @ ray.direction
    s = placement.scale
    return Ray(origin, direction, ray.near / s, ray.far / s), 1.0 / s
