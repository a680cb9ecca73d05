"""Scale and distance estimation for object insertion.

Initializes the object scale from the center depth and the reconstructor's
canonical camera (s0 = (d/f') * (r'/f), r0 = s0*l + d), then minimizes the
rendered-vs-edit MSE with a derivative-free golden-section search.  In the
default constrained mode the distance is tied to the scale via r = s*l + d so
the object's center stays at the estimated depth and the search is 1-D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .depth import BBox2D
from .fields import BoundingBox3D, RadianceField
from .geometry import (
    CameraModel,
    ObjectPlacement,
    build_object_frame,
    compute_object_center,
    generate_ray,
)
from .render import SamplingConfig, render_fused_rays

__all__ = [
    "ReconstructorIntrinsics",
    "PlacementEstimate",
    "init_scale_distance",
    "golden_section_minimize",
    "optimize_scale_distance",
    "assemble_placement",
    "objective_crop",
]

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ReconstructorIntrinsics:
    """Canonical camera of the single-view object reconstructor.

    distance/focal are the fixed camera parameters the object field was built
    for; ``center_offset`` is the distance of the bbox-center 3D point from
    the object origin, in object units (0 when they coincide).
    """

    distance: float
    focal: float
    center_offset: float = 0.0

    def __post_init__(self):
        if self.distance <= 0 or self.focal <= 0:
            raise ValueError("reconstructor distance and focal must be positive")
        if self.center_offset < 0:
            raise ValueError("center offset must be >= 0")


@dataclass(frozen=True)
class PlacementEstimate:
    scale: float
    distance: float
    mse: float
    iterations: int
    improved: bool = True

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.distance <= 0:
            raise ValueError(f"distance must be positive, got {self.distance}")


def init_scale_distance(center_depth: float, focal: float,
                        intr: ReconstructorIntrinsics) -> tuple[float, float]:
    """Initial (s0, r0) from the center depth and camera focal lengths."""
    if center_depth <= 0:
        raise ValueError(f"center depth must be positive, got {center_depth}")
    if focal <= 0:
        raise ValueError(f"focal length must be positive, got {focal}")
    s0 = (center_depth / intr.focal) * (intr.distance / focal)
    r0 = s0 * intr.center_offset + center_depth
    return s0, r0


def golden_section_minimize(f, lo, hi, max_evals=64, tol=1e-4):
    """Golden-section search for a scalar minimum on [lo, hi].

    Returns (x_best, f_best, n_evals).  Stops when the bracket is below tol
    or the evaluation budget runs out.
    """
    a, b = min(lo, hi), max(lo, hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    while evals < max_evals and (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
        evals += 1
    return (c, fc, evals) if fc < fd else (d, fd, evals)


def objective_crop(bbox: BBox2D, image_shape, dilation: float = 0.2) -> BBox2D:
    """Region the placement MSE is computed over: bbox dilated 20% per side."""
    return bbox.dilated(dilation, image_shape)


def _bbox_view_direction(camera: CameraModel, bbox: BBox2D) -> np.ndarray:
    ic, jc = bbox.center
    return generate_ray(camera, (jc, ic)).direction


def assemble_placement(camera: CameraModel, bbox: BBox2D,
                       estimate: PlacementEstimate) -> ObjectPlacement:
    """Final placement: center along the bbox-center ray, frame facing the camera."""
    v = _bbox_view_direction(camera, bbox)
    center = compute_object_center(camera.center, estimate.distance, v)
    rotation = build_object_frame(v)
    return ObjectPlacement.from_center(rotation, center, estimate.scale, estimate.distance)


def _placement_for(camera, bbox, scale, distance):
    return assemble_placement(camera, bbox, PlacementEstimate(scale, distance, 0.0, 0))


def optimize_scale_distance(edit_crop: np.ndarray, scene: RadianceField,
                            obj: RadianceField, camera: CameraModel, bbox: BBox2D,
                            center_depth: float, intr: ReconstructorIntrinsics,
                            init: tuple[float, float], cfg: SamplingConfig,
                            clip: BoundingBox3D | None = None,
                            constrained: bool = True, max_evals: int = 64,
                            bracket: float = 4.0, crop_dilation: float = 0.2,
                            ) -> PlacementEstimate:
    """Minimize the MSE between the edit crop and the fused render crop.

    Constrained mode searches log-scale only, with r = s*l + d; unconstrained
    mode runs one golden-section pass per coordinate (s, then r).  Never
    returns an MSE above the initialization's.
    """
    s0, r0 = init
    if s0 <= 0 or r0 <= 0:
        raise ValueError(f"initial scale/distance must be positive, got {init}")
    crop = objective_crop(bbox, _image_shape(camera), crop_dilation)
    if edit_crop.shape[:2] != (crop.height, crop.width):
        raise ValueError(
            f"edit crop shape {edit_crop.shape[:2]} does not match the "
            f"objective crop {(crop.height, crop.width)}")

    evals = 0

    origins, directions = _crop_rays(camera, crop)
    target = edit_crop.reshape(-1, 3)

    def mse_at(scale, distance):
        nonlocal evals
        evals += 1
        placement = _placement_for(camera, bbox, scale, distance)
        res = render_fused_rays(scene, obj, placement, clip, origins, directions,
                                camera.near, camera.far, cfg)
        return float(np.mean((res["color"] - target) ** 2))

    init_mse = mse_at(s0, r0)

    if constrained:
        def f(log_s):
            s = math.exp(log_s)
            return mse_at(s, s * intr.center_offset + center_depth)

        span = math.log(bracket)
        tol = 1e-3  # bracket width in log-scale; ~0.1% on s
        x, fx, n = golden_section_minimize(f, math.log(s0) - span, math.log(s0) + span,
                                           max_evals=max_evals - 1, tol=tol)
        s_best = math.exp(x)
        r_best = s_best * intr.center_offset + center_depth
        best_mse = fx
    else:
        span = math.log(bracket)
        s_best, r_best, best_mse = s0, r0, init_mse
        for coord in ("scale", "distance"):
            if coord == "scale":
                f = lambda x: mse_at(math.exp(x), r_best)
                x0 = math.log(s_best)
            else:
                f = lambda x: mse_at(s_best, math.exp(x))
                x0 = math.log(r_best)
            x, fx, _ = golden_section_minimize(f, x0 - span, x0 + span,
                                               max_evals=max_evals // 2, tol=1e-3)
            if fx < best_mse:
                best_mse = fx
                if coord == "scale":
                    s_best = math.exp(x)
                else:
                    r_best = math.exp(x)

    if best_mse < init_mse * (1.0 - 1e-12) or best_mse < init_mse - 1e-15:
        return PlacementEstimate(s_best, r_best, best_mse, evals, improved=True)
    return PlacementEstimate(s0, r0, init_mse, evals, improved=False)


def _image_shape(camera: CameraModel):
    w, h = camera.image_size
    return (h, w)


def _crop_rays(camera: CameraModel, crop: BBox2D):
    """Pixel-center rays for the crop region, row-major over the crop."""
    u, v = np.meshgrid(
        np.arange(crop.left, crop.left + crop.width, dtype=float),
        np.arange(crop.top, crop.top + crop.height, dtype=float),
    )
    d_cam = np.stack([
        (u - camera.principal_point[0]) / camera.focal,
        (v - camera.principal_point[1]) / camera.focal,
        np.ones_like(u),
    ], axis=-1).reshape(-1, 3)
    directions = d_cam @ camera.rotation.T
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.center, directions.shape)
    return origins, directions
