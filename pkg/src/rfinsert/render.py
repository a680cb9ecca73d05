"""Volumetric quadrature rendering of single and fused radiance fields.

Per ray, N uniform (optionally stratified) samples between near and far are
composited front to back:

    w_i = T_i * (1 - exp(-sigma_i * delta_i)),   T_i = exp(-sum_{j<i} sigma_j delta_j)

Fused rendering queries the scene and the placed object at shared world-space
samples and combines densities with the 1/s interval correction:

    sigma = sigma_s + sigma_o / s
    color = (sigma_s c_s + sigma_o c_o / s) / sigma
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import BoundingBox3D, RadianceField
from .geometry import CameraModel, ObjectPlacement, Ray, generate_rays, world_to_object

__all__ = [
    "SamplingConfig",
    "RenderOutput",
    "ImageRender",
    "composite",
    "sample_parameters",
    "render_ray",
    "render_rays",
    "render_image",
    "render_fused_ray",
    "render_fused_rays",
    "render_fused_image",
    "render_object_mask",
]

_ALPHA_EPS = 1e-6


@dataclass(frozen=True)
class SamplingConfig:
    """Quadrature settings shared by all render entry points."""

    n_samples: int = 64
    stratified: bool = False
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError(f"need at least 2 samples per ray, got {self.n_samples}")


@dataclass(frozen=True)
class RenderOutput:
    """Composited result for a single ray."""

    color: np.ndarray
    alpha: float
    depth: float
    transmittance: float


@dataclass(frozen=True)
class ImageRender:
    """Per-pixel render buffers, row-major (h, w)."""

    color: np.ndarray   # (h, w, 3)
    alpha: np.ndarray   # (h, w)
    depth: np.ndarray   # (h, w)


def sample_parameters(near, far, n, stratified=False, rng=None):
    """Ray parameters t_i and constant spacing delta for uniform bins.

    near/far may be scalars or (R,) arrays; returns t (R, n) and delta (R,).
    Stratified sampling jitters within each bin using ``rng``.
    """
    near = np.atleast_1d(np.asarray(near, dtype=float))
    far = np.atleast_1d(np.asarray(far, dtype=float))
    delta = (far - near) / n
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling requires an rng")
        offsets = rng.random((near.shape[0], n))
    else:
        offsets = 0.5
    t = near[:, None] + (np.arange(n) + offsets) * delta[:, None]
    return t, delta


def composite(sigma, color, delta, t, background, far):
    """Front-to-back compositing of per-sample densities and colors.

    sigma (R, N), color (R, N, 3), delta (R,) or scalar, t (R, N).
    Returns dict of color (R, 3), alpha, depth, transmittance, weights (R, N).
    """
    sigma = np.atleast_2d(sigma)
    tau = sigma * np.asarray(delta, dtype=float).reshape(-1, 1)
    # Exclusive cumulative optical depth -> T_i, with T_1 = 1.
    accum = np.cumsum(tau, axis=1)
    trans = np.exp(-np.concatenate([np.zeros((tau.shape[0], 1)), accum[:, :-1]], axis=1))
    weights = trans * (1.0 - np.exp(-tau))
    t_final = np.exp(-accum[:, -1])

    alpha = np.sum(weights, axis=1)
    out_color = np.sum(weights[..., None] * color, axis=1)
    out_color = out_color + t_final[:, None] * np.asarray(background, dtype=float)
    far = np.broadcast_to(np.asarray(far, dtype=float), alpha.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(alpha > _ALPHA_EPS, np.sum(weights * t, axis=1) / alpha, far)
    return {
        "color": out_color,
        "alpha": alpha,
        "depth": depth,
        "transmittance": t_final,
        "weights": weights,
    }


def _to_output(res, i=0) -> RenderOutput:
    return RenderOutput(
        color=res["color"][i],
        alpha=float(res["alpha"][i]),
        depth=float(res["depth"][i]),
        transmittance=float(res["transmittance"][i]),
    )


def render_rays(field: RadianceField, origins, directions, near, far,
                cfg: SamplingConfig, rng=None):
    """Batched single-field rendering; origins/directions are (R, 3)."""
    if cfg.stratified and rng is None:
        rng = np.random.default_rng(cfg.seed)
    t, delta = sample_parameters(near, far, cfg.n_samples, cfg.stratified, rng)
    pts = origins[:, None, :] + t[..., None] * directions[:, None, :]
    sigma, rgb = field.query_many(pts.reshape(-1, 3))
    n = cfg.n_samples
    sigma = sigma.reshape(-1, n)
    rgb = rgb.reshape(-1, n, 3)
    return composite(sigma, rgb, delta, t, cfg.background, far)


def render_ray(field: RadianceField, ray: Ray, cfg: SamplingConfig, rng=None) -> RenderOutput:
    res = render_rays(field, ray.origin[None], ray.direction[None],
                      ray.near, ray.far, cfg, rng)
    return _to_output(res)


def render_image(field: RadianceField, camera: CameraModel, cfg: SamplingConfig) -> ImageRender:
    origins, directions = generate_rays(camera)
    rng = np.random.default_rng(cfg.seed) if cfg.stratified else None
    res = render_rays(field, origins, directions, camera.near, camera.far, cfg, rng)
    w, h = camera.image_size
    return ImageRender(
        color=res["color"].reshape(h, w, 3),
        alpha=res["alpha"].reshape(h, w),
        depth=res["depth"].reshape(h, w),
    )


def fuse_samples(scene_sigma, scene_rgb, obj_sigma, obj_rgb, scale, corrected=True):
    """Combine per-sample scene/object contributions (densities already clipped)."""
    inv = 1.0 / scale if corrected else 1.0
    sigma = scene_sigma + obj_sigma * inv
    num = scene_sigma[..., None] * scene_rgb + (obj_sigma * inv)[..., None] * obj_rgb
    with np.errstate(invalid="ignore", divide="ignore"):
        rgb = np.where(sigma[..., None] > 0, num / np.where(sigma == 0, 1.0, sigma)[..., None], 0.0)
    return sigma, rgb


def query_fused(scene: RadianceField, obj: RadianceField, placement: ObjectPlacement,
                clip: BoundingBox3D | None, points: np.ndarray, corrected=True):
    """Fused (density, color) at world points; object clipped to ``clip`` (object coords)."""
    scene_sigma, scene_rgb = scene.query_many(points)
    obj_pts = world_to_object(placement, points)
    obj_sigma, obj_rgb = obj.query_many(obj_pts)
    if clip is not None:
        outside = ~clip.contains(obj_pts)
        obj_sigma = np.where(outside, 0.0, obj_sigma)
    return fuse_samples(scene_sigma, scene_rgb, obj_sigma, obj_rgb, placement.scale, corrected)


def render_fused_rays(scene: RadianceField, obj: RadianceField, placement: ObjectPlacement,
                      clip: BoundingBox3D | None, origins, directions, near, far,
                      cfg: SamplingConfig, rng=None, corrected=True):
    if cfg.stratified and rng is None:
        rng = np.random.default_rng(cfg.seed)
    t, delta = sample_parameters(near, far, cfg.n_samples, cfg.stratified, rng)
    pts = origins[:, None, :] + t[..., None] * directions[:, None, :]
    sigma, rgb = query_fused(scene, obj, placement, clip, pts.reshape(-1, 3), corrected)
    n = cfg.n_samples
    return composite(sigma.reshape(-1, n), rgb.reshape(-1, n, 3), delta, t,
                     cfg.background, far)


def render_fused_ray(scene: RadianceField, obj: RadianceField, placement: ObjectPlacement,
                     clip: BoundingBox3D | None, ray: Ray, cfg: SamplingConfig,
                     rng=None, corrected=True) -> RenderOutput:
    res = render_fused_rays(scene, obj, placement, clip, ray.origin[None],
                            ray.direction[None], ray.near, ray.far, cfg, rng, corrected)
    return _to_output(res)


def render_fused_image(scene: RadianceField, obj: RadianceField, placement: ObjectPlacement,
                       clip: BoundingBox3D | None, camera: CameraModel,
                       cfg: SamplingConfig, corrected=True) -> ImageRender:
    origins, directions = generate_rays(camera)
    rng = np.random.default_rng(cfg.seed) if cfg.stratified else None
    res = render_fused_rays(scene, obj, placement, clip, origins, directions,
                            camera.near, camera.far, cfg, rng, corrected)
    w, h = camera.image_size
    return ImageRender(
        color=res["color"].reshape(h, w, 3),
        alpha=res["alpha"].reshape(h, w),
        depth=res["depth"].reshape(h, w),
    )


class PlacedObjectField(RadianceField):
    """World-space view of a placed object: density carries the 1/s correction.

    Lengths shrink by 1/s from world to object space, so the world-space
    density that yields the same optical depth is sigma_object / s.  Used as
    the independent baked-field oracle for fused rendering and for rendering
    object-only views in the scene frame.
    """

    kind = "placed"

    def __init__(self, obj: RadianceField, placement: ObjectPlacement,
                 clip: BoundingBox3D | None = None):
        self.object = obj
        self.placement = placement
        self.clip = clip

    def query_many(self, points):
        pts = np.atleast_2d(points)
        obj_pts = world_to_object(self.placement, pts)
        sigma, rgb = self.object.query_many(obj_pts)
        if self.clip is not None:
            sigma = np.where(self.clip.contains(obj_pts), sigma, 0.0)
        return sigma / self.placement.scale, rgb


def render_object_mask(obj: RadianceField, placement: ObjectPlacement,
                       camera: CameraModel, cfg: SamplingConfig,
                       threshold: float = 0.5,
                       clip: BoundingBox3D | None = None) -> np.ndarray:
    """Binary (h, w) mask of pixels where the object-only alpha exceeds threshold."""
    if not (0 < threshold < 1):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    placed = PlacedObjectField(obj, placement, clip)
    out = render_image(placed, camera, cfg)
    return out.alpha > threshold
