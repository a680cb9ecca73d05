"""Declarative run configuration (YAML) for the insertion pipeline.

A config describes the scene and object fields, the reference camera, the
2D bounding box, the reconstructor intrinsics, sampling/repaint/refinement
settings, and the edit stub.  See ``SceneConfig.from_file`` for the schema.
"""

from __future__ import annotations

import pathlib
from dataclasses import dataclass, field

import numpy as np
import yaml

from .depth import BBox2D, SyntheticDepthProvider
from .fields import (
    BoundingBox3D,
    CompositeField,
    RadianceField,
    load_voxel_grid,
    make_primitive,
)
from .geometry import CameraModel
from .placement import ReconstructorIntrinsics
from .render import SamplingConfig
from .repaint import NoiseSchedule, RepaintConfig

__all__ = ["SceneConfig", "ConfigError", "parse_field", "parse_camera"]


class ConfigError(ValueError):
    """Invalid or missing configuration entries."""


def _require(mapping, key, where):
    if key not in mapping:
        raise ConfigError(f"missing required key {key!r} in {where}")
    return mapping[key]


def parse_field(spec, base_dir=".") -> RadianceField:
    """Field spec: {kind: sphere|box|gaussian|voxel|composite, ...params}."""
    if not isinstance(spec, dict):
        raise ConfigError(f"field spec must be a mapping, got {type(spec).__name__}")
    kind = _require(spec, "kind", "field spec")
    if kind == "composite":
        return CompositeField([parse_field(c, base_dir) for c in _require(spec, "children", "composite field")])
    if kind == "voxel":
        path = pathlib.Path(base_dir) / _require(spec, "path", "voxel field")
        if not path.exists():
            raise ConfigError(f"voxel grid file not found: {path}")
        return load_voxel_grid(path)
    params = {k: v for k, v in spec.items() if k != "kind"}
    for key in ("center", "half_extents", "color"):
        if key in params:
            params[key] = tuple(float(v) for v in params[key])
    try:
        return make_primitive(kind, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad field spec {spec}: {exc}") from exc


def parse_camera(spec) -> CameraModel:
    """Camera spec: focal, image_size, position + target (look-at) or rotation."""
    focal = float(_require(spec, "focal", "camera"))
    size = tuple(int(v) for v in _require(spec, "image_size", "camera"))
    near = float(spec.get("near", 0.05))
    far = float(spec.get("far", 20.0))
    position = np.asarray(_require(spec, "position", "camera"), dtype=float)
    if "rotation" in spec:
        rot = np.asarray(spec["rotation"], dtype=float).reshape(3, 3)
        pp = spec.get("principal_point")
        if pp is None:
            pp = ((size[0] - 1) / 2.0, (size[1] - 1) / 2.0)
        return CameraModel(focal, pp, size, rot, position, near=near, far=far)
    target = np.asarray(_require(spec, "target", "camera"), dtype=float)
    return CameraModel.looking_at(position, target, focal, size, near=near, far=far)


def _parse_bbox(spec) -> BBox2D:
    return BBox2D(int(_require(spec, "top", "bbox")), int(_require(spec, "left", "bbox")),
                  int(_require(spec, "height", "bbox")), int(_require(spec, "width", "bbox")))


def _parse_clip(spec) -> BoundingBox3D | None:
    if spec is None:
        return None
    return BoundingBox3D(tuple(float(v) for v in _require(spec, "min", "clip box")),
                         tuple(float(v) for v in _require(spec, "max", "clip box")))


@dataclass
class SceneConfig:
    scene: RadianceField
    object: RadianceField
    camera: CameraModel
    bbox: BBox2D
    intrinsics: ReconstructorIntrinsics
    sampling: SamplingConfig
    clip: BoundingBox3D | None
    seed: int
    edit: dict
    depth_provider: SyntheticDepthProvider
    placement_opt: dict
    repaint: dict
    refine: dict
    views: list
    raw: dict

    @classmethod
    def from_file(cls, path) -> "SceneConfig":
        path = pathlib.Path(path)
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "SceneConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        camera = parse_camera(_require(raw, "camera", "config"))
        bbox = _parse_bbox(_require(raw, "bbox", "config"))
        w, h = camera.image_size
        bbox.check_inside((h, w))

        intr_spec = _require(raw, "reconstructor", "config")
        intrinsics = ReconstructorIntrinsics(
            distance=float(_require(intr_spec, "distance", "reconstructor")),
            focal=float(_require(intr_spec, "focal", "reconstructor")),
            center_offset=float(intr_spec.get("center_offset", 0.0)),
        )

        samp = raw.get("sampling", {})
        sampling = SamplingConfig(
            n_samples=int(samp.get("n_samples", 64)),
            stratified=bool(samp.get("stratified", False)),
            background=tuple(float(v) for v in samp.get("background", (0.0, 0.0, 0.0))),
            seed=int(raw.get("seed", 0)),
        )

        dp = raw.get("depth_provider", {})
        provider = SyntheticDepthProvider(
            scale=float(dp.get("scale", 1.0)),
            shift=float(dp.get("shift", 0.0)),
            noise_sigma=float(dp.get("noise_sigma", 0.0)),
            seed=int(dp.get("seed", raw.get("seed", 0))),
        )

        return cls(
            scene=parse_field(_require(raw, "scene", "config"), base_dir),
            object=parse_field(_require(raw, "object", "config"), base_dir),
            camera=camera,
            bbox=bbox,
            intrinsics=intrinsics,
            sampling=sampling,
            clip=_parse_clip(raw.get("clip_box")),
            seed=int(raw.get("seed", 0)),
            edit=dict(raw.get("edit", {"mode": "composite"})),
            depth_provider=provider,
            placement_opt=dict(raw.get("placement_opt", {})),
            repaint=dict(raw.get("repaint", {})),
            refine=dict(raw.get("refine", {})),
            views=list(raw.get("views", [])),
            raw=raw,
        )

    def repaint_schedule(self) -> NoiseSchedule:
        n = int(self.repaint.get("num_steps", 20))
        return NoiseSchedule.linear(n, float(self.repaint.get("beta_start", 1e-3)),
                                    float(self.repaint.get("beta_end", 0.35)))

    def repaint_config(self) -> RepaintConfig:
        return RepaintConfig(
            jump_length=int(self.repaint.get("jump_length", 2)),
            steps=int(self.repaint.get("steps", 2)),
            seed=self.seed,
            resample_min_t=self.repaint.get("resample_min_t"),
        )

    def extra_cameras(self) -> list[CameraModel]:
        cams = []
        for spec in self.views:
            merged = {"focal": self.camera.focal, "image_size": self.camera.image_size,
                      "near": self.camera.near, "far": self.camera.far}
            merged.update(spec)
            cams.append(parse_camera(merged))
        return cams
