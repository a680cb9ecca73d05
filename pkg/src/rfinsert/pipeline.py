"""Five-stage insertion pipeline: reference, edit, depth, place, fuse.

Each stage writes its artifacts into the run directory and records outputs
(with content hashes), numeric results, and timing in ``manifest.yaml``.
A run can be resumed from any stage; earlier stages are then loaded from
their cached artifacts after hash verification.
"""

from __future__ import annotations

import hashlib
import pathlib
import time

import numpy as np
import yaml

from .config import SceneConfig
from .depth import DepthMap, align_depth, object_center_depth
from .geometry import ObjectPlacement, generate_ray
from .imio import load_pfm, save_pfm, save_png
from .placement import (
    PlacementEstimate,
    assemble_placement,
    init_scale_distance,
    objective_crop,
    optimize_scale_distance,
)
from .refine import (
    IdentityRefiner,
    TintRefiner,
    TrainableGrid,
    ViewSchedule,
    refine_loop,
)
from .render import render_fused_image, render_image
from .repaint import TargetDenoiser, repaint_inpaint

__all__ = ["StageError", "run_render", "run_insert", "run_refine", "load_manifest",
           "INSERT_STAGES"]

INSERT_STAGES = ["reference", "edit", "depth", "place", "fuse"]


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_manifest(out_dir) -> dict:
    path = pathlib.Path(out_dir) / "manifest.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}; run `insert` first")
    with open(path) as fh:
        return yaml.safe_load(fh)


def _save_manifest(manifest: dict, out_dir) -> None:
    with open(pathlib.Path(out_dir) / "manifest.yaml", "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)


class _Run:
    """Shared state threaded through the pipeline stages."""

    def __init__(self, config: SceneConfig, out_dir):
        self.config = config
        self.out = pathlib.Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {"stages": {}, "seed": config.seed}
        self.reference = None        # ImageRender of the scene-only view
        self.edited = None           # (h, w, 3) float edited reference
        self.edited_depth = None     # (h, w) true depth of the edited view
        self.center_depth = None
        self.fit = None
        self.placement = None
        self.estimate = None

    def path(self, name) -> pathlib.Path:
        return self.out / name

    def record(self, stage, outputs, numerics, elapsed):
        self.manifest["stages"][stage] = {
            "status": "complete",
            "outputs": {n: {"path": str(p.name), "sha256": _sha256(p)}
                        for n, p in outputs.items()},
            "numerics": numerics,
            "elapsed_s": round(elapsed, 3),
        }
        _save_manifest(self.manifest, self.out)

    def verify_outputs(self, stage):
        entry = self.manifest["stages"].get(stage)
        if entry is None:
            raise StageError(stage, "no cached result in manifest; rerun without --stage")
        for name, meta in entry["outputs"].items():
            path = self.out / meta["path"]
            if not path.exists():
                raise StageError(stage, f"cached artifact {path} is missing")
            if _sha256(path) != meta["sha256"]:
                raise StageError(stage, f"cached artifact {path} does not match its "
                                        "recorded hash; earlier stages were modified")


def _f32(arr):
    """Round to the PFM storage precision so resumed runs see identical data."""
    return np.asarray(arr).astype(np.float32).astype(float)


def _stage_reference(run: _Run):
    cfg = run.config
    out = render_image(cfg.scene, cfg.camera, cfg.sampling)
    out = type(out)(color=_f32(out.color), alpha=_f32(out.alpha), depth=_f32(out.depth))
    run.reference = out
    save_png(out.color, run.path("reference.png"))
    save_pfm(out.color, run.path("reference_color.pfm"))
    save_pfm(out.depth, run.path("reference_depth.pfm"))
    save_pfm(out.alpha, run.path("reference_alpha.pfm"))
    return {
        "image": run.path("reference.png"),
        "color": run.path("reference_color.pfm"),
        "depth": run.path("reference_depth.pfm"),
        "alpha": run.path("reference_alpha.pfm"),
    }, {}


def _load_reference(run: _Run):
    from .render import ImageRender
    run.reference = ImageRender(
        color=load_pfm(run.path("reference_color.pfm")),
        alpha=load_pfm(run.path("reference_alpha.pfm")),
        depth=load_pfm(run.path("reference_depth.pfm")),
    )


def _true_placement(run: _Run):
    """Ground-truth placement used by the edit stub."""
    cfg = run.config
    edit = cfg.edit
    if "true_distance" in edit:
        d_true = float(edit["true_distance"])
    else:
        i, j = cfg.bbox.center_pixel
        d_true = float(run.reference.depth[i, j])
    if "true_scale" in edit:
        s_true = float(edit["true_scale"])
    else:
        s0, _ = init_scale_distance(d_true, cfg.camera.focal, cfg.intrinsics)
        s_true = s0 * float(edit.get("scale_factor", 1.0))
    r_true = s_true * cfg.intrinsics.center_offset + d_true
    placement = assemble_placement(cfg.camera, cfg.bbox,
                                   PlacementEstimate(s_true, r_true, 0.0, 0))
    return placement, s_true, r_true, d_true


def _stage_edit(run: _Run):
    cfg = run.config
    mode = cfg.edit.get("mode", "composite")
    placement, s_true, r_true, d_true = _true_placement(run)
    fused = render_fused_image(cfg.scene, cfg.object, placement, cfg.clip,
                               cfg.camera, cfg.sampling)
    if mode == "composite":
        edited = fused.color
    elif mode == "repaint":
        w, h = cfg.camera.image_size
        mask = cfg.bbox.mask((h, w))
        schedule = cfg.repaint_schedule()
        denoiser = TargetDenoiser(fused.color, schedule)
        edited = repaint_inpaint(denoiser, run.reference.color, mask,
                                 schedule, cfg.repaint_config())
        edited = np.clip(edited, 0.0, 1.0)
    else:
        raise StageError("edit", f"unknown edit mode {mode!r}")
    run.edited = edited = _f32(edited)
    run.edited_depth = _f32(fused.depth)
    save_png(edited, run.path("edited.png"))
    save_pfm(edited, run.path("edited_color.pfm"))
    save_pfm(fused.depth, run.path("edited_depth_true.pfm"))
    outputs = {
        "image": run.path("edited.png"),
        "color": run.path("edited_color.pfm"),
        "true_depth": run.path("edited_depth_true.pfm"),
    }
    numerics = {"mode": mode, "true_scale": float(s_true),
                "true_distance": float(r_true), "true_center_depth": float(d_true)}
    return outputs, numerics


def _load_edit(run: _Run):
    run.edited = load_pfm(run.path("edited_color.pfm"))
    run.edited_depth = load_pfm(run.path("edited_depth_true.pfm"))


def _stage_depth(run: _Run):
    cfg = run.config
    estimated = cfg.depth_provider.estimate(run.edited_depth)
    rendered = DepthMap(run.reference.depth)
    fit = align_depth(estimated, rendered, cfg.bbox)
    aligned = DepthMap(fit.apply(estimated.values), estimated.valid)
    d = object_center_depth(aligned, cfg.bbox)
    run.fit = fit
    run.center_depth = d
    save_pfm(estimated.values, run.path("estimated_depth.pfm"))
    save_pfm(aligned.values, run.path("aligned_depth.pfm"))
    outputs = {"estimated": run.path("estimated_depth.pfm"),
               "aligned": run.path("aligned_depth.pfm")}
    numerics = {"a": fit.a, "b": fit.b, "residual_rms": fit.residual_rms,
                "center_depth": float(d)}
    return outputs, numerics


def _load_depth(run: _Run):
    numerics = run.manifest["stages"]["depth"]["numerics"]
    run.center_depth = float(numerics["center_depth"])


def _stage_place(run: _Run):
    cfg = run.config
    opt = cfg.placement_opt
    d = run.center_depth
    s0, r0 = init_scale_distance(d, cfg.camera.focal, cfg.intrinsics)
    perturb = float(opt.get("init_perturbation", 1.0))
    s_init = s0 * perturb
    r_init = s_init * cfg.intrinsics.center_offset + d

    w, h = cfg.camera.image_size
    crop = objective_crop(cfg.bbox, (h, w), float(opt.get("crop_dilation", 0.2)))
    edit_crop = run.edited[crop.top:crop.top + crop.height,
                           crop.left:crop.left + crop.width]
    estimate = optimize_scale_distance(
        edit_crop, cfg.scene, cfg.object, cfg.camera, cfg.bbox, d,
        cfg.intrinsics, (s_init, r_init), cfg.sampling, clip=cfg.clip,
        constrained=bool(opt.get("constrained", True)),
        max_evals=int(opt.get("max_evals", 64)),
        bracket=float(opt.get("bracket", 4.0)),
        crop_dilation=float(opt.get("crop_dilation", 0.2)),
    )
    placement = assemble_placement(cfg.camera, cfg.bbox, estimate)
    run.estimate = estimate
    run.placement = placement
    numerics = {
        "s_init": float(s_init), "r_init": float(r_init),
        "s_star": float(estimate.scale), "r_star": float(estimate.distance),
        "mse": float(estimate.mse), "iterations": int(estimate.iterations),
        "improved": bool(estimate.improved),
        "rotation": [float(v) for v in placement.rotation.reshape(-1)],
        "translation": [float(v) for v in placement.translation],
        "center": [float(v) for v in placement.center],
    }
    return {}, numerics


def _load_place(run: _Run):
    numerics = run.manifest["stages"]["place"]["numerics"]
    rotation = np.asarray(numerics["rotation"], dtype=float).reshape(3, 3)
    center = np.asarray(numerics["center"], dtype=float)
    run.placement = ObjectPlacement.from_center(rotation, center,
                                                numerics["s_star"], numerics["r_star"])
    run.estimate = PlacementEstimate(numerics["s_star"], numerics["r_star"],
                                     numerics["mse"], numerics["iterations"],
                                     numerics["improved"])


def _stage_fuse(run: _Run):
    cfg = run.config
    outputs = {}
    cameras = [("reference", cfg.camera)]
    cameras += [(f"view{i:02d}", cam) for i, cam in enumerate(cfg.extra_cameras())]
    rendered = []
    for name, cam in cameras:
        out = render_fused_image(cfg.scene, cfg.object, run.placement, cfg.clip,
                                 cam, cfg.sampling)
        png = run.path(f"fused_{name}.png")
        save_png(out.color, png)
        save_pfm(out.depth, run.path(f"fused_{name}_depth.pfm"))
        outputs[f"fused_{name}"] = png
        outputs[f"fused_{name}_depth"] = run.path(f"fused_{name}_depth.pfm")
        rendered.append(name)
    return outputs, {"views": rendered}


_STAGE_FNS = {
    "reference": (_stage_reference, _load_reference),
    "edit": (_stage_edit, _load_edit),
    "depth": (_stage_depth, _load_depth),
    "place": (_stage_place, _load_place),
    "fuse": (_stage_fuse, None),
}


def run_render(config: SceneConfig, out_dir) -> dict:
    """Render the scene-only reference view (image + depth) into out_dir."""
    run = _Run(config, out_dir)
    start = time.perf_counter()
    outputs, numerics = _stage_reference(run)
    run.record("reference", outputs, numerics, time.perf_counter() - start)
    return run.manifest


def run_insert(config: SceneConfig, out_dir, start_stage: str | None = None) -> dict:
    """Run the insertion pipeline, optionally resuming from ``start_stage``."""
    run = _Run(config, out_dir)
    if start_stage is not None:
        if start_stage not in INSERT_STAGES:
            raise ValueError(f"unknown stage {start_stage!r}, expected one of {INSERT_STAGES}")
        run.manifest = load_manifest(out_dir)
    start_idx = INSERT_STAGES.index(start_stage) if start_stage else 0

    for stage in INSERT_STAGES[:start_idx]:
        run.verify_outputs(stage)
        loader = _STAGE_FNS[stage][1]
        if loader is not None:
            try:
                loader(run)
            except Exception as exc:
                raise StageError(stage, f"failed to load cached artifacts: {exc}") from exc

    for stage in INSERT_STAGES[start_idx:]:
        fn = _STAGE_FNS[stage][0]
        t0 = time.perf_counter()
        try:
            outputs, numerics = fn(run)
        except StageError:
            raise
        except Exception as exc:
            _save_manifest(run.manifest, run.out)
            raise StageError(stage, str(exc)) from exc
        run.record(stage, outputs, numerics, time.perf_counter() - t0)
    return run.manifest


def run_refine(config: SceneConfig, out_dir) -> dict:
    """Refine the inserted object grid using the placement from the manifest."""
    run = _Run(config, out_dir)
    run.manifest = load_manifest(out_dir)
    if "place" not in run.manifest.get("stages", {}):
        raise StageError("refine", "manifest has no 'place' stage; run `insert` first")
    _load_place(run)

    cfg = config
    rcfg = cfg.refine
    t0 = time.perf_counter()
    clip = cfg.clip
    if clip is None:
        raise StageError("refine", "refinement requires a clip_box (object grid bounds)")
    resolution = int(rcfg.get("resolution", 24))
    grid = TrainableGrid.from_field(
        cfg.object, (resolution,) * 3, clip,
        lr_sigma=float(rcfg.get("lr_sigma", 5.0)),
        lr_rgb=float(rcfg.get("lr_rgb", 20.0)))
    schedule = ViewSchedule.around(
        run.placement, cfg.camera,
        int(rcfg.get("n", 4)), int(rcfg.get("m", 1)),
        float(rcfg.get("dtheta", 45.0)), float(rcfg.get("dphi", 20.0)))

    kind = rcfg.get("refiner", "identity")
    if kind == "identity":
        refiner = IdentityRefiner()
    elif kind == "tint":
        refiner = TintRefiner(tuple(rcfg.get("tint", (1.0, 0.0, 0.0))),
                              float(rcfg.get("strength", 0.5)))
    else:
        raise StageError("refine", f"unknown refiner {kind!r}")

    image_size = tuple(rcfg.get("image_size", cfg.camera.image_size))
    pre = render_fused_image(cfg.scene, grid, run.placement, clip, cfg.camera, cfg.sampling)
    try:
        refine_loop(cfg.scene, grid, run.placement, refiner, schedule,
                    cfg.camera.focal, image_size, cfg.sampling,
                    iterations_per_view=int(rcfg.get("iterations_per_view", 15)),
                    clip=clip, near=cfg.camera.near, far=cfg.camera.far)
    except Exception as exc:
        raise StageError("refine", str(exc)) from exc
    post = render_fused_image(cfg.scene, grid, run.placement, clip, cfg.camera, cfg.sampling)

    from .fields import save_voxel_grid
    save_png(pre.color, run.path("refine_before.png"))
    save_png(post.color, run.path("refine_after.png"))
    save_voxel_grid(grid, run.path("refined_grid.bin"))
    outputs = {"before": run.path("refine_before.png"),
               "after": run.path("refine_after.png"),
               "grid": run.path("refined_grid.bin")}
    numerics = {"schedule": [[float(a), float(e)] for a, e in schedule.views],
                "resolution": resolution, "refiner": kind}
    run.record("refine", outputs, numerics, time.perf_counter() - t0)
    return run.manifest
