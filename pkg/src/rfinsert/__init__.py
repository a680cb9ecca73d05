"""Radiance-field composition and object-placement engine.

Volumetric rendering over analytic/voxel radiance fields, depth-guided
placement estimation, scale-aware field fusion, mask-conditioned inpainting
scheduling, and an iterative refinement loop, orchestrated by a five-stage
insertion pipeline with a CLI.
"""

from .depth import (
    AffineDepthFit,
    BBox2D,
    DegenerateFitError,
    DepthMap,
    align_depth,
    compute_center_weights,
    object_center_depth,
)
from .fields import (
    BoundingBox3D,
    BoxPrimitive,
    CompositeField,
    FieldSample,
    GaussianBlob,
    RadianceField,
    SpherePrimitive,
    VoxelGrid,
    load_voxel_grid,
    make_primitive,
    make_voxel_grid,
    save_voxel_grid,
    voxelize,
)
from .geometry import (
    CameraModel,
    ObjectPlacement,
    Ray,
    build_object_frame,
    compute_object_center,
    generate_ray,
    object_to_world,
    transform_ray,
    world_to_object,
)
from .placement import (
    PlacementEstimate,
    ReconstructorIntrinsics,
    assemble_placement,
    init_scale_distance,
    optimize_scale_distance,
)
from .refine import (
    IdentityRefiner,
    Refiner2D,
    TintRefiner,
    TrainableGrid,
    ViewSchedule,
    extract_multiview_masks,
    fit_grid_to_views,
    order_views,
    refine_loop,
    sample_refinement_cameras,
)
from .render import (
    RenderOutput,
    SamplingConfig,
    render_fused_image,
    render_fused_ray,
    render_image,
    render_object_mask,
    render_ray,
)
from .repaint import (
    Denoiser,
    NoiseSchedule,
    RepaintConfig,
    blend,
    forward_noise,
    repaint_inpaint,
    repaint_trace,
)

__version__ = "0.1.0"
