"""Affine alignment of non-metric monocular depth to rendered scene depth.

The fit is a masked, center-weighted least squares over a crop around the
object bounding box: pixels inside the box are excluded (they show the
inserted object, absent from the scene render) and the remaining pixels are
weighted by closeness to the box center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DepthMap",
    "BBox2D",
    "AffineDepthFit",
    "DegenerateFitError",
    "compute_center_weights",
    "align_depth",
    "object_center_depth",
    "SyntheticDepthProvider",
]

_DET_THRESHOLD = 1e-12


class DegenerateFitError(RuntimeError):
    """Raised when the 2x2 normal system of the affine fit is singular."""


@dataclass(frozen=True)
class DepthMap:
    """(h, w) depth values with a validity mask; invalid entries are ignored."""

    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"depth map must be 2D, got shape {values.shape}")
        valid = self.valid
        if valid is None:
            valid = np.ones(values.shape, dtype=bool)
        else:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != values.shape:
                raise ValueError("validity mask shape must match depth values")
        if not np.all(np.isfinite(values[valid])):
            raise ValueError("valid depth entries must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class BBox2D:
    """Pixel-aligned box: (top, left) corner plus height/width, all integers."""

    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("bbox height and width must be >= 1")
        if self.top < 0 or self.left < 0:
            raise ValueError("bbox top-left must be non-negative")

    @property
    def center(self) -> tuple[float, float]:
        """(row, col) center, fractional for even extents."""
        return (self.top + (self.height - 1) / 2.0, self.left + (self.width - 1) / 2.0)

    @property
    def center_pixel(self) -> tuple[int, int]:
        ic, jc = self.center
        return int(round(ic)), int(round(jc))

    def check_inside(self, shape) -> None:
        h, w = shape
        if self.top + self.height > h or self.left + self.width > w:
            raise ValueError(f"bbox {self} exceeds image of shape {shape}")

    def mask(self, shape) -> np.ndarray:
        """Binary (h, w) mask, 1 inside the box."""
        self.check_inside(shape)
        m = np.zeros(shape, dtype=bool)
        m[self.top:self.top + self.height, self.left:self.left + self.width] = True
        return m

    def dilated(self, factor: float, shape) -> "BBox2D":
        """Grow by ``factor`` of each extent per side, clamped to the image."""
        h, w = shape
        dh = int(round(self.height * factor))
        dw = int(round(self.width * factor))
        top = max(0, self.top - dh)
        left = max(0, self.left - dw)
        bottom = min(h, self.top + self.height + dh)
        right = min(w, self.left + self.width + dw)
        return BBox2D(top, left, bottom - top, right - left)


@dataclass(frozen=True)
class AffineDepthFit:
    """Fitted depth = a * estimated + b, with the RMS of the fit residual."""

    a: float
    b: float
    residual_rms: float

    def apply(self, depth: np.ndarray) -> np.ndarray:
        return self.a * np.asarray(depth, dtype=float) + self.b


def compute_center_weights(shape, center) -> np.ndarray:
    """Weights in [0, 1]: 1 at the center pixel, 0 at the farthest pixel.

    W_ij = 1 - dist(ij, center) / max_dist; a single-pixel image gets W = 1.
    """
    h, w = shape
    ic, jc = center
    if not (0 <= ic <= h - 1 and 0 <= jc <= w - 1):
        raise ValueError(f"center ({ic}, {jc}) outside image of shape {shape}")
    i, j = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    dist = np.sqrt((i - ic) ** 2 + (j - jc) ** 2)
    z = dist.max()
    if z == 0:
        return np.ones(shape)
    return 1.0 - dist / z


def align_depth(estimated: DepthMap, rendered: DepthMap, bbox: BBox2D,
                crop_dilation: float = 1.0) -> AffineDepthFit:
    """Weighted least-squares (a, b) with rendered ~ a * estimated + b.

    Runs on the bbox crop dilated by ``crop_dilation`` per side; pixels inside
    the bbox are excluded and weights are computed on the crop with the bbox
    center as the weight center.
    """
    if estimated.shape != rendered.shape:
        raise ValueError("estimated and rendered depth maps must have the same shape")
    bbox.check_inside(estimated.shape)
    crop = bbox.dilated(crop_dilation, estimated.shape)
    rows = slice(crop.top, crop.top + crop.height)
    cols = slice(crop.left, crop.left + crop.width)

    e = estimated.values[rows, cols]
    r = rendered.values[rows, cols]
    usable = estimated.valid[rows, cols] & rendered.valid[rows, cols]
    usable &= ~bbox.mask(estimated.shape)[rows, cols]

    ic, jc = bbox.center
    weights = compute_center_weights((crop.height, crop.width), (ic - crop.top, jc - crop.left))
    w = np.where(usable, weights, 0.0)

    if np.count_nonzero(usable) < 2:
        raise DegenerateFitError("need at least 2 valid unmasked pixels for the affine fit")

    # Weighted 2x2 normal equations for min sum w (r - a e - b)^2.
    sw = w.sum()
    swe = (w * e).sum()
    swee = (w * e * e).sum()
    swr = (w * r).sum()
    swer = (w * e * r).sum()
    det = swee * sw - swe * swe
    if abs(det) <= _DET_THRESHOLD * max(1.0, swee * sw):
        raise DegenerateFitError("estimated depth is constant on the fit region")
    a = (swer * sw - swe * swr) / det
    b = (swee * swr - swe * swer) / det

    resid = r[usable] - (a * e[usable] + b)
    rms = float(np.sqrt(np.mean(resid**2))) if resid.size else 0.0
    return AffineDepthFit(float(a), float(b), rms)


def object_center_depth(aligned: DepthMap, bbox: BBox2D) -> float:
    """Aligned depth at the bbox center pixel."""
    bbox.check_inside(aligned.shape)
    i, j = bbox.center_pixel
    if not aligned.valid[i, j]:
        raise ValueError(f"center pixel ({i}, {j}) has no valid depth")
    return float(aligned.values[i, j])


class SyntheticDepthProvider:
    """Monocular-depth stand-in: ground truth warped by an affine map + noise.

    Returns (true_depth - shift_true) / scale_true + noise so that the
    alignment should recover approximately (scale_true, shift_true).
    """

    def __init__(self, scale=1.0, shift=0.0, noise_sigma=0.0, seed=0):
        if scale == 0:
            raise ValueError("distortion scale must be nonzero")
        self.scale = float(scale)
        self.shift = float(shift)
        self.noise_sigma = float(noise_sigma)
        self.seed = int(seed)

    def estimate(self, true_depth: np.ndarray) -> DepthMap:
        rng = np.random.default_rng(self.seed)
        values = (np.asarray(true_depth, dtype=float) - self.shift) / self.scale
        if self.noise_sigma > 0:
            values = values + rng.normal(0.0, self.noise_sigma, values.shape)
        return DepthMap(values)
