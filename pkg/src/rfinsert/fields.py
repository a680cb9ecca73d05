"""Radiance fields: analytic primitives and dense voxel grids.

A field maps 3D points to a volumetric density (1/world-length) and an RGB
color in [0, 1].  Queries outside a field's bounding region return zero
density and black, which is the convention the fusion clipping relies on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FieldSample",
    "BoundingBox3D",
    "RadianceField",
    "SpherePrimitive",
    "BoxPrimitive",
    "GaussianBlob",
    "CompositeField",
    "VoxelGrid",
    "make_primitive",
    "make_voxel_grid",
    "voxelize",
    "save_voxel_grid",
    "load_voxel_grid",
]


@dataclass(frozen=True)
class FieldSample:
    """Density and color at a single 3D point."""

    density: float
    color: tuple[float, float, float]

    def __post_init__(self):
        if not np.isfinite(self.density) or self.density < 0:
            raise ValueError(f"density must be finite and >= 0, got {self.density}")
        if any(c < 0 or c > 1 for c in self.color):
            raise ValueError(f"color channels must lie in [0, 1], got {self.color}")


@dataclass(frozen=True)
class BoundingBox3D:
    """Axis-aligned box, min corner componentwise <= max corner."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float)
        hi = np.asarray(self.max_corner, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("corners must be 3D points")
        if np.any(lo > hi):
            raise ValueError(f"min corner {self.min_corner} exceeds max corner {self.max_corner}")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.min_corner, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.max_corner, dtype=float)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Half-open membership test: lo <= p < hi, vectorized over (N, 3)."""
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lo) & (pts < self.hi), axis=-1)


class RadianceField:
    """Base class. Subclasses implement :meth:`query_many` on (N, 3) arrays."""

    kind: str = "abstract"

    def query_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (density (N,), color (N, 3)) at the given points."""
        raise NotImplementedError

    def query(self, point) -> FieldSample:
        pts = np.asarray(point, dtype=float).reshape(1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("query point must be finite")
        sigma, rgb = self.query_many(pts)
        return FieldSample(float(sigma[0]), tuple(float(c) for c in rgb[0]))


def _zero_outside(points, inside, sigma_inside, color_inside):
    n = points.shape[0]
    sigma = np.zeros(n)
    rgb = np.zeros((n, 3))
    sigma[inside] = sigma_inside
    rgb[inside] = color_inside
    return sigma, rgb


class SpherePrimitive(RadianceField):
    kind = "sphere"

    def __init__(self, center, radius, density, color=(1.0, 1.0, 1.0)):
        if radius <= 0:
            raise ValueError(f"radius must be positive, got {radius}")
        if density < 0:
            raise ValueError(f"density must be >= 0, got {density}")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.density = float(density)
        self.color = np.clip(np.asarray(color, dtype=float), 0.0, 1.0)

    def query_many(self, points):
        pts = np.atleast_2d(points)
        inside = np.sum((pts - self.center) ** 2, axis=-1) <= self.radius**2
        return _zero_outside(pts, inside, self.density, self.color)


class BoxPrimitive(RadianceField):
    kind = "box"

    def __init__(self, center, half_extents, density, color=(1.0, 1.0, 1.0)):
        he = np.asarray(half_extents, dtype=float)
        if np.any(he <= 0):
            raise ValueError(f"half extents must be positive, got {half_extents}")
        if density < 0:
            raise ValueError(f"density must be >= 0, got {density}")
        self.center = np.asarray(center, dtype=float)
        self.half_extents = he
        self.density = float(density)
        self.color = np.clip(np.asarray(color, dtype=float), 0.0, 1.0)

    def query_many(self, points):
        pts = np.atleast_2d(points)
        inside = np.all(np.abs(pts - self.center) <= self.half_extents, axis=-1)
        return _zero_outside(pts, inside, self.density, self.color)


class GaussianBlob(RadianceField):
    """Isotropic Gaussian density bump, truncated at 4 standard deviations."""

    kind = "gaussian"
    TRUNCATION = 4.0

    def __init__(self, center, peak_density, stddev, color=(1.0, 1.0, 1.0)):
        if stddev <= 0:
            raise ValueError(f"stddev must be positive, got {stddev}")
        if peak_density < 0:
            raise ValueError(f"peak density must be >= 0, got {peak_density}")
        self.center = np.asarray(center, dtype=float)
        self.peak_density = float(peak_density)
        self.stddev = float(stddev)
        self.color = np.clip(np.asarray(color, dtype=float), 0.0, 1.0)

    def query_many(self, points):
        pts = np.atleast_2d(points)
        d2 = np.sum((pts - self.center) ** 2, axis=-1)
        cutoff = (self.TRUNCATION * self.stddev) ** 2
        inside = d2 <= cutoff
        sigma = np.zeros(pts.shape[0])
        rgb = np.zeros((pts.shape[0], 3))
        sigma[inside] = self.peak_density * np.exp(-0.5 * d2[inside] / self.stddev**2)
        rgb[inside] = self.color
        return sigma, rgb


class VoxelGrid(RadianceField):
    """Dense voxel grid with samples at voxel centers, trilinear interpolation.

    Queries on the boundary half-voxel clamp to the nearest sample plane, so
    interpolation is continuous on the closed interior.  Queries at or past
    ``bounds.max`` (half-open convention) and below ``bounds.min`` return zero.
    """

    kind = "voxel"

    def __init__(self, resolution, sigma: np.ndarray, rgb: np.ndarray, bounds: BoundingBox3D):
        res = tuple(int(r) for r in resolution)
        if len(res) != 3 or any(r < 1 for r in res):
            raise ValueError(f"resolution must be three positive integers, got {resolution}")
        sigma = np.asarray(sigma, dtype=float)
        rgb = np.asarray(rgb, dtype=float)
        if sigma.shape != res:
            raise ValueError(f"density array shape {sigma.shape} != resolution {res}")
        if rgb.shape != res + (3,):
            raise ValueError(f"color array shape {rgb.shape} != resolution {res} + (3,)")
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ValueError("grid densities must be finite and >= 0")
        if np.any((rgb < 0) | (rgb > 1)):
            raise ValueError("grid colors must lie in [0, 1]")
        self.resolution = res
        self.sigma = sigma
        self.rgb = rgb
        self.bounds = bounds
        self._cell = (bounds.hi - bounds.lo) / np.asarray(res, dtype=float)

    def interp_coeffs(self, points: np.ndarray):
        """Trilinear corner indices/weights for (N, 3) points.

        Returns (flat_idx (N, 8), weights (N, 8), inside (N,)).  Points outside
        the half-open bounds get inside=False and zero weights.
        """
        pts = np.atleast_2d(points)
        inside = self.bounds.contains(pts)
        res = np.asarray(self.resolution)
        u = (pts - self.bounds.lo) / self._cell - 0.5
        i0 = np.clip(np.floor(u).astype(np.int64), 0, np.maximum(res - 2, 0))
        frac = np.clip(u - i0, 0.0, 1.0)
        i1 = np.minimum(i0 + 1, res - 1)

        nx, ny, nz = self.resolution
        w = np.zeros((pts.shape[0], 8))
        idx = np.zeros((pts.shape[0], 8), dtype=np.int64)
        k = 0
        for dx in (0, 1):
            wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
            ix = i1[:, 0] if dx else i0[:, 0]
            for dy in (0, 1):
                wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
                iy = i1[:, 1] if dy else i0[:, 1]
                for dz in (0, 1):
                    wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                    iz = i1[:, 2] if dz else i0[:, 2]
                    w[:, k] = wx * wy * wz
                    idx[:, k] = (ix * ny + iy) * nz + iz
                    k += 1
        w[~inside] = 0.0
        return idx, w, inside

    def query_many(self, points):
        pts = np.atleast_2d(points)
        idx, w, inside = self.interp_coeffs(pts)
        sigma = np.sum(self.sigma.reshape(-1)[idx] * w, axis=1)
        rgb = np.sum(self.rgb.reshape(-1, 3)[idx] * w[..., None], axis=1)
        sigma[~inside] = 0.0
        rgb[~inside] = 0.0
        return sigma, rgb

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of all sample points, shape resolution + (3,)."""
        axes = [
            self.bounds.lo[a] + (np.arange(self.resolution[a]) + 0.5) * self._cell[a]
            for a in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


class CompositeField(RadianceField):
    """Union of fields: densities add, colors mix density-weighted."""

    kind = "composite"

    def __init__(self, children):
        children = list(children)
        if not children:
            raise ValueError("composite field needs at least one child")
        self.children = children

    def query_many(self, points):
        pts = np.atleast_2d(points)
        sigma = np.zeros(pts.shape[0])
        weighted = np.zeros((pts.shape[0], 3))
        for child in self.children:
            s, c = child.query_many(pts)
            sigma += s
            weighted += s[:, None] * c
        with np.errstate(invalid="ignore", divide="ignore"):
            rgb = np.where(sigma[:, None] > 0,
                           weighted / np.where(sigma == 0, 1.0, sigma)[:, None], 0.0)
        return sigma, rgb


_PRIMITIVES = {
    "sphere": SpherePrimitive,
    "box": BoxPrimitive,
    "gaussian": GaussianBlob,
}


def make_primitive(kind: str, **params) -> RadianceField:
    """Construct an analytic primitive field by kind name."""
    if kind not in _PRIMITIVES:
        raise ValueError(f"unknown primitive kind {kind!r}, expected one of {sorted(_PRIMITIVES)}")
    return _PRIMITIVES[kind](**params)


def make_voxel_grid(resolution, samples, bounds: BoundingBox3D) -> VoxelGrid:
    """Build a voxel grid from a flat (n_voxels, 4) array of (density, r, g, b).

    Sample order is C-order over (x, y, z): index = (ix*ny + iy)*nz + iz.
    """
    res = tuple(int(r) for r in resolution)
    arr = np.asarray(samples, dtype=float)
    n = res[0] * res[1] * res[2]
    if arr.shape != (n, 4):
        raise ValueError(f"expected {n} samples of 4 values, got array of shape {arr.shape}")
    sigma = arr[:, 0].reshape(res)
    rgb = arr[:, 1:4].reshape(res + (3,))
    return VoxelGrid(res, sigma, rgb, bounds)


def voxelize(field: RadianceField, resolution, bounds: BoundingBox3D) -> VoxelGrid:
    """Sample an arbitrary field at voxel centers into a dense grid."""
    res = tuple(int(r) for r in resolution)
    cell = (bounds.hi - bounds.lo) / np.asarray(res, dtype=float)
    axes = [bounds.lo[a] + (np.arange(res[a]) + 0.5) * cell[a] for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    sigma, rgb = field.query_many(pts)
    return VoxelGrid(res, sigma.reshape(res), rgb.reshape(res + (3,)), bounds)


_HEADER = struct.Struct("<3I6f")


def save_voxel_grid(grid: VoxelGrid, path) -> None:
    """Write the flat binary format: header (3 u32 + 6 f32) then f32 records."""
    records = np.concatenate(
        [grid.sigma.reshape(-1, 1), grid.rgb.reshape(-1, 3)], axis=1
    ).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*grid.resolution, *grid.bounds.lo, *grid.bounds.hi))
        fh.write(records.tobytes())


def load_voxel_grid(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"truncated voxel grid header in {path}")
        vals = _HEADER.unpack(header)
        res = vals[0:3]
        bounds = BoundingBox3D(tuple(vals[3:6]), tuple(vals[6:9]))
        n = res[0] * res[1] * res[2]
        data = np.frombuffer(fh.read(n * 16), dtype="<f4").astype(float)
    if data.size != n * 4:
        raise ValueError(f"truncated voxel grid payload in {path}")
    return make_voxel_grid(res, data.reshape(n, 4), bounds)
