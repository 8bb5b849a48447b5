"""Gradient-discrepancy detection: LoG maps, thresholded integration region, seed lifting.

Comparing Laplacian-of-Gaussian responses of the current render against the
captured image highlights unseen or coarsely reconstructed content; pixels
whose absolute response difference exceeds the threshold (within the key
region) form the integration region where new Gaussians are seeded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .key_region import KeyRegionMask, TriangleMesh2D, barycentric, interp_color, lift_to_3d, sample_triangle, triangle_areas
from .scene_stream import CameraIntrinsics, FramePose
from .geometry import camera_space

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class DiscrepancyMap:
    diff: np.ndarray  # (H, W) |LoG(render) - LoG(input)|
    region_bits: np.ndarray  # (H, W) bool, the integration region


@dataclass(frozen=True)
class SampledSeed:
    """A 2D sample lifted to a 3D position/color, ready to become a Gaussian."""

    pixel: tuple[float, float]
    weights: tuple[float, float, float]
    position: np.ndarray  # (3,)
    color: np.ndarray  # (3,)
    footprint: float  # isotropic scale hint, scene units
    diff: float  # gradient discrepancy at the containing pixel


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luma of an (H, W, 3) raster in [0, 1]: 0.299 R + 0.587 G + 0.114 B."""
    return rgb @ GRAY_WEIGHTS


def log_kernel(size: int = 5, sigma: float = 1.0) -> np.ndarray:
    """Discrete Laplacian-of-Gaussian kernel, normalized to exactly zero sum."""
    if size % 2 != 1 or size < 3:
        raise ValueError("kernel size must be odd and >= 3")
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    r2 = xx * xx + yy * yy
    k = (r2 - 2.0 * sigma**2) / sigma**4 * np.exp(-r2 / (2.0 * sigma**2))
    return k - k.mean()


def log_filter(gray: np.ndarray, size: int = 5, sigma: float = 1.0) -> np.ndarray:
    """LoG response map of a grayscale raster; borders handled by reflection."""
    if gray.size == 0:
        raise ValueError("empty raster")
    return ndimage.convolve(gray, log_kernel(size, sigma), mode="reflect")


def discrepancy_map(
    render: np.ndarray,
    captured: np.ndarray,
    mask: KeyRegionMask,
    g_m: float,
    size: int = 5,
    sigma: float = 1.0,
) -> DiscrepancyMap:
    """Absolute LoG difference between render and capture, thresholded into R_a.

    A pixel joins the integration region iff its difference exceeds `g_m` and
    it lies inside the key-region mask.
    """
    if render.shape != captured.shape:
        raise ValueError(f"raster shapes differ: {render.shape} vs {captured.shape}")
    if render.shape[:2] != mask.bits.shape:
        raise ValueError("mask dimensions do not match rasters")
    if g_m <= 0:
        raise ValueError("threshold must be positive")
    diff = np.abs(
        log_filter(to_grayscale(render), size, sigma)
        - log_filter(to_grayscale(captured), size, sigma)
    )
    region = (diff > g_m) & mask.bits
    return DiscrepancyMap(diff, region)


def seeds_in_region(
    mesh: TriangleMesh2D,
    region: DiscrepancyMap,
    h_t: int,
    pose: FramePose,
    intr: CameraIntrinsics,
    seed: int = 0,
    frame_index: int = 0,
    cap: int = 50_000,
) -> list[SampledSeed]:
    """Sample each triangle uniformly and lift the samples that fall inside R_a.

    Output is ordered by (triangle index, sample index). When more than `cap`
    samples survive, the largest-discrepancy ones are kept (ties broken by
    that same ordering) so per-frame field growth stays bounded.
    """
    height, width = region.region_bits.shape
    f_mean = 0.5 * (intr.fx + intr.fy)
    kept: list[tuple[float, int, int, SampledSeed]] = []
    uv = mesh.vertices_uv
    areas = triangle_areas(uv, mesh.triangles)
    for ti, (i1, i2, i3) in enumerate(mesh.triangles):
        pts = sample_triangle(uv[i1], uv[i2], uv[i3], h_t, seed, frame_index, ti)
        if pts.shape[0] == 0:
            continue
        spacing_px = math.sqrt(areas[ti] / h_t)
        for si, (x_s, y_s) in enumerate(pts):
            px = int(x_s)
            py = int(y_s)
            if px < 0 or py < 0 or px >= width or py >= height:
                continue
            if not region.region_bits[py, px]:
                continue
            w = barycentric((x_s, y_s), uv[i1], uv[i2], uv[i3])
            position = lift_to_3d(w, mesh.vertices_xyz[i1], mesh.vertices_xyz[i2], mesh.vertices_xyz[i3])
            color = interp_color(w, mesh.vertices_rgb[i1], mesh.vertices_rgb[i2], mesh.vertices_rgb[i3])
            depth = camera_space(position, pose)[0, 2]
            footprint = spacing_px * max(depth, 1e-9) / f_mean
            seed_rec = SampledSeed(
                pixel=(float(x_s), float(y_s)),
                weights=w,
                position=position,
                color=color,
                footprint=float(footprint),
                diff=float(region.diff[py, px]),
            )
            kept.append((seed_rec.diff, ti, si, seed_rec))
    if len(kept) > cap:
        kept.sort(key=lambda rec: (-rec[0], rec[1], rec[2]))
        kept = kept[:cap]
        kept.sort(key=lambda rec: (rec[1], rec[2]))
    return [rec[3] for rec in kept]
