"""Key-region machinery: per-image Delaunay mesh, binary mask, and barycentric seeding.

The triangulated area of the visible sparse-point reprojections delimits the
image region with enough multi-view overlap to optimize; everything outside
it is excluded from training. Triangles also carry their vertices' 3D
positions and colors so sampled pixels can be lifted to 3D seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import delaunay
from .geometry import ProjectedPoint
from .scene_stream import SparsePoint


class DegenerateTriangleError(ValueError):
    """Barycentric weights were requested for a (near-)zero-area triangle."""


@dataclass(frozen=True)
class TriangleMesh2D:
    """2D triangulation whose vertices remember their 3D position and color."""

    vertices_uv: np.ndarray  # (n, 2) pixel coordinates
    vertices_xyz: np.ndarray  # (n, 3) world positions
    vertices_rgb: np.ndarray  # (n, 3) colors in [0, 1]
    triangles: np.ndarray  # (m, 3) vertex index triples

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])


@dataclass(frozen=True)
class KeyRegionMask:
    bits: np.ndarray  # (H, W) bool

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def count(self) -> int:
        return int(self.bits.sum())


def triangle_areas(uv: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Unsigned 2D areas, px^2, one per triangle."""
    if triangles.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    p1 = uv[triangles[:, 0]]
    p2 = uv[triangles[:, 1]]
    p3 = uv[triangles[:, 2]]
    cross = (p2[:, 0] - p1[:, 0]) * (p3[:, 1] - p1[:, 1]) - (p2[:, 1] - p1[:, 1]) * (
        p3[:, 0] - p1[:, 0]
    )
    return 0.5 * np.abs(cross)


def build_mesh(
    projections: Sequence[ProjectedPoint],
    points: Mapping[int, SparsePoint],
    width: int,
    height: int,
    max_edge_fraction: float = 0.25,
) -> TriangleMesh2D:
    """Triangulate visible reprojections and attach per-vertex 3D data.

    Sliver triangles (area < 1e-12 px^2) and triangles with an edge longer
    than `max_edge_fraction` of the image diagonal are discarded: they bridge
    unrelated depths and poison the planar lift.
    """
    uv = np.array([[p.u, p.v] for p in projections], dtype=np.float64).reshape(-1, 2)
    xyz = np.array(
        [points[p.point3d_id].position for p in projections], dtype=np.float64
    ).reshape(-1, 3)
    rgb = np.array(
        [points[p.point3d_id].color for p in projections], dtype=np.float64
    ).reshape(-1, 3)
    tris = delaunay.triangulate(uv) if len(projections) >= 3 else np.zeros((0, 3), np.int64)
    if tris.shape[0]:
        keep = triangle_areas(uv, tris) >= 1e-12
        max_edge = max_edge_fraction * math.hypot(width, height)
        for a, b in ((0, 1), (1, 2), (2, 0)):
            edge = np.linalg.norm(uv[tris[:, a]] - uv[tris[:, b]], axis=1)
            keep &= edge <= max_edge
        tris = tris[keep]
    return TriangleMesh2D(uv, xyz, rgb, tris)


def barycentric(
    s: tuple[float, float],
    p1: tuple[float, float],
    p2: tuple[float, float],
    p3: tuple[float, float],
) -> tuple[float, float, float]:
    """Barycentric weights of point s inside triangle (p1, p2, p3).

    The first two weights come from the closed-form area ratios; the third is
    fixed to 1 - w1 - w2 so the partition of unity holds exactly.
    """
    x_s, y_s = s
    x1, y1 = p1
    x2, y2 = p2
    x3, y3 = p3
    denom = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
    if abs(denom) < 2e-12:
        raise DegenerateTriangleError(f"triangle area {abs(denom) / 2:g} px^2 below cutoff")
    l1 = ((y2 - y3) * (x_s - x3) + (x3 - x2) * (y_s - y3)) / denom
    l2 = ((y3 - y1) * (x_s - x3) + (x1 - x3) * (y_s - y3)) / denom
    l3 = 1.0 - l1 - l2
    return (l1, l2, l3)


def lift_to_3d(
    weights: tuple[float, float, float], pos1: np.ndarray, pos2: np.ndarray, pos3: np.ndarray
) -> np.ndarray:
    """Weighted sum of the triangle's 3D vertices: the planar lift of a 2D sample."""
    l1, l2, l3 = weights
    return l1 * np.asarray(pos1) + l2 * np.asarray(pos2) + l3 * np.asarray(pos3)


def interp_color(
    weights: tuple[float, float, float], c1: np.ndarray, c2: np.ndarray, c3: np.ndarray
) -> np.ndarray:
    """Weighted vertex-color sum, clamped to [0, 1]."""
    l1, l2, l3 = weights
    out = l1 * np.asarray(c1) + l2 * np.asarray(c2) + l3 * np.asarray(c3)
    return np.clip(out, 0.0, 1.0)


def rasterize_mask(mesh: TriangleMesh2D, width: int, height: int) -> KeyRegionMask:
    """Set every pixel whose center lies inside or on any mesh triangle.

    The inside test uses normalized barycentric signs with a 1e-9 boundary
    tolerance, evaluated per triangle over its clipped bounding box.
    """
    bits = np.zeros((height, width), dtype=bool)
    uv = mesh.vertices_uv
    for i1, i2, i3 in mesh.triangles:
        x1, y1 = uv[i1]
        x2, y2 = uv[i2]
        x3, y3 = uv[i3]
        denom = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
        if abs(denom) < 2e-12:
            continue
        xmin = max(int(math.floor(min(x1, x2, x3) - 0.5)), 0)
        xmax = min(int(math.ceil(max(x1, x2, x3) - 0.5)), width - 1)
        ymin = max(int(math.floor(min(y1, y2, y3) - 0.5)), 0)
        ymax = min(int(math.ceil(max(y1, y2, y3) - 0.5)), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        xs = np.arange(xmin, xmax + 1, dtype=np.float64) + 0.5
        ys = np.arange(ymin, ymax + 1, dtype=np.float64) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        l1 = ((y2 - y3) * (gx - x3) + (x3 - x2) * (gy - y3)) / denom
        l2 = ((y3 - y1) * (gx - x3) + (x1 - x3) * (gy - y3)) / denom
        l3 = 1.0 - l1 - l2
        inside = (l1 >= -1e-9) & (l2 >= -1e-9) & (l3 >= -1e-9)
        bits[ymin : ymax + 1, xmin : xmax + 1] |= inside
    return KeyRegionMask(bits)


def _triangle_rng(seed: int, frame_index: int, triangle_index: int) -> np.random.Generator:
    # Counter-based generator keyed by (seed, frame, triangle) so any triangle's
    # samples can be reproduced independently of evaluation order.
    mask64 = (1 << 64) - 1
    key = np.array(
        [seed & mask64, ((frame_index << 32) ^ triangle_index) & mask64], dtype=np.uint64
    )
    return np.random.Generator(np.random.Philox(key=key))


def sample_triangle(
    p1: np.ndarray,
    p2: np.ndarray,
    p3: np.ndarray,
    h_t: int,
    seed: int = 0,
    frame_index: int = 0,
    triangle_index: int = 0,
) -> np.ndarray:
    """Draw `h_t` uniform strictly-interior points of a triangle; (h_t, 2) array.

    Uses the square-root warp of a unit-square sample onto barycentric
    coordinates, with the unit samples nudged into (0, 1) so every output is
    interior. Degenerate triangles yield an empty array.
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    p3 = np.asarray(p3, dtype=np.float64)
    cross = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p2[1] - p1[1]) * (p3[0] - p1[0])
    if abs(cross) < 2e-12 or h_t < 1:
        return np.zeros((0, 2), dtype=np.float64)
    rng = _triangle_rng(seed, frame_index, triangle_index)
    r = rng.random((h_t, 2))
    r = 1e-6 + r * (1.0 - 2e-6)
    sqrt_r1 = np.sqrt(r[:, 0])
    l1 = 1.0 - sqrt_r1
    l2 = sqrt_r1 * (1.0 - r[:, 1])
    l3 = sqrt_r1 * r[:, 1]
    return np.outer(l1, p1) + np.outer(l2, p2) + np.outer(l3, p3)
