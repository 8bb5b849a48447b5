"""Orthographic map product: view-box derivation, TDOM rendering, georeferenced output."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gaussian_field import GaussianField
from .image_files import save_png
from .splat_render import (
    OrthoViewBox,
    RasterSettings,
    UP_AXIS_PERMUTATIONS,
    composite,
    project_splats_ortho,
)

WHITE = np.ones(3)


@dataclass(frozen=True)
class TdomRaster:
    """Georeferenced orthographic render: pixel (0, 0) is the box's top-left corner."""

    pixels: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    gsd: float  # scene units per pixel
    origin: tuple[float, float]  # world coords of the upper-left pixel center
    up_axis: str

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


def derive_view_box(
    positions: np.ndarray,
    margin_fraction: float = 0.02,
    up_axis: str = "z",
    min_extent: float = 1.0,
) -> OrthoViewBox:
    """Axis-aligned bounds of the cloud's ground-plane coords, expanded by a margin.

    Each bound grows by margin_fraction of that axis' span; axes whose span
    falls below `min_extent` are widened symmetrically to it so degenerate
    clouds still produce a usable box.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if positions.shape[0] == 0:
        raise ValueError("cannot derive a view box from an empty cloud")
    perm = UP_AXIS_PERMUTATIONS[up_axis]
    pts = positions[:, perm]

    def _bounds(values: np.ndarray) -> tuple[float, float]:
        lo = float(values.min())
        hi = float(values.max())
        span = hi - lo
        lo -= margin_fraction * span
        hi += margin_fraction * span
        if hi - lo < min_extent:
            center = 0.5 * (lo + hi)
            lo = center - 0.5 * min_extent
            hi = center + 0.5 * min_extent
        return lo, hi

    l, r = _bounds(pts[:, 0])
    b, t = _bounds(pts[:, 1])
    z_n, z_f = _bounds(pts[:, 2])
    return OrthoViewBox(l, r, b, t, z_n, z_f, up_axis)


def union_boxes(a: OrthoViewBox | None, b: OrthoViewBox) -> OrthoViewBox:
    """Expansion-only union so the active TDOM footprint never shrinks."""
    if a is None:
        return b
    if a.up_axis != b.up_axis:
        raise ValueError("cannot union boxes with different up axes")
    return OrthoViewBox(
        min(a.l, b.l),
        max(a.r, b.r),
        min(a.b, b.b),
        max(a.t, b.t),
        min(a.z_n, b.z_n),
        max(a.z_f, b.z_f),
        a.up_axis,
    )


def render_tdom(
    field: GaussianField,
    box: OrthoViewBox,
    gsd: float,
    settings: RasterSettings = RasterSettings(),
) -> TdomRaster:
    """Orthographically splat the field over the box at the given ground sample distance.

    The raster is ceil(span / gsd) in each dimension; the box is extended
    right/down to a whole number of pixels so every pixel spans exactly one
    gsd. Background (no coverage) is white, with coverage in the alpha plane.
    """
    if gsd <= 0:
        raise ValueError("gsd must be positive")
    width = max(int(math.ceil((box.r - box.l) / gsd)), 1)
    height = max(int(math.ceil((box.t - box.b) / gsd)), 1)
    snapped = OrthoViewBox(
        box.l,
        box.l + width * gsd,
        box.t - height * gsd,
        box.t,
        box.z_n,
        box.z_f,
        box.up_axis,
    )
    splats = project_splats_ortho(field, snapped, width, height, settings)
    output, _ = composite(splats, width, height, WHITE, settings)
    origin = (box.l + 0.5 * gsd, box.t - 0.5 * gsd)
    return TdomRaster(
        pixels=output.color,
        alpha=output.alpha,
        gsd=gsd,
        origin=origin,
        up_axis=box.up_axis,
    )


def write_geo_outputs(raster: TdomRaster, stem: str | os.PathLike) -> tuple[Path, Path]:
    """Write `<stem>.png` (RGBA) and the ESRI world file `<stem>.pgw`."""
    stem = Path(stem)
    png_path = stem.with_suffix(".png")
    pgw_path = stem.with_suffix(".pgw")
    save_png(png_path, raster.pixels, raster.alpha)
    lines = [
        repr(float(raster.gsd)),
        "0",
        "0",
        repr(-float(raster.gsd)),
        repr(float(raster.origin[0])),
        repr(float(raster.origin[1])),
    ]
    pgw_path.write_text("\n".join(lines) + "\n")
    return png_path, pgw_path


def read_world_file(path: str | os.PathLike) -> tuple[float, float, float, float, float, float]:
    values = [float(line) for line in Path(path).read_text().split()]
    if len(values) != 6:
        raise ValueError(f"world file {path} must have 6 values, found {len(values)}")
    return tuple(values)  # type: ignore[return-value]
