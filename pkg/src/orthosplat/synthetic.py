"""Synthetic desk-scale scene: textured ground plane plus one box building.

Nine nadir 64x64 views are ray-cast analytically, a sparse point cloud with
honest visibility tracks is sampled from the surfaces, and everything is
exported in the reconstruction text format, so the full pipeline can run
against inputs whose true orthophoto is known in closed form.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import quat_to_rotmat
from .image_files import save_png
from .scene_stream import (
    CameraIntrinsics,
    FramePose,
    SparsePoint,
    write_cameras,
    write_images,
    write_points3d,
)

GROUND_SIZE = 10.0
BUILDING_XY = (4.0, 6.0, 4.0, 6.0)  # x0, x1, y0, y1
BUILDING_HEIGHT = 1.5
FACADE_RGB = np.array([0.10, 0.80, 0.25])
CAMERA_HEIGHT = 12.0
FOCAL = 128.0
IMAGE_SIZE = 64
CHECKER_GROUND = 0.11
CHECKER_ROOF = 0.07


def ground_color(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Smooth color ramps plus a checker with 0.75-unit squares; (..., 3) in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    checker = ((np.floor(x / 0.75) + np.floor(y / 0.75)) % 2.0) * 2.0 - 1.0
    r = 0.50 + 0.13 * np.sin(0.55 * x + 0.3) * np.cos(0.35 * y)
    g = 0.47 + 0.10 * np.cos(0.45 * x) * np.sin(0.4 * y + 0.8)
    b = 0.38 + 0.08 * np.sin(0.3 * (x + y))
    out = np.stack([r, g, b], axis=-1) + (CHECKER_GROUND * checker)[..., None]
    return np.clip(out, 0.0, 1.0)


def roof_color(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Dark red-brown roof with its own finer checker; far from the facade green."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    checker = ((np.floor(x / 0.5) + np.floor(y / 0.5)) % 2.0) * 2.0 - 1.0
    r = 0.55 + 0.06 * np.sin(2.1 * x)
    g = 0.23 + 0.04 * np.cos(1.7 * y)
    b = np.full_like(x, 0.20)
    out = np.stack([r, g, b], axis=-1) + (CHECKER_ROOF * checker)[..., None]
    return np.clip(out, 0.0, 1.0)


def inside_footprint(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x0, x1, y0, y1 = BUILDING_XY
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def orthophoto_truth(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """True nadir orthophoto color at ground coordinates: roof over the footprint."""
    ground = ground_color(x, y)
    roof = roof_color(x, y)
    return np.where(inside_footprint(x, y)[..., None], roof, ground)


def _surface_color(points: np.ndarray) -> np.ndarray:
    """Color of a surface point: ground, roof, or facade by geometry."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    colors = ground_color(x, y)
    on_roof = (z > BUILDING_HEIGHT - 1e-6) & inside_footprint(x, y)
    colors[on_roof] = roof_color(x[on_roof], y[on_roof])
    on_facade = (z > 1e-6) & (z < BUILDING_HEIGHT - 1e-6)
    colors[on_facade] = FACADE_RGB
    return colors


def _nadir_pose(image_id: int, center_xy: tuple[float, float], name: str) -> FramePose:
    # 180-degree rotation about x: camera x = world x, y and z flipped, looking down.
    qvec = np.array([0.0, 1.0, 0.0, 0.0])
    cx, cy = center_xy
    tvec = np.array([-cx, cy, CAMERA_HEIGHT])
    return FramePose(
        image_id=image_id,
        qvec=qvec,
        tvec=tvec,
        camera_id=1,
        name=name,
        xys=np.zeros((0, 2)),
        point3d_ids=np.zeros(0, dtype=np.int64),
    )


def _ray_trace(center: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Analytic nearest-hit colors for rays from `center` along `dirs` (n, 3)."""
    x0, x1, y0, y1 = BUILDING_XY
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (0.0 - center[2]) / dirs[:, 2]
        lo = np.array([x0, y0, 0.0])
        hi = np.array([x1, y1, BUILDING_HEIGHT])
        t_lo = (lo - center) / dirs
        t_hi = (hi - center) / dirs
    t_near = np.minimum(t_lo, t_hi)
    t_far = np.maximum(t_lo, t_hi)
    t_enter = t_near.max(axis=1)
    t_exit = t_far.min(axis=1)
    box_hit = (t_enter <= t_exit) & (t_enter > 1e-9)
    enter_axis = t_near.argmax(axis=1)

    ground_pts = center[None, :] + t_ground[:, None] * dirs
    colors = ground_color(ground_pts[:, 0], ground_pts[:, 1])

    use_box = box_hit & (t_enter < t_ground)
    if np.any(use_box):
        hit_pts = center[None, :] + t_enter[use_box, None] * dirs[use_box]
        box_colors = np.where(
            (enter_axis[use_box] == 2)[:, None],
            roof_color(hit_pts[:, 0], hit_pts[:, 1]),
            FACADE_RGB[None, :],
        )
        colors[use_box] = box_colors
    return colors


def render_view(pose: FramePose, intr: CameraIntrinsics) -> np.ndarray:
    """Ray-cast one camera's image, (H, W, 3)."""
    rot = quat_to_rotmat(pose.qvec)
    center = -rot.T @ pose.tvec
    us = np.arange(intr.width) + 0.5
    vs = np.arange(intr.height) + 0.5
    gu, gv = np.meshgrid(us, vs)
    dirs_cam = np.stack(
        [(gu - intr.cx) / intr.fx, (gv - intr.cy) / intr.fy, np.ones_like(gu)], axis=-1
    ).reshape(-1, 3)
    dirs_world = dirs_cam @ rot
    colors = _ray_trace(center, dirs_world)
    return colors.reshape(intr.height, intr.width, 3)


def _segment_occluded(camera: np.ndarray, points: np.ndarray) -> np.ndarray:
    """True where the open segment camera->point crosses the building box."""
    x0, x1, y0, y1 = BUILDING_XY
    d = points - camera[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.array([x0, y0, 0.0])
        hi = np.array([x1, y1, BUILDING_HEIGHT])
        t_lo = (lo - camera[None, :]) / d
        t_hi = (hi - camera[None, :]) / d
    t_near = np.minimum(t_lo, t_hi)
    t_far = np.maximum(t_lo, t_hi)
    t_enter = t_near.max(axis=1)
    t_exit = t_far.min(axis=1)
    return (t_enter <= t_exit) & (t_exit > 1e-9) & (t_enter < 1.0 - 1e-6)


def _sample_points(rng: np.random.Generator) -> np.ndarray:
    x0, x1, y0, y1 = BUILDING_XY
    points = []
    # ground grid, excluding the area under the building
    n = 26
    axis = np.linspace(0.25, GROUND_SIZE - 0.25, n)
    gx, gy = np.meshgrid(axis, axis)
    ground = np.stack([gx.ravel(), gy.ravel(), np.zeros(n * n)], axis=-1)
    ground[:, :2] += rng.uniform(-0.06, 0.06, size=(n * n, 2))
    under = (
        (ground[:, 0] > x0)
        & (ground[:, 0] < x1)
        & (ground[:, 1] > y0)
        & (ground[:, 1] < y1)
    )
    points.append(ground[~under])
    # roof grid
    m = 7
    rx, ry = np.meshgrid(np.linspace(x0 + 0.15, x1 - 0.15, m), np.linspace(y0 + 0.15, y1 - 0.15, m))
    roof = np.stack([rx.ravel(), ry.ravel(), np.full(m * m, BUILDING_HEIGHT)], axis=-1)
    roof[:, :2] += rng.uniform(-0.04, 0.04, size=(m * m, 2))
    points.append(roof)
    # a few points per facade, mid-height band
    along = np.linspace(x0 + 0.25, x1 - 0.25, 5)
    heights = np.array([0.5, 1.1])
    for z in heights:
        points.append(np.stack([along, np.full(5, y0), np.full(5, z)], axis=-1))
        points.append(np.stack([along, np.full(5, y1), np.full(5, z)], axis=-1))
        points.append(np.stack([np.full(5, x0), along, np.full(5, z)], axis=-1))
        points.append(np.stack([np.full(5, x1), along, np.full(5, z)], axis=-1))
    return np.vstack(points)


@dataclass(frozen=True)
class DeskScene:
    scene_dir: Path
    images_dir: Path
    image_names: tuple[str, ...]


def make_desk_scene(out_dir: str | os.PathLike, seed: int = 0) -> DeskScene:
    """Generate and export the desk scene; returns the on-disk layout."""
    out_dir = Path(out_dir)
    scene_dir = out_dir / "sparse"
    images_dir = out_dir / "images"
    scene_dir.mkdir(parents=True, exist_ok=True)
    images_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    intr = CameraIntrinsics(
        camera_id=1,
        width=IMAGE_SIZE,
        height=IMAGE_SIZE,
        fx=FOCAL,
        fy=FOCAL,
        cx=IMAGE_SIZE / 2.0,
        cy=IMAGE_SIZE / 2.0,
    )
    grid = (2.5, 5.0, 7.5)
    poses: list[FramePose] = []
    image_id = 1
    for gy in grid:
        for gx in grid:
            poses.append(_nadir_pose(image_id, (gx, gy), f"view_{image_id:02d}.png"))
            image_id += 1

    positions = _sample_points(rng)
    colors = _surface_color(positions)

    observations: dict[int, list[tuple[float, float, int]]] = {p.image_id: [] for p in poses}
    tracks: list[list[int]] = [[] for _ in range(positions.shape[0])]
    for pose in poses:
        rot = quat_to_rotmat(pose.qvec)
        camera = -rot.T @ pose.tvec
        cam_pts = positions @ rot.T + pose.tvec
        z = cam_pts[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = intr.fx * cam_pts[:, 0] / z + intr.cx
            v = intr.fy * cam_pts[:, 1] / z + intr.cy
        in_view = (z > 1e-6) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        occluded = _segment_occluded(camera, positions)
        visible = in_view & ~occluded
        for idx in np.nonzero(visible)[0]:
            point_id = int(idx) + 1
            observations[pose.image_id].append((float(u[idx]), float(v[idx]), point_id))
            tracks[idx].append(pose.image_id)

    points: dict[int, SparsePoint] = {}
    for idx in range(positions.shape[0]):
        if not tracks[idx]:
            continue
        point_id = idx + 1
        points[point_id] = SparsePoint(
            point3d_id=point_id,
            position=positions[idx],
            color=np.clip(colors[idx], 0.0, 1.0),
            track=tuple(tracks[idx]),
        )

    final_poses = []
    for pose in poses:
        obs = observations[pose.image_id]
        xys = np.array([(u, v) for u, v, _ in obs], dtype=np.float64).reshape(-1, 2)
        pids = np.array([pid for _, _, pid in obs], dtype=np.int64)
        final_poses.append(
            FramePose(pose.image_id, pose.qvec, pose.tvec, pose.camera_id, pose.name, xys, pids)
        )
        image = render_view(pose, intr)
        save_png(images_dir / pose.name, image)

    (scene_dir / "cameras.txt").write_text(write_cameras({1: intr}))
    (scene_dir / "images.txt").write_text(write_images(final_poses))
    (scene_dir / "points3D.txt").write_text(write_points3d(points))
    return DeskScene(
        scene_dir=scene_dir,
        images_dir=images_dir,
        image_names=tuple(p.name for p in final_poses),
    )


def main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Generate the synthetic desk scene")
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    scene = make_desk_scene(args.out_dir, args.seed)
    print(f"scene: {scene.scene_dir}")
    print(f"images: {scene.images_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
