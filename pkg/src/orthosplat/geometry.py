"""Pinhole projection and visibility utilities shared by masking, sampling, and rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene_stream import CameraIntrinsics, FrameEvent, FramePose


@dataclass(frozen=True)
class ProjectedPoint:
    point3d_id: int
    u: float
    v: float
    depth: float  # camera-space z, always > 0 for visible points


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit-quaternion(s) (w, x, y, z) to rotation matrix/matrices.

    Accepts shape (4,) or (n, 4); normalizes before conversion so callers can
    pass raw optimizer state.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rot[0] if single else rot


def camera_space(positions: np.ndarray, pose: FramePose) -> np.ndarray:
    """World positions (n, 3) to camera space under the world-to-camera pose."""
    rot = quat_to_rotmat(pose.qvec)
    return np.atleast_2d(positions) @ rot.T + pose.tvec


def project(
    position: np.ndarray, pose: FramePose, intr: CameraIntrinsics, point3d_id: int = -1
) -> ProjectedPoint | None:
    """Pinhole-project one world point; None when it lies behind the camera."""
    cam = camera_space(np.asarray(position, dtype=np.float64), pose)[0]
    z = cam[2]
    if z <= 1e-9:
        return None
    u = intr.fx * cam[0] / z + intr.cx
    v = intr.fy * cam[1] / z + intr.cy
    return ProjectedPoint(point3d_id, float(u), float(v), float(z))


def visible_reprojections(event: FrameEvent) -> list[ProjectedPoint]:
    """Project the snapshot points tracked by this frame that land on the image.

    Keeps points whose track contains the frame's image id, whose camera depth
    is positive, and whose pixel falls in [0, width) x [0, height). Output is
    ordered by ascending point id.
    """
    image_id = event.pose.image_id
    intr = event.intrinsics
    tracked = [pt for pt in event.cloud_snapshot if image_id in pt.track]
    if not tracked:
        return []
    positions = np.stack([pt.position for pt in tracked])
    cam = camera_space(positions, event.pose)
    out: list[ProjectedPoint] = []
    for pt, (x, y, z) in zip(tracked, cam):
        if z <= 1e-9:
            continue
        u = intr.fx * x / z + intr.cx
        v = intr.fy * y / z + intr.cy
        if 0.0 <= u < intr.width and 0.0 <= v < intr.height:
            out.append(ProjectedPoint(pt.point3d_id, float(u), float(v), float(z)))
    return out
