"""Parse a sparse photogrammetric reconstruction and replay it as an ordered frame stream.

The on-disk format is the plain-text export convention: ``cameras.txt``,
``images.txt`` (two lines per image), ``points3D.txt``. Replay reveals the
reconstruction one image at a time, so downstream consumers see the sparse
cloud grow exactly as it would during online acquisition.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .image_files import load_image

log = logging.getLogger(__name__)

SUPPORTED_CAMERA_MODELS = ("PINHOLE", "SIMPLE_PINHOLE")


class SceneParseError(ValueError):
    """A reconstruction text file could not be parsed."""


class UnsupportedCameraModelError(SceneParseError):
    """The camera model is not one this engine handles."""


class StreamError(RuntimeError):
    """Replay could not produce the next frame."""


@dataclass(frozen=True)
class CameraIntrinsics:
    camera_id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise SceneParseError(f"camera {self.camera_id}: non-positive image size")
        if self.fx <= 0 or self.fy <= 0:
            raise SceneParseError(f"camera {self.camera_id}: non-positive focal length")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise SceneParseError(f"camera {self.camera_id}: principal point outside image")


@dataclass(frozen=True)
class FramePose:
    """World-to-camera pose plus 2D observations for one image."""

    image_id: int
    qvec: np.ndarray  # unit quaternion (w, x, y, z)
    tvec: np.ndarray  # translation, world-to-camera
    camera_id: int
    name: str
    xys: np.ndarray  # (n, 2) observation pixels
    point3d_ids: np.ndarray  # (n,) int64, -1 where the observation has no point

    @property
    def observations(self) -> list[tuple[float, float, int | None]]:
        return [
            (float(u), float(v), None if pid < 0 else int(pid))
            for (u, v), pid in zip(self.xys, self.point3d_ids)
        ]


@dataclass(frozen=True)
class SparsePoint:
    point3d_id: int
    position: np.ndarray  # (3,)
    color: np.ndarray  # (3,) RGB in [0, 1]
    track: tuple[int, ...]  # image ids observing this point, deduplicated


@dataclass(frozen=True)
class FrameEvent:
    """One step of the simulated online stream."""

    frame_index: int
    pose: FramePose
    intrinsics: CameraIntrinsics
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    cloud_snapshot: tuple[SparsePoint, ...]  # sorted by point3d_id, monotone across events


def _content_lines(text: str) -> list[tuple[int, str]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        out.append((lineno, line))
    return out


def parse_cameras(text: str) -> dict[int, CameraIntrinsics]:
    """Parse cameras.txt content. SIMPLE_PINHOLE's single focal is widened to fx=fy."""
    cameras: dict[int, CameraIntrinsics] = {}
    for lineno, line in _content_lines(text):
        parts = line.split()
        if len(parts) < 4:
            raise SceneParseError(f"cameras line {lineno}: expected at least 4 fields")
        try:
            camera_id = int(parts[0])
            model = parts[1]
            width = int(parts[2])
            height = int(parts[3])
            params = [float(p) for p in parts[4:]]
        except ValueError as exc:
            raise SceneParseError(f"cameras line {lineno}: {exc}") from exc
        if model == "PINHOLE":
            if len(params) != 4:
                raise SceneParseError(f"cameras line {lineno}: PINHOLE needs 4 params")
            fx, fy, cx, cy = params
        elif model == "SIMPLE_PINHOLE":
            if len(params) != 3:
                raise SceneParseError(f"cameras line {lineno}: SIMPLE_PINHOLE needs 3 params")
            f, cx, cy = params
            fx = fy = f
        else:
            raise UnsupportedCameraModelError(
                f"cameras line {lineno}: unsupported camera model {model!r}"
            )
        intr = CameraIntrinsics(camera_id, width, height, fx, fy, cx, cy)
        intr.validate()
        cameras[camera_id] = intr
    return cameras


def parse_images(text: str) -> list[FramePose]:
    """Parse images.txt content: pose line followed by an observations line per image.

    Observation triples with point id -1 keep -1 in `point3d_ids` (exposed as
    None through `FramePose.observations`). Quaternions are normalized; a norm
    below 1e-6 is a parse error.
    """
    poses: list[FramePose] = []
    pending: tuple[int, list[str]] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if pending is None:
            if not line:
                continue
            parts = line.split(maxsplit=9)
            if len(parts) != 10:
                raise SceneParseError(f"images line {lineno}: expected 10 pose fields")
            pending = (lineno, parts)
            continue
        pose_lineno, parts = pending
        pending = None
        try:
            image_id = int(parts[0])
            qvec = np.array([float(x) for x in parts[1:5]], dtype=np.float64)
            tvec = np.array([float(x) for x in parts[5:8]], dtype=np.float64)
            camera_id = int(parts[8])
        except ValueError as exc:
            raise SceneParseError(f"images line {pose_lineno}: {exc}") from exc
        name = parts[9]
        norm = float(np.linalg.norm(qvec))
        if norm < 1e-6:
            raise SceneParseError(f"images line {pose_lineno}: quaternion norm {norm:g} too small")
        qvec = qvec / norm
        obs = line.split()
        if len(obs) % 3 != 0:
            raise SceneParseError(f"images line {lineno}: observation count not a multiple of 3")
        try:
            xys = np.array(
                [[float(obs[k]), float(obs[k + 1])] for k in range(0, len(obs), 3)],
                dtype=np.float64,
            ).reshape(-1, 2)
            pids = np.array([int(float(obs[k + 2])) for k in range(0, len(obs), 3)], dtype=np.int64)
        except ValueError as exc:
            raise SceneParseError(f"images line {lineno}: {exc}") from exc
        poses.append(FramePose(image_id, qvec, tvec, camera_id, name, xys, pids))
    if pending is not None:
        raise SceneParseError(
            f"images line {pending[0]}: pose line without a following observations line"
        )
    return poses


def parse_points3d(text: str) -> dict[int, SparsePoint]:
    """Parse points3D.txt content.

    Byte colors are rescaled to [0, 1]; tracks are deduplicated by image id.
    Points with an empty track are skipped (counted in a single warning).
    """
    points: dict[int, SparsePoint] = {}
    skipped = 0
    for lineno, line in _content_lines(text):
        parts = line.split()
        if len(parts) < 8:
            raise SceneParseError(f"points3D line {lineno}: expected at least 8 fields")
        try:
            point_id = int(parts[0])
            position = np.array([float(p) for p in parts[1:4]], dtype=np.float64)
            rgb = [int(p) for p in parts[4:7]]
            float(parts[7])  # reprojection error, unused
        except ValueError as exc:
            raise SceneParseError(f"points3D line {lineno}: {exc}") from exc
        if any(c < 0 or c > 255 for c in rgb):
            raise SceneParseError(f"points3D line {lineno}: color byte out of range")
        rest = parts[8:]
        if len(rest) % 2 != 0:
            raise SceneParseError(f"points3D line {lineno}: odd track length")
        track: list[int] = []
        seen: set[int] = set()
        try:
            for k in range(0, len(rest), 2):
                image_id = int(rest[k])
                if image_id not in seen:
                    seen.add(image_id)
                    track.append(image_id)
        except ValueError as exc:
            raise SceneParseError(f"points3D line {lineno}: {exc}") from exc
        if not track:
            skipped += 1
            continue
        color = np.array(rgb, dtype=np.float64) / 255.0
        points[point_id] = SparsePoint(point_id, position, color, tuple(track))
    if skipped:
        log.warning("points3D: skipped %d points with empty tracks", skipped)
    return points


def _fmt(x: float) -> str:
    return repr(float(x))


def write_cameras(cameras: dict[int, CameraIntrinsics]) -> str:
    lines = ["# CAMERA_ID MODEL WIDTH HEIGHT PARAMS..."]
    for cam in sorted(cameras.values(), key=lambda c: c.camera_id):
        lines.append(
            f"{cam.camera_id} PINHOLE {cam.width} {cam.height} "
            f"{_fmt(cam.fx)} {_fmt(cam.fy)} {_fmt(cam.cx)} {_fmt(cam.cy)}"
        )
    return "\n".join(lines) + "\n"


def write_images(poses: Sequence[FramePose]) -> str:
    lines = ["# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME", "# X Y POINT3D_ID ..."]
    for pose in poses:
        q = " ".join(_fmt(v) for v in pose.qvec)
        t = " ".join(_fmt(v) for v in pose.tvec)
        lines.append(f"{pose.image_id} {q} {t} {pose.camera_id} {pose.name}")
        obs = " ".join(
            f"{_fmt(u)} {_fmt(v)} {int(pid)}" for (u, v), pid in zip(pose.xys, pose.point3d_ids)
        )
        lines.append(obs)
    return "\n".join(lines) + "\n"


def write_points3d(points: dict[int, SparsePoint]) -> str:
    lines = ["# POINT3D_ID X Y Z R G B ERROR (IMAGE_ID POINT2D_IDX)..."]
    for pt in sorted(points.values(), key=lambda p: p.point3d_id):
        rgb = " ".join(str(int(round(c * 255.0))) for c in pt.color)
        pos = " ".join(_fmt(v) for v in pt.position)
        track = " ".join(f"{img} 0" for img in pt.track)
        lines.append(f"{pt.point3d_id} {pos} {rgb} 0.0 {track}")
    return "\n".join(lines) + "\n"


@dataclass
class SparseScene:
    """A fully parsed reconstruction, prior to replay."""

    cameras: dict[int, CameraIntrinsics]
    poses: list[FramePose]
    points: dict[int, SparsePoint]

    def __post_init__(self) -> None:
        for pose in self.poses:
            if pose.camera_id not in self.cameras:
                raise SceneParseError(
                    f"image {pose.image_id}: unknown camera id {pose.camera_id}"
                )
            valid = pose.point3d_ids[pose.point3d_ids >= 0]
            for pid in valid:
                if int(pid) not in self.points:
                    raise SceneParseError(
                        f"image {pose.image_id}: observation references missing point {pid}"
                    )


def load_scene(scene_dir: str | os.PathLike) -> SparseScene:
    scene_dir = Path(scene_dir)
    cameras = parse_cameras((scene_dir / "cameras.txt").read_text())
    poses = parse_images((scene_dir / "images.txt").read_text())
    points = parse_points3d((scene_dir / "points3D.txt").read_text())
    return SparseScene(cameras, poses, points)


def read_order_manifest(path: str | os.PathLike) -> list[str]:
    """One image name per line; blank lines and # comments ignored."""
    names = []
    for _, line in _content_lines(Path(path).read_text()):
        names.append(line)
    return names


class ReplayStream(Iterator[FrameEvent]):
    """Replays a parsed scene as FrameEvents, revealing the cloud incrementally.

    Replay order is ascending image id unless `order` (a list of image names)
    overrides it; names absent from the manifest are not replayed. A point
    enters the snapshot as soon as any image in its track has been revealed.
    """

    def __init__(
        self,
        scene: SparseScene,
        images_dir: str | os.PathLike,
        order: Sequence[str] | None = None,
    ):
        self.scene = scene
        self.images_dir = Path(images_dir)
        if order is None:
            self._queue = sorted(scene.poses, key=lambda p: p.image_id)
        else:
            by_name = {p.name: p for p in scene.poses}
            queue = []
            for name in order:
                if name not in by_name:
                    raise StreamError(f"order manifest names unknown image {name!r}")
                queue.append(by_name[name])
            self._queue = queue
        self._cursor = 0
        self._revealed_points: set[int] = set()
        self._image_to_points: dict[int, list[int]] = {}
        for pt in scene.points.values():
            for image_id in pt.track:
                self._image_to_points.setdefault(image_id, []).append(pt.point3d_id)

    def __iter__(self) -> "ReplayStream":
        return self

    def __len__(self) -> int:
        return len(self._queue)

    def __next__(self) -> FrameEvent:
        if self._cursor >= len(self._queue):
            raise StopIteration
        pose = self._queue[self._cursor]
        frame_index = self._cursor
        self._cursor += 1
        intr = self.scene.cameras[pose.camera_id]
        path = self.images_dir / pose.name
        if not path.exists():
            raise StreamError(f"image file missing: {path}")
        try:
            image = load_image(path)
        except Exception as exc:
            raise StreamError(f"image file undecodable: {path}: {exc}") from exc
        if image.shape[0] != intr.height or image.shape[1] != intr.width:
            raise StreamError(
                f"image {path} is {image.shape[1]}x{image.shape[0]}, "
                f"camera expects {intr.width}x{intr.height}"
            )
        self._revealed_points.update(self._image_to_points.get(pose.image_id, ()))
        snapshot = tuple(
            self.scene.points[pid] for pid in sorted(self._revealed_points)
        )
        return FrameEvent(frame_index, pose, intr, image, snapshot)
