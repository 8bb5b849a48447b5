"""The optimizable 3D Gaussian scene representation and its PLY checkpoints.

Each Gaussian carries a mean, per-axis log-scales, a unit quaternion, an
opacity logit, a plain RGB color, and the stream frame that created it.
Adaptive-moment optimizer state lives alongside the parameters, aligned by
index; integration only ever appends, so indices are stable between frames.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .discrepancy import SampledSeed
from .geometry import quat_to_rotmat
from .scene_stream import SparsePoint

INIT_OPACITY = 0.1
PARAM_NAMES = ("means", "log_scales", "rotations", "opacity_logits", "colors")

_PLY_PROPS = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity", "red", "green", "blue",
    "created_at",
)
_CHECKPOINT_TAG = "orthosplat_checkpoint 1"


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, truncated, or from a different version."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass
class GaussianField:
    means: np.ndarray  # (n, 3)
    log_scales: np.ndarray  # (n, 3)
    rotations: np.ndarray  # (n, 4) unit quaternions (w, x, y, z)
    opacity_logits: np.ndarray  # (n,)
    colors: np.ndarray  # (n, 3)
    created_at: np.ndarray  # (n,) int64 frame ordinals
    scene_extent: float = 1.0
    opt_m: dict = field(default_factory=dict)  # first moments, per parameter name
    opt_v: dict = field(default_factory=dict)  # second moments
    opt_steps: np.ndarray | None = None  # (n,) per-Gaussian step counts

    def __post_init__(self) -> None:
        for name in PARAM_NAMES:
            if name not in self.opt_m:
                self.opt_m[name] = np.zeros_like(getattr(self, name))
            if name not in self.opt_v:
                self.opt_v[name] = np.zeros_like(getattr(self, name))
        if self.opt_steps is None:
            self.opt_steps = np.zeros(len(self), dtype=np.int64)

    def __len__(self) -> int:
        return int(self.means.shape[0])

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def covariances(self) -> np.ndarray:
        """World-space covariances R S S^T R^T, (n, 3, 3); SPD by construction."""
        rot = quat_to_rotmat(self.rotations)
        m = rot * self.scales()[:, None, :]
        return m @ m.transpose(0, 2, 1)

    def normalize_rotations(self) -> None:
        norms = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        np.divide(self.rotations, norms, out=self.rotations, where=norms > 0)

    def append(
        self,
        means: np.ndarray,
        log_scales: np.ndarray,
        rotations: np.ndarray,
        opacity_logits: np.ndarray,
        colors: np.ndarray,
        created_at: np.ndarray,
    ) -> None:
        added = means.shape[0]
        self.means = np.vstack([self.means, means])
        self.log_scales = np.vstack([self.log_scales, log_scales])
        self.rotations = np.vstack([self.rotations, rotations])
        self.opacity_logits = np.concatenate([self.opacity_logits, opacity_logits])
        self.colors = np.vstack([self.colors, colors])
        self.created_at = np.concatenate([self.created_at, created_at])
        for name in PARAM_NAMES:
            fresh = np.zeros_like(getattr(self, name)[-added:])
            self.opt_m[name] = np.concatenate([self.opt_m[name], fresh])
            self.opt_v[name] = np.concatenate([self.opt_v[name], fresh])
        self.opt_steps = np.concatenate([self.opt_steps, np.zeros(added, dtype=np.int64)])

    def keep(self, mask: np.ndarray) -> int:
        """Retain Gaussians where mask is True; returns the number removed."""
        removed = int((~mask).sum())
        if removed == 0:
            return 0
        for name in PARAM_NAMES:
            setattr(self, name, getattr(self, name)[mask])
            self.opt_m[name] = self.opt_m[name][mask]
            self.opt_v[name] = self.opt_v[name][mask]
        self.created_at = self.created_at[mask]
        self.opt_steps = self.opt_steps[mask]
        return removed

    def prune_transparent(self, min_opacity: float = 0.005) -> int:
        return self.keep(self.opacities() >= min_opacity)


def _cloud_extent(positions: np.ndarray) -> float:
    if positions.shape[0] == 0:
        return 0.0
    span = positions.max(axis=0) - positions.min(axis=0)
    return float(np.linalg.norm(span))


def init_from_cloud(points: Sequence[SparsePoint]) -> GaussianField:
    """One isotropic Gaussian per sparse point.

    Scale comes from the mean distance to the 3 nearest neighbors (clamped to
    [1e-7, scene diameter]); rotation is identity; opacity starts at 0.1.
    """
    if len(points) == 0:
        raise ValueError("cannot initialize a Gaussian field from an empty cloud")
    positions = np.stack([pt.position for pt in points]).astype(np.float64)
    colors = np.stack([pt.color for pt in points]).astype(np.float64)
    n = positions.shape[0]
    extent = _cloud_extent(positions)
    if n == 1:
        mean_dist = np.array([1e-2 * max(extent, 1.0)])
    else:
        k = min(3, n - 1)
        dists, _ = cKDTree(positions).query(positions, k=k + 1)
        mean_dist = dists[:, 1:].mean(axis=1)
    mean_dist = np.clip(mean_dist, 1e-7, max(extent, 1e-7))
    log_scales = np.repeat(np.log(mean_dist)[:, None], 3, axis=1)
    rotations = np.zeros((n, 4), dtype=np.float64)
    rotations[:, 0] = 1.0
    opacity_logits = np.full(n, logit(INIT_OPACITY), dtype=np.float64)
    created_at = np.zeros(n, dtype=np.int64)
    return GaussianField(
        means=positions,
        log_scales=log_scales,
        rotations=rotations,
        opacity_logits=opacity_logits,
        colors=colors,
        created_at=created_at,
        scene_extent=max(extent, 1e-7),
    )


def integrate_seeds(field: GaussianField, seeds: Sequence[SampledSeed], frame: int) -> int:
    """Append one Gaussian per sampled seed; returns the count added.

    New Gaussians take the seed's lifted position/color, an isotropic scale
    from the seed's footprint, identity rotation, opacity 0.1, and zeroed
    optimizer state. Existing parameters are untouched.
    """
    n = len(seeds)
    if n == 0:
        return 0
    means = np.stack([s.position for s in seeds]).astype(np.float64)
    colors = np.stack([s.color for s in seeds]).astype(np.float64)
    footprints = np.array([s.footprint for s in seeds], dtype=np.float64)
    footprints = np.clip(footprints, 1e-7, max(field.scene_extent, 1e-7))
    log_scales = np.repeat(np.log(footprints)[:, None], 3, axis=1)
    rotations = np.zeros((n, 4), dtype=np.float64)
    rotations[:, 0] = 1.0
    opacity_logits = np.full(n, logit(INIT_OPACITY), dtype=np.float64)
    created_at = np.full(n, frame, dtype=np.int64)
    field.append(means, log_scales, rotations, opacity_logits, colors, created_at)
    return n


def save_checkpoint(field: GaussianField, path: str | os.PathLike) -> None:
    """Binary little-endian PLY with one double per parameter; atomic replace."""
    n = len(field)
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"comment {_CHECKPOINT_TAG}",
            f"element vertex {n}",
            *(f"property double {name}" for name in _PLY_PROPS),
            "end_header",
        ]
    )
    data = np.empty((n, len(_PLY_PROPS)), dtype="<f8")
    data[:, 0:3] = field.means
    data[:, 3:6] = field.log_scales
    data[:, 6:10] = field.rotations
    data[:, 10] = field.opacity_logits
    data[:, 11:14] = field.colors
    data[:, 14] = field.created_at.astype(np.float64)
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ply.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header.encode("ascii") + b"\n")
            fh.write(data.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> GaussianField:
    """Inverse of save_checkpoint; raises CheckpointError on any mismatch."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    marker = b"end_header\n"
    idx = blob.find(marker)
    if idx < 0:
        raise CheckpointError(f"{path}: PLY header not found")
    header_lines = blob[:idx].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0].strip() != "ply":
        raise CheckpointError(f"{path}: not a PLY file")
    if f"comment {_CHECKPOINT_TAG}" not in (ln.strip() for ln in header_lines):
        raise CheckpointError(f"{path}: missing or mismatched checkpoint version tag")
    count = None
    props = []
    for line in header_lines:
        line = line.strip()
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
        elif line.startswith("property double"):
            props.append(line.split()[-1])
    if count is None or tuple(props) != _PLY_PROPS:
        raise CheckpointError(f"{path}: unexpected PLY schema")
    body = blob[idx + len(marker) :]
    expected = count * len(_PLY_PROPS) * 8
    if len(body) < expected:
        raise CheckpointError(f"{path}: truncated payload ({len(body)} < {expected} bytes)")
    data = np.frombuffer(body[:expected], dtype="<f8").reshape(count, len(_PLY_PROPS)).copy()
    field = GaussianField(
        means=data[:, 0:3],
        log_scales=data[:, 3:6],
        rotations=data[:, 6:10],
        opacity_logits=data[:, 10].copy(),
        colors=data[:, 11:14],
        created_at=data[:, 14].astype(np.int64),
        scene_extent=max(_cloud_extent(data[:, 0:3]), 1e-7),
    )
    return field
