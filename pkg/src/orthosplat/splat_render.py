"""Deterministic tile-based splatting with perspective and orthographic projection.

The perspective path feeds training (render + analytic backward to every
Gaussian parameter); the orthographic path renders the TDOM by replacing the
projection of means and covariances with a parallel projection whose Jacobian
has a zero third row, so variance along the vertical axis never reaches the
image: facades collapse and the highest surface wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from ._kernels import bin_splats, composite_backward, composite_forward
from .gaussian_field import GaussianField, sigmoid
from .geometry import quat_to_rotmat
from .scene_stream import CameraIntrinsics, FramePose

UP_AXIS_PERMUTATIONS = {"x": (1, 2, 0), "y": (0, 2, 1), "z": (0, 1, 2)}


@dataclass(frozen=True)
class RasterSettings:
    tile: int = 16
    dilation: float = 0.3  # px^2 added to both 2D variances
    alpha_min: float = 1.0 / 255.0
    alpha_max: float = 0.99
    t_eps: float = 1e-4  # transmittance early-out
    q_max: float = 9.0  # 3-sigma kernel truncation
    near: float = 0.01  # perspective near clip, camera z


@dataclass(frozen=True)
class OrthoViewBox:
    """World-space extents of the orthographic view volume."""

    l: float
    r: float
    b: float
    t: float
    z_n: float
    z_f: float
    up_axis: str = "z"

    def __post_init__(self) -> None:
        if not (self.r > self.l and self.t > self.b and self.z_f > self.z_n):
            raise ValueError(f"degenerate view box {self}")
        if self.up_axis not in UP_AXIS_PERMUTATIONS:
            raise ValueError(f"unknown up axis {self.up_axis!r}")


@dataclass
class Splats2D:
    """Projected splats for one raster, as parallel arrays."""

    centers: np.ndarray  # (n, 2) pixel coords
    cov: np.ndarray  # (n, 3) packed symmetric 2x2 (c00, c01, c11), px^2, dilated
    depth_key: np.ndarray  # (n,) composite order key, ascending = front first
    opacity: np.ndarray  # (n,)
    color: np.ndarray  # (n, 3)
    source_index: np.ndarray  # (n,) originating Gaussian indices

    def __len__(self) -> int:
        return int(self.centers.shape[0])


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W) accumulated opacity
    contributors: np.ndarray  # (H, W) int32 splat count per pixel


@dataclass
class RenderContext:
    """Everything the backward pass needs from a forward render."""

    splats: Splats2D
    width: int
    height: int
    settings: RasterSettings
    offsets: np.ndarray
    ids: np.ndarray
    inv_cov: np.ndarray  # (n, 3) packed inverse 2D covariances
    out_color: np.ndarray
    out_t: np.ndarray
    perspective: "PerspectiveChain | None" = None


@dataclass
class PerspectiveChain:
    """Intermediates of the perspective projection, kept for the backward chain."""

    field_size: int
    kept: np.ndarray  # kept Gaussian indices
    rot_pose: np.ndarray  # (3, 3)
    intr: CameraIntrinsics
    t_cam: np.ndarray  # (n, 3) camera-space means
    jac: np.ndarray  # (n, 2, 3) pinhole Jacobians
    amat: np.ndarray  # (n, 2, 3) full linearization J @ R
    cov3d: np.ndarray  # (n, 3, 3)
    mmat: np.ndarray  # (n, 3, 3) R_q diag(s)
    rot_g: np.ndarray  # (n, 3, 3) Gaussian rotations
    scales: np.ndarray  # (n, 3)
    quats_raw: np.ndarray  # (n, 4) as stored
    opacity: np.ndarray  # (n,) post-sigmoid


def ortho_matrix(box: OrthoViewBox) -> np.ndarray:
    """4x4 matrix mapping the view box to the clip cube [-1, 1]^3."""
    rl = box.r - box.l
    tb = box.t - box.b
    fn = box.z_f - box.z_n
    return np.array(
        [
            [2.0 / rl, 0.0, 0.0, -(box.r + box.l) / rl],
            [0.0, 2.0 / tb, 0.0, -(box.t + box.b) / tb],
            [0.0, 0.0, 2.0 / fn, -(box.z_f + box.z_n) / fn],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def ortho_cov(
    cov3d: np.ndarray, box: OrthoViewBox, width: int, height: int, dilation: float = 0.3
) -> np.ndarray:
    """Project 3D covariance(s) to pixel-space 2D covariance(s), (n, 2, 2).

    The projection Jacobian's third row is zero, so the result depends only on
    the ground-plane block of the covariance: vertical variance is flattened
    away entirely. Clip units are rescaled to pixels per raster axis; the row
    axis carries a negative sign because rows grow downward while the box's
    vertical world axis grows upward.
    """
    cov3d = np.asarray(cov3d, dtype=np.float64)
    single = cov3d.ndim == 2
    cov3d = cov3d.reshape(-1, 3, 3)
    sx = width / (box.r - box.l)
    sy = -height / (box.t - box.b)
    out = np.empty((cov3d.shape[0], 2, 2), dtype=np.float64)
    out[:, 0, 0] = sx * sx * cov3d[:, 0, 0] + dilation
    out[:, 0, 1] = sx * sy * cov3d[:, 0, 1]
    out[:, 1, 0] = out[:, 0, 1]
    out[:, 1, 1] = sy * sy * cov3d[:, 1, 1] + dilation
    return out[0] if single else out


def _pack_cov(cov: np.ndarray) -> np.ndarray:
    packed = np.empty((cov.shape[0], 3), dtype=np.float64)
    packed[:, 0] = cov[:, 0, 0]
    packed[:, 1] = cov[:, 0, 1]
    packed[:, 2] = cov[:, 1, 1]
    return packed


def _invert_packed(packed: np.ndarray) -> np.ndarray:
    det = packed[:, 0] * packed[:, 2] - packed[:, 1] ** 2
    inv = np.empty_like(packed)
    inv[:, 0] = packed[:, 2] / det
    inv[:, 1] = -packed[:, 1] / det
    inv[:, 2] = packed[:, 0] / det
    return inv


def project_splats_perspective(
    field: GaussianField,
    pose: FramePose,
    intr: CameraIntrinsics,
    settings: RasterSettings = RasterSettings(),
) -> tuple[Splats2D, PerspectiveChain]:
    """EWA-style perspective projection of the field for one camera."""
    rot_pose = quat_to_rotmat(pose.qvec)
    t_cam_all = field.means @ rot_pose.T + pose.tvec
    kept = np.nonzero(t_cam_all[:, 2] > settings.near)[0]
    t_cam = t_cam_all[kept]
    n = kept.shape[0]
    x, y, z = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    centers = np.empty((n, 2), dtype=np.float64)
    centers[:, 0] = intr.fx * x / z + intr.cx
    centers[:, 1] = intr.fy * y / z + intr.cy
    jac = np.zeros((n, 2, 3), dtype=np.float64)
    jac[:, 0, 0] = intr.fx / z
    jac[:, 0, 2] = -intr.fx * x / (z * z)
    jac[:, 1, 1] = intr.fy / z
    jac[:, 1, 2] = -intr.fy * y / (z * z)
    amat = jac @ rot_pose
    quats_raw = field.rotations[kept]
    rot_g = quat_to_rotmat(quats_raw)
    scales = np.exp(field.log_scales[kept])
    mmat = rot_g * scales[:, None, :]
    cov3d = mmat @ mmat.transpose(0, 2, 1)
    cov2d = amat @ cov3d @ amat.transpose(0, 2, 1)
    cov2d[:, 0, 0] += settings.dilation
    cov2d[:, 1, 1] += settings.dilation
    opacity = sigmoid(field.opacity_logits[kept])
    splats = Splats2D(
        centers=centers,
        cov=_pack_cov(cov2d),
        depth_key=z.copy(),
        opacity=opacity,
        color=field.colors[kept].copy(),
        source_index=kept,
    )
    chain = PerspectiveChain(
        field_size=len(field),
        kept=kept,
        rot_pose=rot_pose,
        intr=intr,
        t_cam=t_cam,
        jac=jac,
        amat=amat,
        cov3d=cov3d,
        mmat=mmat,
        rot_g=rot_g,
        scales=scales,
        quats_raw=quats_raw,
        opacity=opacity,
    )
    return splats, chain


def project_splats_ortho(
    field: GaussianField,
    box: OrthoViewBox,
    width: int,
    height: int,
    settings: RasterSettings = RasterSettings(),
) -> Splats2D:
    """Orthographic projection of the field onto a width x height raster.

    Pixel u grows with the first ground axis, pixel v grows downward from the
    box top. depth_key is the negated height so higher scene points composite
    first; means outside the [z_n, z_f] slab are dropped.
    """
    perm = UP_AXIS_PERMUTATIONS[box.up_axis]
    means = field.means[:, perm]
    heights = means[:, 2]
    kept = np.nonzero((heights >= box.z_n) & (heights <= box.z_f))[0]
    means = means[kept]
    n = kept.shape[0]
    centers = np.empty((n, 2), dtype=np.float64)
    centers[:, 0] = width * (means[:, 0] - box.l) / (box.r - box.l)
    centers[:, 1] = height * (box.t - means[:, 1]) / (box.t - box.b)
    cov3d = _field_cov(field, kept)
    cov3d = cov3d[:, perm][:, :, perm]
    cov2d = ortho_cov(cov3d, box, width, height, settings.dilation)
    splats = Splats2D(
        centers=centers,
        cov=_pack_cov(cov2d.reshape(-1, 2, 2)),
        depth_key=-means[:, 2],
        opacity=sigmoid(field.opacity_logits[kept]),
        color=field.colors[kept].copy(),
        source_index=kept,
    )
    return splats


def _field_cov(field: GaussianField, kept: np.ndarray) -> np.ndarray:
    rot = quat_to_rotmat(field.rotations[kept])
    m = rot * np.exp(field.log_scales[kept])[:, None, :]
    return m @ m.transpose(0, 2, 1)


def composite(
    splats: Splats2D,
    width: int,
    height: int,
    background: np.ndarray,
    settings: RasterSettings = RasterSettings(),
) -> tuple[RenderOutput, RenderContext]:
    """Depth-sort, tile-bin, and alpha-composite projected splats."""
    background = np.asarray(background, dtype=np.float64).reshape(3)
    order = np.lexsort((splats.source_index, splats.depth_key))
    radii = np.empty((len(splats), 2), dtype=np.float64)
    sigma_scale = np.sqrt(settings.q_max)
    radii[:, 0] = sigma_scale * np.sqrt(splats.cov[:, 0]) + 0.5
    radii[:, 1] = sigma_scale * np.sqrt(splats.cov[:, 2]) + 0.5
    offsets, ids = bin_splats(
        np.ascontiguousarray(splats.centers), radii, order, width, height, settings.tile
    )
    inv_cov = _invert_packed(splats.cov)
    color, out_t, contrib = composite_forward(
        offsets,
        ids,
        np.ascontiguousarray(splats.centers),
        np.ascontiguousarray(inv_cov[:, 0]),
        np.ascontiguousarray(inv_cov[:, 1]),
        np.ascontiguousarray(inv_cov[:, 2]),
        np.ascontiguousarray(splats.opacity),
        np.ascontiguousarray(splats.color),
        width,
        height,
        settings.tile,
        background,
        settings.alpha_min,
        settings.alpha_max,
        settings.t_eps,
        settings.q_max,
    )
    output = RenderOutput(color=color, alpha=1.0 - out_t, contributors=contrib)
    ctx = RenderContext(
        splats=splats,
        width=width,
        height=height,
        settings=settings,
        offsets=offsets,
        ids=ids,
        inv_cov=inv_cov,
        out_color=color,
        out_t=out_t,
    )
    return output, ctx


def render_perspective(
    field: GaussianField,
    pose: FramePose,
    intr: CameraIntrinsics,
    background: np.ndarray | None = None,
    settings: RasterSettings = RasterSettings(),
) -> tuple[RenderOutput, RenderContext]:
    """Project the field through a camera and composite; context enables backward."""
    if background is None:
        background = np.zeros(3)
    splats, chain = project_splats_perspective(field, pose, intr, settings)
    output, ctx = composite(splats, intr.width, intr.height, background, settings)
    ctx.perspective = chain
    return output, ctx


def splat_gradients(ctx: RenderContext, grad_color: np.ndarray):
    """Backward through compositing only: gradients in splat space."""
    s = ctx.settings
    return composite_backward(
        ctx.offsets,
        ctx.ids,
        np.ascontiguousarray(ctx.splats.centers),
        np.ascontiguousarray(ctx.inv_cov[:, 0]),
        np.ascontiguousarray(ctx.inv_cov[:, 1]),
        np.ascontiguousarray(ctx.inv_cov[:, 2]),
        np.ascontiguousarray(ctx.splats.opacity),
        np.ascontiguousarray(ctx.splats.color),
        ctx.out_color,
        np.ascontiguousarray(grad_color),
        ctx.width,
        ctx.height,
        s.tile,
        s.alpha_min,
        s.alpha_max,
        s.t_eps,
        s.q_max,
    )


def backward(ctx: RenderContext, grad_color: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic gradients of a perspective render w.r.t. all field parameters.

    Returns arrays aligned with the full field: means (n, 3), log_scales
    (n, 3), rotations (n, 4), opacity_logits (n,), colors (n, 3). Gaussians
    dropped by clipping or skipped by the blend cutoffs get zero gradient.
    """
    chain = ctx.perspective
    if chain is None:
        raise ValueError("backward requires a context from render_perspective")
    d_center, d_cov, d_opac, d_color = splat_gradients(ctx, grad_color)

    n = chain.kept.shape[0]
    grads = {
        "means": np.zeros((chain.field_size, 3)),
        "log_scales": np.zeros((chain.field_size, 3)),
        "rotations": np.zeros((chain.field_size, 4)),
        "opacity_logits": np.zeros(chain.field_size),
        "colors": np.zeros((chain.field_size, 3)),
    }
    if n == 0:
        return grads

    gmat = np.empty((n, 2, 2), dtype=np.float64)
    gmat[:, 0, 0] = d_cov[:, 0]
    gmat[:, 0, 1] = d_cov[:, 1]
    gmat[:, 1, 0] = d_cov[:, 1]
    gmat[:, 1, 1] = d_cov[:, 2]

    amat = chain.amat
    d_sigma = amat.transpose(0, 2, 1) @ gmat @ amat  # (n, 3, 3), symmetric
    d_amat = 2.0 * (gmat @ amat @ chain.cov3d)
    d_jac = d_amat @ chain.rot_pose.T

    x, y, z = chain.t_cam[:, 0], chain.t_cam[:, 1], chain.t_cam[:, 2]
    fx, fy = chain.intr.fx, chain.intr.fy
    d_t = np.einsum("naj,na->nj", chain.jac, d_center)
    inv_z2 = 1.0 / (z * z)
    d_t[:, 0] += d_jac[:, 0, 2] * (-fx * inv_z2)
    d_t[:, 1] += d_jac[:, 1, 2] * (-fy * inv_z2)
    d_t[:, 2] += (
        d_jac[:, 0, 0] * (-fx * inv_z2)
        + d_jac[:, 0, 2] * (2.0 * fx * x * inv_z2 / z)
        + d_jac[:, 1, 1] * (-fy * inv_z2)
        + d_jac[:, 1, 2] * (2.0 * fy * y * inv_z2 / z)
    )
    d_mean = d_t @ chain.rot_pose

    d_mmat = 2.0 * (d_sigma @ chain.mmat)
    d_scales = np.einsum("nik,nik->nk", chain.rot_g, d_mmat)
    d_log_scales = d_scales * chain.scales
    d_rot = d_mmat * chain.scales[:, None, :]
    d_quat = _rotation_backward(chain.quats_raw, d_rot)

    d_logit = d_opac * chain.opacity * (1.0 - chain.opacity)

    grads["means"][chain.kept] = d_mean
    grads["log_scales"][chain.kept] = d_log_scales
    grads["rotations"][chain.kept] = d_quat
    grads["opacity_logits"][chain.kept] = d_logit
    grads["colors"][chain.kept] = d_color
    return grads


def _rotation_backward(quats_raw: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Chain d(loss)/d(rotation matrix) back to the stored (raw) quaternion.

    Differentiates through the normalization the forward applies, so finite
    differences on the raw components agree with these gradients.
    """
    norms = np.linalg.norm(quats_raw, axis=1, keepdims=True)
    q = quats_raw / norms
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = d_rot
    d_hat = np.empty_like(q)
    d_hat[:, 0] = 2.0 * (
        -r[:, 0, 1] * z + r[:, 0, 2] * y + r[:, 1, 0] * z - r[:, 1, 2] * x - r[:, 2, 0] * y + r[:, 2, 1] * x
    )
    d_hat[:, 1] = 2.0 * (
        r[:, 0, 1] * y
        + r[:, 0, 2] * z
        + r[:, 1, 0] * y
        - 2.0 * r[:, 1, 1] * x
        - r[:, 1, 2] * w
        + r[:, 2, 0] * z
        + r[:, 2, 1] * w
        - 2.0 * r[:, 2, 2] * x
    )
    d_hat[:, 2] = 2.0 * (
        -2.0 * r[:, 0, 0] * y
        + r[:, 0, 1] * x
        + r[:, 0, 2] * w
        + r[:, 1, 0] * x
        + r[:, 1, 2] * z
        - r[:, 2, 0] * w
        + r[:, 2, 1] * z
        - 2.0 * r[:, 2, 2] * y
    )
    d_hat[:, 3] = 2.0 * (
        -2.0 * r[:, 0, 0] * z
        - r[:, 0, 1] * w
        + r[:, 0, 2] * x
        + r[:, 1, 0] * w
        - 2.0 * r[:, 1, 1] * z
        + r[:, 1, 2] * y
        + r[:, 2, 0] * x
        + r[:, 2, 1] * y
    )
    dot = np.sum(q * d_hat, axis=1, keepdims=True)
    return (d_hat - q * dot) / norms
