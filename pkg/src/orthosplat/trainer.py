"""Online optimization: initial fit, per-frame updates, adaptive rates, view selection.

Each arriving frame is masked, compared against the current render, seeded
with new Gaussians where the gradient discrepancy is large, then optimized
for a fixed number of iterations over a local window of recent views plus a
randomly replayed older view. Per-Gaussian learning rates decay with age so
fresh content trains hard while settled regions stay stable.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .discrepancy import discrepancy_map, seeds_in_region
from .gaussian_field import PARAM_NAMES, GaussianField, integrate_seeds
from .geometry import visible_reprojections
from .key_region import KeyRegionMask, TriangleMesh2D, build_mesh, rasterize_mask
from .losses import SsimTargetCache, masked_loss, masked_psnr, ssim_target_cache
from .scene_stream import FrameEvent
from .splat_render import RasterSettings, backward, render_perspective


@dataclass
class TrainConfig:
    init_iters: int = 2000
    per_frame_iters: int = 200
    g_m: float = 0.1
    h_t: int = 16
    init_frames: int = 3
    lr_mean: float = 1.6e-4  # scaled by scene extent at use
    lr_log_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    ssim_weight: float = 0.2
    lr_decay_halflife: int = 8
    lr_floor: float = 0.05
    local_window: int = 5
    seed: int = 0
    seed_cap: int = 50_000
    prune: bool = True
    prune_every: int = 10
    prune_opacity: float = 0.005
    max_edge_fraction: float = 0.25
    log_kernel_size: int = 5
    log_sigma: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.init_iters < 0 or self.per_frame_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.h_t < 1 or self.local_window < 1 or self.init_frames < 1:
            raise ValueError("h_t, local_window, and init_frames must be >= 1")
        if self.lr_decay_halflife < 1:
            raise ValueError("halflife must be >= 1")
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise ValueError("ssim_weight must lie in [0, 1]")
        if self.g_m <= 0:
            raise ValueError("g_m must be positive")


@dataclass
class UpdateReport:
    frame: int
    seeds_added: int
    field_size: int
    iters: int
    adopt_seconds: float
    psnr_new_view: float
    psnr_pre_update: float  # diagnostics, not serialized

    def to_json_record(self) -> str:
        def _num(x: float):
            return None if (x != x) else x  # NaN -> null

        return json.dumps(
            {
                "frame": self.frame,
                "seeds_added": self.seeds_added,
                "field_size": self.field_size,
                "iters": self.iters,
                "adopt_seconds": self.adopt_seconds,
                "psnr_new_view": _num(self.psnr_new_view),
            }
        )


def lr_scale(created_at: np.ndarray, current_frame: int, cfg: TrainConfig) -> np.ndarray:
    """Per-Gaussian learning-rate multiplier: 2^(-age/halflife), floored."""
    age = np.maximum(current_frame - created_at, 0).astype(np.float64)
    return np.maximum(2.0 ** (-age / cfg.lr_decay_halflife), cfg.lr_floor)


def select_local_views(
    eligible: Sequence[int], window: int, rng: np.random.Generator
) -> list[int]:
    """One iteration's candidate views: the newest `window` plus a random older one.

    `eligible` is ordered oldest to newest; the newest view is always in the
    returned set. The random older draw is the anti-forgetting replay.
    """
    eligible = list(eligible)
    recents = eligible[-window:]
    earlier = eligible[:-window]
    pool = list(recents)
    if earlier:
        pool.append(earlier[int(rng.integers(len(earlier)))])
    return pool


def adam_step(
    field: GaussianField,
    grads: dict[str, np.ndarray],
    cfg: TrainConfig,
    multipliers: np.ndarray,
) -> None:
    """One adaptive-moment step on every parameter group; renormalizes rotations.

    Bias correction uses per-Gaussian step counts so Gaussians integrated
    mid-run warm up their moments exactly like the initial ones did.
    """
    field.opt_steps += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bias1 = 1.0 - b1 ** field.opt_steps.astype(np.float64)
    bias2 = 1.0 - b2 ** field.opt_steps.astype(np.float64)
    lrs = {
        "means": cfg.lr_mean * field.scene_extent,
        "log_scales": cfg.lr_log_scale,
        "rotations": cfg.lr_rotation,
        "opacity_logits": cfg.lr_opacity,
        "colors": cfg.lr_color,
    }
    for name in PARAM_NAMES:
        g = grads[name]
        m = field.opt_m[name]
        v = field.opt_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        param = getattr(field, name)
        if param.ndim == 2:
            mhat = m / bias1[:, None]
            vhat = v / bias2[:, None]
            step = (lrs[name] * multipliers)[:, None] * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        else:
            mhat = m / bias1
            vhat = v / bias2
            step = lrs[name] * multipliers * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        param -= step
    field.normalize_rotations()


@dataclass
class FrameRecord:
    event: FrameEvent
    mesh: TriangleMesh2D
    mask: KeyRegionMask
    ssim_cache: SsimTargetCache


class OnlineTrainer:
    """Drives the initial fit and the streaming per-frame updates."""

    def __init__(
        self,
        field: GaussianField,
        cfg: TrainConfig | None = None,
        raster: RasterSettings | None = None,
    ):
        self.field = field
        self.cfg = cfg or TrainConfig()
        self.raster = raster or RasterSettings()
        self.rng = np.random.default_rng(self.cfg.seed)
        self.frames: list[FrameRecord] = []
        self.updates_done = 0
        self._background = np.asarray(self.cfg.background, dtype=np.float64)

    def register_frame(self, event: FrameEvent) -> FrameRecord:
        """Build the frame's key-region mesh and mask; caches target statistics."""
        intr = event.intrinsics
        projections = visible_reprojections(event)
        points = {pt.point3d_id: pt for pt in event.cloud_snapshot}
        mesh = build_mesh(
            projections, points, intr.width, intr.height, self.cfg.max_edge_fraction
        )
        mask = rasterize_mask(mesh, intr.width, intr.height)
        record = FrameRecord(event, mesh, mask, ssim_target_cache(event.image))
        self.frames.append(record)
        return record

    def _eligible(self) -> list[int]:
        return [i for i, rec in enumerate(self.frames) if rec.mask.count > 0]

    def _render(self, record: FrameRecord):
        return render_perspective(
            self.field,
            record.event.pose,
            record.event.intrinsics,
            self._background,
            self.raster,
        )

    def _step_on(self, record: FrameRecord, multipliers: np.ndarray) -> float | None:
        output, ctx = self._render(record)
        result = masked_loss(
            output.color,
            record.event.image,
            record.mask.bits,
            self.cfg.ssim_weight,
            record.ssim_cache,
        )
        if result is None:
            return None
        loss, grad = result
        grads = backward(ctx, grad)
        adam_step(self.field, grads, self.cfg, multipliers)
        return loss

    def initial_fit(self) -> None:
        """Round-robin optimization over the first registered frames at base rates."""
        records = self.frames[: self.cfg.init_frames]
        if not records:
            return
        ones = np.ones(len(self.field))
        for it in range(self.cfg.init_iters):
            record = records[it % len(records)]
            if len(ones) != len(self.field):
                ones = np.ones(len(self.field))
            self._step_on(record, ones)

    def per_frame_update(self, event: FrameEvent) -> UpdateReport:
        """Mask, render, seed, integrate, and locally optimize one streamed frame."""
        cfg = self.cfg
        start = time.perf_counter()
        record = self.register_frame(event)

        pre_output, _ = self._render(record)
        psnr_pre = masked_psnr(pre_output.color, event.image, record.mask.bits)

        seeds = []
        if record.mask.count > 0:
            dmap = discrepancy_map(
                np.clip(pre_output.color, 0.0, 1.0),
                event.image,
                record.mask,
                cfg.g_m,
                cfg.log_kernel_size,
                cfg.log_sigma,
            )
            seeds = seeds_in_region(
                record.mesh,
                dmap,
                cfg.h_t,
                event.pose,
                event.intrinsics,
                cfg.seed,
                event.frame_index,
                cfg.seed_cap,
            )
        added = integrate_seeds(self.field, seeds, event.frame_index)

        multipliers = lr_scale(self.field.created_at, event.frame_index, cfg)
        eligible = self._eligible()
        iters = 0
        if eligible:
            for _ in range(cfg.per_frame_iters):
                pool = select_local_views(eligible, cfg.local_window, self.rng)
                record_i = self.frames[pool[int(self.rng.integers(len(pool)))]]
                self._step_on(record_i, multipliers)
                iters += 1

        self.updates_done += 1
        if cfg.prune and self.updates_done % cfg.prune_every == 0:
            self.field.prune_transparent(cfg.prune_opacity)

        post_output, _ = self._render(record)
        psnr_post = masked_psnr(post_output.color, event.image, record.mask.bits)
        elapsed = time.perf_counter() - start
        return UpdateReport(
            frame=event.frame_index,
            seeds_added=added,
            field_size=len(self.field),
            iters=iters,
            adopt_seconds=elapsed,
            psnr_new_view=psnr_post,
            psnr_pre_update=psnr_pre,
        )
