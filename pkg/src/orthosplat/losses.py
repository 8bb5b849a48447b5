"""Masked photometric loss (L1 + SSIM) with analytic image-space gradients.

Loss and gradients are confined to the key-region mask: the mean runs over
masked pixels only and the returned gradient raster is zero outside the mask,
so Gaussians whose splats never touch a masked pixel receive no update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(ax**2) / (2.0 * SSIM_SIGMA**2))
    return w / w.sum()


_W1D = _window()


def _filt(img: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, _W1D, axis=0, mode="reflect")
    return ndimage.correlate1d(out, _W1D, axis=1, mode="reflect")


@dataclass
class SsimTargetCache:
    """Per-target filter responses, reusable across training iterations."""

    mu: np.ndarray  # (H, W, 3)
    mu_sq: np.ndarray
    sigma_sq: np.ndarray


def ssim_target_cache(target: np.ndarray) -> SsimTargetCache:
    mu = np.stack([_filt(target[:, :, c]) for c in range(3)], axis=-1)
    ysq = np.stack([_filt(target[:, :, c] ** 2) for c in range(3)], axis=-1)
    return SsimTargetCache(mu=mu, mu_sq=mu * mu, sigma_sq=ysq - mu * mu)


def masked_loss(
    render: np.ndarray,
    target: np.ndarray,
    mask: np.ndarray,
    ssim_weight: float = 0.2,
    target_cache: SsimTargetCache | None = None,
) -> tuple[float, np.ndarray] | None:
    """(1 - w)*L1 + w*(1 - SSIM) over masked pixels, with d(loss)/d(render).

    Returns None when the mask is empty (the view is skipped). The SSIM term
    uses an 11x11 Gaussian window; its mean runs over masked window centers.
    """
    if render.shape != target.shape:
        raise ValueError(f"raster shapes differ: {render.shape} vs {target.shape}")
    if mask.shape != render.shape[:2]:
        raise ValueError("mask dimensions do not match rasters")
    n_masked = int(mask.sum())
    if n_masked == 0:
        return None
    m = mask.astype(np.float64)
    weight = m / (3.0 * n_masked)

    diff = render - target
    l1 = float(np.sum(np.abs(diff) * weight[:, :, None]))
    grad = np.sign(diff) * weight[:, :, None] * (1.0 - ssim_weight)

    if ssim_weight > 0.0:
        if target_cache is None:
            target_cache = ssim_target_cache(target)
        ssim_mean, ssim_grad = _ssim_with_grad(render, target, weight, target_cache)
        loss = (1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - ssim_mean)
        grad -= ssim_weight * ssim_grad
    else:
        loss = l1

    grad *= m[:, :, None]
    return loss, grad


def _ssim_with_grad(
    render: np.ndarray,
    target: np.ndarray,
    weight: np.ndarray,
    cache: SsimTargetCache,
) -> tuple[float, np.ndarray]:
    """Masked-mean SSIM and its gradient w.r.t. the rendered image."""
    ssim_sum = 0.0
    grad = np.empty_like(render)
    for c in range(3):
        x = render[:, :, c]
        y = target[:, :, c]
        mu_x = _filt(x)
        e_x = _filt(x * x)
        f_xy = _filt(x * y)
        mu_y = cache.mu[:, :, c]
        sigma_x = e_x - mu_x * mu_x
        sigma_y = cache.sigma_sq[:, :, c]
        sigma_xy = f_xy - mu_x * mu_y
        a1 = 2.0 * mu_x * mu_y + SSIM_C1
        a2 = 2.0 * sigma_xy + SSIM_C2
        b1 = mu_x * mu_x + cache.mu_sq[:, :, c] + SSIM_C1
        b2 = sigma_x + sigma_y + SSIM_C2
        inv_bb = 1.0 / (b1 * b2)
        s = a1 * a2 * inv_bb
        ssim_sum += float(np.sum(s * weight))
        # partials of S w.r.t. mu_x, filt(x^2), filt(x*y)
        ds_dmu = 2.0 * mu_y * (a2 - a1) * inv_bb + 2.0 * mu_x * s * (b1 - b2) * inv_bb
        ds_de = -s / b2
        ds_df = 2.0 * a1 * inv_bb
        grad[:, :, c] = (
            _filt(weight * ds_dmu)
            + 2.0 * x * _filt(weight * ds_de)
            + y * _filt(weight * ds_df)
        )
    return ssim_sum, grad


def masked_psnr(render: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    """PSNR over masked pixels; +inf for a perfect match, nan for an empty mask."""
    n_masked = int(mask.sum())
    if n_masked == 0:
        return float("nan")
    sq = (render - target) ** 2
    mse = float(np.sum(sq * mask[:, :, None])) / (3.0 * n_masked)
    if mse <= 0.0:
        return float("inf")
    return -10.0 * math.log10(mse)
