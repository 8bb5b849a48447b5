"""Numba kernels for the tile rasterizer: binning, forward compositing, backward.

All kernels are sequential over tiles and splats, so outputs are bit-identical
across runs and independent of any thread configuration. The splat kernel is
truncated at the 3-sigma ellipse (q > q_max contributes nothing), which makes
tile binning by the truncated support exact rather than approximate.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def bin_splats(centers, radii, order, width, height, tile):
    """Bucket splats into 16x16 tiles; per-tile lists keep the given depth order.

    Returns (offsets, ids): CSR layout where ids[offsets[t]:offsets[t+1]] are
    splat indices overlapping tile t, front-to-back.
    """
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    ntiles = tiles_x * tiles_y
    counts = np.zeros(ntiles, dtype=np.int64)
    n = order.shape[0]
    tx0 = np.empty(n, dtype=np.int64)
    tx1 = np.empty(n, dtype=np.int64)
    ty0 = np.empty(n, dtype=np.int64)
    ty1 = np.empty(n, dtype=np.int64)
    for k in range(n):
        i = order[k]
        ix_min = int(np.ceil(centers[i, 0] - radii[i, 0] - 0.5))
        ix_max = int(np.floor(centers[i, 0] + radii[i, 0] - 0.5))
        iy_min = int(np.ceil(centers[i, 1] - radii[i, 1] - 0.5))
        iy_max = int(np.floor(centers[i, 1] + radii[i, 1] - 0.5))
        if ix_min < 0:
            ix_min = 0
        if iy_min < 0:
            iy_min = 0
        if ix_max > width - 1:
            ix_max = width - 1
        if iy_max > height - 1:
            iy_max = height - 1
        if ix_min > ix_max or iy_min > iy_max:
            tx0[k] = 1
            tx1[k] = 0
            ty0[k] = 1
            ty1[k] = 0
            continue
        tx0[k] = ix_min // tile
        tx1[k] = ix_max // tile
        ty0[k] = iy_min // tile
        ty1[k] = iy_max // tile
        for ty in range(ty0[k], ty1[k] + 1):
            for tx in range(tx0[k], tx1[k] + 1):
                counts[ty * tiles_x + tx] += 1
    offsets = np.zeros(ntiles + 1, dtype=np.int64)
    for t in range(ntiles):
        offsets[t + 1] = offsets[t] + counts[t]
    ids = np.empty(offsets[ntiles], dtype=np.int64)
    cursor = offsets[:ntiles].copy()
    for k in range(n):
        if tx0[k] > tx1[k]:
            continue
        i = order[k]
        for ty in range(ty0[k], ty1[k] + 1):
            for tx in range(tx0[k], tx1[k] + 1):
                t = ty * tiles_x + tx
                ids[cursor[t]] = i
                cursor[t] += 1
    return offsets, ids


@njit(cache=True)
def composite_forward(
    offsets,
    ids,
    centers,
    inv_a,
    inv_b,
    inv_c,
    opacity,
    colors,
    width,
    height,
    tile,
    background,
    alpha_min,
    alpha_max,
    t_eps,
    q_max,
):
    """Front-to-back alpha compositing per tile; returns (color, T, contributors)."""
    out = np.empty((height, width, 3), dtype=np.float64)
    out_t = np.empty((height, width), dtype=np.float64)
    contrib = np.zeros((height, width), dtype=np.int32)
    tiles_x = (width + tile - 1) // tile
    ntiles = offsets.shape[0] - 1
    for t in range(ntiles):
        ty = t // tiles_x
        tx = t % tiles_x
        y_end = min((ty + 1) * tile, height)
        x_end = min((tx + 1) * tile, width)
        for yy in range(ty * tile, y_end):
            py = yy + 0.5
            for xx in range(tx * tile, x_end):
                px = xx + 0.5
                trans = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                cnt = 0
                for k in range(offsets[t], offsets[t + 1]):
                    i = ids[k]
                    dx = px - centers[i, 0]
                    dy = py - centers[i, 1]
                    q = inv_a[i] * dx * dx + 2.0 * inv_b[i] * dx * dy + inv_c[i] * dy * dy
                    if q > q_max:
                        continue
                    alpha = opacity[i] * np.exp(-0.5 * q)
                    if alpha > alpha_max:
                        alpha = alpha_max
                    if alpha < alpha_min:
                        continue
                    w = trans * alpha
                    c0 += w * colors[i, 0]
                    c1 += w * colors[i, 1]
                    c2 += w * colors[i, 2]
                    cnt += 1
                    trans *= 1.0 - alpha
                    if trans < t_eps:
                        break
                out[yy, xx, 0] = c0 + trans * background[0]
                out[yy, xx, 1] = c1 + trans * background[1]
                out[yy, xx, 2] = c2 + trans * background[2]
                out_t[yy, xx] = trans
                contrib[yy, xx] = cnt
    return out, out_t, contrib


@njit(cache=True)
def composite_backward(
    offsets,
    ids,
    centers,
    inv_a,
    inv_b,
    inv_c,
    opacity,
    colors,
    out_color,
    grad_color,
    width,
    height,
    tile,
    alpha_min,
    alpha_max,
    t_eps,
    q_max,
):
    """Exact adjoint of composite_forward for the splat-space parameters.

    Returns per-splat gradients: center (n, 2), 2D covariance as full-matrix
    entries (d00, d01, d11) (n, 3), opacity (n,), color (n, 3). Splats skipped
    by the forward cutoffs receive exactly zero gradient.
    """
    n = centers.shape[0]
    d_center = np.zeros((n, 2), dtype=np.float64)
    d_cov = np.zeros((n, 3), dtype=np.float64)
    d_opac = np.zeros(n, dtype=np.float64)
    d_color = np.zeros((n, 3), dtype=np.float64)
    tiles_x = (width + tile - 1) // tile
    ntiles = offsets.shape[0] - 1
    for t in range(ntiles):
        ty = t // tiles_x
        tx = t % tiles_x
        y_end = min((ty + 1) * tile, height)
        x_end = min((tx + 1) * tile, width)
        for yy in range(ty * tile, y_end):
            py = yy + 0.5
            for xx in range(tx * tile, x_end):
                px = xx + 0.5
                g0 = grad_color[yy, xx, 0]
                g1 = grad_color[yy, xx, 1]
                g2 = grad_color[yy, xx, 2]
                if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                    continue
                # remainder = contribution of this splat and everything behind it
                r0 = out_color[yy, xx, 0]
                r1 = out_color[yy, xx, 1]
                r2 = out_color[yy, xx, 2]
                trans = 1.0
                for k in range(offsets[t], offsets[t + 1]):
                    i = ids[k]
                    dx = px - centers[i, 0]
                    dy = py - centers[i, 1]
                    q = inv_a[i] * dx * dx + 2.0 * inv_b[i] * dx * dy + inv_c[i] * dy * dy
                    if q > q_max:
                        continue
                    gauss = np.exp(-0.5 * q)
                    alpha_raw = opacity[i] * gauss
                    clamped = alpha_raw > alpha_max
                    alpha = alpha_max if clamped else alpha_raw
                    if alpha < alpha_min:
                        continue
                    w = trans * alpha
                    con0 = w * colors[i, 0]
                    con1 = w * colors[i, 1]
                    con2 = w * colors[i, 2]
                    ra0 = r0 - con0
                    ra1 = r1 - con1
                    ra2 = r2 - con2
                    d_color[i, 0] += g0 * w
                    d_color[i, 1] += g1 * w
                    d_color[i, 2] += g2 * w
                    one_minus = 1.0 - alpha
                    d_alpha = (
                        g0 * (trans * colors[i, 0] - ra0 / one_minus)
                        + g1 * (trans * colors[i, 1] - ra1 / one_minus)
                        + g2 * (trans * colors[i, 2] - ra2 / one_minus)
                    )
                    if not clamped:
                        d_opac[i] += d_alpha * gauss
                        d_gauss = d_alpha * opacity[i]
                        coef = d_gauss * gauss
                        mx = inv_a[i] * dx + inv_b[i] * dy
                        my = inv_b[i] * dx + inv_c[i] * dy
                        d_center[i, 0] += coef * mx
                        d_center[i, 1] += coef * my
                        d_cov[i, 0] += 0.5 * coef * mx * mx
                        d_cov[i, 1] += 0.5 * coef * mx * my
                        d_cov[i, 2] += 0.5 * coef * my * my
                    r0 = ra0
                    r1 = ra1
                    r2 = ra2
                    trans *= one_minus
                    if trans < t_eps:
                        break
    return d_center, d_cov, d_opac, d_color
