"""Image file I/O: 8-bit PNG (RGB/RGBA) and binary PPM, decoded to floats in [0, 1]."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode an image file to an (H, W, 3) float64 array in [0, 1].

    PNG alpha channels are dropped. No gamma handling is applied.
    """
    with Image.open(path) as img:
        img = img.convert("RGB")
        data = np.asarray(img, dtype=np.float64)
    return data / 255.0


def save_png(path: str | os.PathLike, rgb: np.ndarray, alpha: np.ndarray | None = None) -> None:
    """Write an (H, W, 3) float array in [0, 1] as an 8-bit PNG.

    When `alpha` (H, W) is given the PNG carries an alpha channel so no-data
    pixels stay machine-readable.
    """
    rgb8 = np.clip(np.rint(np.clip(rgb, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    if alpha is None:
        Image.fromarray(rgb8, mode="RGB").save(path, format="PNG")
        return
    a8 = np.clip(np.rint(np.clip(alpha, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    rgba = np.dstack([rgb8, a8])
    Image.fromarray(rgba, mode="RGBA").save(path, format="PNG")


def save_ppm(path: str | os.PathLike, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) float array in [0, 1] as a binary PPM (P6)."""
    rgb8 = np.clip(np.rint(np.clip(rgb, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    h, w = rgb8.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb8.tobytes())
