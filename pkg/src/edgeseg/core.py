"""Pixel substrate shared by every stage.

Images are float64 arrays in [0, 1], shaped (H, W) for grayscale or (H, W, 3)
for colour. Masks and edge diagrams are boolean (H, W) arrays. Conversion to
and from 8-bit happens only at the PNG boundary.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

MIN_SIDE = 8
LUMA = np.array([0.299, 0.587, 0.114])


def check_image(img: np.ndarray, min_side: int = MIN_SIDE) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < min_side or img.shape[1] < min_side:
        raise ValueError(f"image {img.shape[:2]} smaller than {min_side}x{min_side}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected (H, W) mask, got shape {mask.shape}")
    if mask.dtype != bool:
        vals = np.unique(mask)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("mask must contain only 0/1 values")
        mask = mask.astype(bool)
    return mask


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    # floor((i + 0.5) * n_in / n_out) in exact integer arithmetic
    i = np.arange(n_out)
    return np.minimum((2 * i + 1) * n_in // (2 * n_out), n_in - 1)


def _bilinear_weights(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def _lerp_axis(arr: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    lo, hi, frac = _bilinear_weights(arr.shape[axis], n_out)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return np.take(arr, lo, axis=axis) * (1 - frac) + np.take(arr, hi, axis=axis) * frac


def resize(img: np.ndarray, w: int, h: int, mode: str = "bilinear") -> np.ndarray:
    """Resize to width ``w`` and height ``h`` using half-pixel-centre alignment.

    Boolean inputs stay boolean under ``mode="nearest"``.
    """
    if w < 1 or h < 1:
        raise ValueError(f"target size must be positive, got {w}x{h}")
    arr = np.asarray(img)
    H, W = arr.shape[:2]
    if mode == "nearest":
        return arr[_nearest_index(H, h)][:, _nearest_index(W, w)].copy()
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    if arr.dtype == bool:
        raise ValueError("bilinear resize of a binary raster; use mode='nearest'")
    out = _lerp_axis(arr.astype(np.float64), h, axis=0)
    out = _lerp_axis(out, w, axis=1)
    return np.clip(out, 0.0, 1.0)


def binarize(img: np.ndarray, thr: float) -> np.ndarray:
    """Pixel set iff value > thr (strict)."""
    if not 0.0 <= thr <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {thr}")
    return np.asarray(img, dtype=np.float64) > thr


def to_grayscale(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[..., 0]
    if arr.ndim == 3 and arr.shape[2] == 3:
        return np.clip(arr @ LUMA, 0.0, 1.0)
    raise ValueError(f"unsupported channel layout {arr.shape}")


def upscale_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Integer nearest-neighbour upscale (each pixel becomes a factor x factor block)."""
    return np.kron(np.asarray(mask, dtype=np.uint8), np.ones((factor, factor), np.uint8)).astype(bool)


def block_max(mask: np.ndarray, factor: int) -> np.ndarray:
    """Binary downscale: an output pixel is set if any pixel of its block is set."""
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    if H % factor or W % factor:
        raise ValueError(f"{H}x{W} not divisible by {factor}")
    return mask.reshape(H // factor, factor, W // factor, factor).any(axis=(1, 3))


# PNG boundary ----------------------------------------------------------------

def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255).astype(np.uint8)


def read_image(path: str | Path, gray: bool = True) -> np.ndarray:
    with PILImage.open(path) as im:
        im = im.convert("L" if gray else "RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def write_image(path: str | Path, img: np.ndarray) -> None:
    PILImage.fromarray(to_uint8(img)).save(path, format="PNG")


def read_mask(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    if not np.all(np.isin(arr, (0, 255))):
        raise ValueError(f"{path}: mask PNG must contain only 0 and 255")
    return arr == 255


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    arr = np.where(check_mask(mask), 255, 0).astype(np.uint8)
    PILImage.fromarray(arr).save(path, format="PNG")
