"""Ultrasound cone profiles: Otsu thresholding and outer-profile extraction."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy import ndimage

EIGHT = np.ones((3, 3), dtype=bool)


def otsu(hist) -> int:
    """Otsu threshold of a histogram.

    Returns ``t`` such that bins ``< t`` form the lower class and bins ``>= t``
    the upper class, maximising between-class variance. Ties go to the lowest
    ``t``. The search uses exact rational arithmetic, so equal variances tie
    exactly.
    """
    h = [int(v) for v in np.asarray(hist).ravel()]
    if any(v < 0 for v in h):
        raise ValueError("histogram counts must be non-negative")
    if sum(1 for v in h if v > 0) < 2:
        raise ValueError("histogram needs at least two non-empty bins")
    total = sum(h)
    total_sum = sum(i * v for i, v in enumerate(h))
    best_t, best = 1, Fraction(-1)
    n0 = s0 = 0
    for t in range(1, len(h)):
        n0 += h[t - 1]
        s0 += (t - 1) * h[t - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        # between-class variance * total^2 = (total*s0 - n0*S)^2 / (n0*n1)
        var = Fraction((total * s0 - n0 * total_sum) ** 2, n0 * n1)
        if var > best:
            best, best_t = var, t
    return best_t


def otsu_binarize(img: np.ndarray, nbins: int = 256) -> np.ndarray:
    """Foreground = pixels whose bin index is at or above the Otsu threshold."""
    img = np.asarray(img, dtype=np.float64)
    bins = np.minimum((img * nbins).astype(int), nbins - 1)
    t = otsu(np.bincount(bins.ravel(), minlength=nbins))
    return bins >= t


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def check_cone(mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool)
    if not mask[0].any():
        raise ValueError("cone profile does not touch the top row")
    _, n = ndimage.label(mask, structure=EIGHT)
    if n != 1:
        raise ValueError(f"cone profile has {n} components, expected 1")


def extract_cone_profile(diagram: np.ndarray, min_pixels: int = 8) -> np.ndarray:
    """Filled outer profile of an edge diagram.

    For every occupied column the top-most and bottom-most set pixels bound the
    region; empty columns between the left and right extremes take linearly
    interpolated bounds, which closes gaps in the lateral and lower outline.
    Anything drawn inside the outline is swallowed by the fill; stray pixels
    outside it end up in separate fragments, of which only the largest region
    is kept. Soft (non-binary) inputs are binarised with Otsu first.
    """
    d = np.asarray(diagram)
    if d.dtype != bool:
        d = otsu_binarize(d) if len(np.unique(d)) > 2 else d > 0
    if d.sum() < min_pixels:
        raise ValueError(f"diagram has {int(d.sum())} set pixels; need {min_pixels} to close a cone")
    H, W = d.shape
    cols = np.flatnonzero(d.any(axis=0))
    top = np.array([np.flatnonzero(d[:, c])[0] for c in cols], dtype=float)
    bottom = np.array([np.flatnonzero(d[:, c])[-1] for c in cols], dtype=float)
    span = np.arange(cols[0], cols[-1] + 1)
    top_i = np.round(np.interp(span, cols, top)).astype(int)
    bot_i = np.round(np.interp(span, cols, bottom)).astype(int)
    rows = np.arange(H)[:, None]
    mask = np.zeros((H, W), dtype=bool)
    mask[:, span] = (rows >= top_i[None, :]) & (rows <= bot_i[None, :])
    mask = largest_component(mask)
    check_cone(mask)
    return mask


def sector_cone(size: int = 32, apex_col: float = 15.5, radius: float = 30.0,
                half_angle: float = 0.6) -> np.ndarray:
    """Filled circular-sector cone with its apex on the top row."""
    rr, cc = np.mgrid[0:size, 0:size].astype(float)
    dy, dx = rr + 0.5, cc - apex_col
    dist = np.hypot(dx, dy)
    ang = np.arctan2(np.abs(dx), dy)
    mask = (dist <= radius) & (ang <= half_angle)
    mask[0, int(np.floor(apex_col)):int(np.ceil(apex_col)) + 1] = True
    # a sector is convex along every column; close the notch the forced apex can leave
    below_top = np.maximum.accumulate(mask, axis=0)
    above_bottom = np.maximum.accumulate(mask[::-1], axis=0)[::-1]
    return largest_component(below_top & above_bottom)


def outline(mask: np.ndarray) -> np.ndarray:
    """Inner boundary: set pixels with a 4-neighbour outside the mask or frame."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def random_sector_cone(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    return sector_cone(size,
                       apex_col=rng.uniform(0.4, 0.6) * size,
                       radius=rng.uniform(0.8, 0.97) * size,
                       half_angle=rng.uniform(0.5, 0.75))
