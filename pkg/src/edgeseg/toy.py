"""Procedural toy corpus: a speckled bright ellipse on a dark noisy background."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

TOY_SIZES = (32, 64, 128)
MIN_SEPARATION = 0.2


@dataclass(frozen=True)
class ToyBlob:
    cx: float
    cy: float
    a: float
    b: float
    theta: float

    def mask(self, size: int) -> np.ndarray:
        """Pixel centres inside the ellipse, computed analytically."""
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        dx, dy = xx - self.cx, yy - self.cy
        c, s = np.cos(self.theta), np.sin(self.theta)
        u, v = c * dx + s * dy, -s * dx + c * dy
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


def sample_blob(rng: np.random.Generator, size: int) -> ToyBlob:
    a = rng.uniform(0.16, 0.38) * size
    b = a * rng.uniform(0.5, 1.0)
    margin = a + 0.05 * size
    cx, cy = rng.uniform(margin, size - margin, 2)
    return ToyBlob(float(cx), float(cy), float(a), float(b), float(rng.uniform(0, np.pi)))


def render(blob: ToyBlob, size: int, rng: np.random.Generator) -> np.ndarray:
    mask = blob.mask(size)
    bg = rng.uniform(0.1, 0.3)
    fg = bg + rng.uniform(0.35, 0.55)
    base = ndimage.gaussian_filter(np.where(mask, fg, bg), sigma=size / 48, mode="nearest")
    speckle = rng.gamma(8.0, 1 / 8.0, (size, size))
    img = base * speckle + rng.normal(0.0, 0.03, (size, size))
    return np.clip(img, 0.0, 1.0)


def separation(img: np.ndarray, mask: np.ndarray) -> float:
    return float(img[mask].mean() - img[~mask].mean())


def gen_toy_images(rng: np.random.Generator, n: int, size: int = 64):
    """``n`` (image, mask, blob) triples; the masks never look at rendered pixels."""
    if n < 1:
        raise ValueError("n must be positive")
    if size not in TOY_SIZES:
        raise ValueError(f"size must be one of {TOY_SIZES}")
    out = []
    while len(out) < n:
        blob = sample_blob(rng, size)
        mask = blob.mask(size)
        img = render(blob, size, rng)
        if separation(img, mask) >= MIN_SEPARATION:
            out.append((img, mask, blob))
    return out


def gan_smoke_pairs(rng: np.random.Generator, n: int, size: int = 8):
    """Tiny translation task: ellipse outline -> blurred filled ellipse.

    Returns ``n`` (diagram, target) float pairs of shape ``size x size``.
    """
    pairs = []
    for _ in range(n):
        a = rng.uniform(0.2, 0.42) * size
        b = a * rng.uniform(0.6, 1.0)
        cx, cy = rng.uniform(0.4, 0.6, 2) * size
        mask = ToyBlob(float(cx), float(cy), float(a), float(b), float(rng.uniform(0, np.pi))).mask(size)
        edge = mask & ~ndimage.binary_erosion(mask)
        target = ndimage.gaussian_filter(np.where(mask, 0.8, 0.2), sigma=0.7, mode="nearest")
        pairs.append((edge.astype(np.float64), target))
    return pairs


def annotated_pair(rng: np.random.Generator, size: int = 128, stroke: float = 1.0):
    """Clinician-style fixture: a textured image and a copy with an ellipse outline drawn on it.

    Returns ``(annotated, original, blob)``; ``blob.mask(size)`` is the
    analytic filled ellipse the outline traces.
    """
    texture = ndimage.gaussian_filter(rng.random((size, size)), 2.0)
    texture = (texture - texture.min()) / (np.ptp(texture) + 1e-12)
    original = np.clip(0.15 + 0.35 * texture * rng.gamma(8.0, 1 / 8.0, (size, size)), 0.0, 1.0)
    blob = sample_blob(rng, size)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    c, s = np.cos(blob.theta), np.sin(blob.theta)
    u = c * (xx - blob.cx) + s * (yy - blob.cy)
    v = -s * (xx - blob.cx) + c * (yy - blob.cy)
    rho = np.sqrt((u / blob.a) ** 2 + (v / blob.b) ** 2)
    # distance to the outline, to first order
    grad = np.hypot(u / blob.a ** 2, v / blob.b ** 2) / np.maximum(rho, 1e-12)
    on_stroke = np.abs(rho - 1.0) / np.maximum(grad, 1e-12) <= stroke
    annotated = np.where(on_stroke, 1.0, original)
    return annotated, original, blob
