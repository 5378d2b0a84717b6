"""Ultrasound preprocessing chain.

crop -> despeckle -> text removal -> percentile trim -> CLAHE -> resize.
Dermoscopy images only get resized. Dataset standardisation (training-split
mean/std) is applied at model ingestion, not here.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import check_image, resize, to_grayscale

TARGET_SIZE = 256


@dataclass
class PreprocessConfig:
    clahe_clip: float = 0.03
    clahe_tiles: tuple[int, int] = (8, 8)
    trim_lo: float = 2.0
    trim_hi: float = 98.0
    despeckle_window: int = 3
    text_boxes_path: str | None = None
    border_tol: float = 0.02
    size: int = TARGET_SIZE

    def __post_init__(self):
        if not 0 <= self.trim_lo < self.trim_hi <= 100:
            raise ValueError("need 0 <= trim_lo < trim_hi <= 100")
        if self.clahe_clip <= 0:
            raise ValueError("clahe_clip must be positive")
        if self.despeckle_window < 3 or self.despeckle_window % 2 == 0:
            raise ValueError("despeckle_window must be odd and >= 3")


def crop_window(img: np.ndarray, tol: float = 0.02) -> tuple[int, int, int, int]:
    """Row/column bounds ``(r0, r1, c0, c1)`` left after stripping white margins."""
    img = check_image(to_grayscale(img))
    white = img >= 1.0 - tol
    keep_rows = np.flatnonzero(~white.all(axis=1))
    keep_cols = np.flatnonzero(~white.all(axis=0))
    if keep_rows.size == 0 or keep_cols.size == 0:
        raise ValueError("image is uniformly white; nothing left after cropping")
    r0, r1 = int(keep_rows[0]), int(keep_rows[-1]) + 1
    c0, c1 = int(keep_cols[0]), int(keep_cols[-1]) + 1
    if r1 - r0 < 8 or c1 - c0 < 8:
        raise ValueError(f"cropped interior {r1 - r0}x{c1 - c0} is smaller than 8x8")
    return r0, r1, c0, c1


def crop_borders(img: np.ndarray, tol: float = 0.02) -> np.ndarray:
    """Strip white margin rows/columns (every pixel within ``tol`` of 1.0)."""
    r0, r1, c0, c1 = crop_window(img, tol)
    return to_grayscale(np.asarray(img, dtype=np.float64))[r0:r1, c0:c1].copy()


def _shift_boxes(boxes, r0, c0, H, W):
    out = []
    for x, y, w, h in boxes:
        xa, ya = max(x - c0, 0), max(y - r0, 0)
        xb, yb = min(x - c0 + w, W), min(y - r0 + h, H)
        if xb > xa and yb > ya:
            out.append((xa, ya, xb - xa, yb - ya))
    return out


def despeckle(img: np.ndarray, window: int = 3) -> np.ndarray:
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    return ndimage.median_filter(np.asarray(img, dtype=np.float64), size=window, mode="nearest")


def trim_normalize(img: np.ndarray, lo: float = 2.0, hi: float = 98.0) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    p_lo, p_hi = np.percentile(img, [lo, hi])
    if p_hi <= p_lo:
        raise ValueError("image has no dynamic range between the trim percentiles")
    return (np.clip(img, p_lo, p_hi) - p_lo) / (p_hi - p_lo)


def _clip_histogram(hist: np.ndarray, limit: float) -> np.ndarray:
    if not np.isfinite(limit):
        return hist
    excess = np.maximum(hist - limit, 0.0).sum()
    return np.minimum(hist, limit) + excess / hist.size


def _tile_coords(n: int, tiles: int):
    edges = np.linspace(0, n, tiles + 1).round().astype(int)
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    f = np.interp(np.arange(n), centers, np.arange(tiles))
    lo = np.floor(f).astype(int)
    hi = np.minimum(lo + 1, tiles - 1)
    return edges, lo, hi, f - lo


def clahe(img: np.ndarray, clip: float = 0.03, tiles: tuple[int, int] = (8, 8),
          nbins: int = 256) -> np.ndarray:
    """Contrast-limited adaptive histogram equalisation.

    ``clip`` is a fraction of the tile's pixel count (0.03 of a 32x32 tile caps
    each bin at ~31 counts); the clipped excess is spread uniformly over all
    bins. Tile mappings are blended bilinearly between tile centres.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("clahe expects a grayscale image")
    H, W = img.shape
    ty, tx = min(tiles[0], H), min(tiles[1], W)
    bins = np.minimum((img * nbins).astype(int), nbins - 1)
    r_edges, r_lo, r_hi, r_w = _tile_coords(H, ty)
    c_edges, c_lo, c_hi, c_w = _tile_coords(W, tx)

    maps = np.empty((ty, tx, nbins))
    for i in range(ty):
        for j in range(tx):
            tile = bins[r_edges[i]:r_edges[i + 1], c_edges[j]:c_edges[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=nbins).astype(np.float64)
            hist = _clip_histogram(hist, max(clip * tile.size, 1.0))
            maps[i, j] = np.cumsum(hist) / hist.sum()

    rl, rh, rw = r_lo[:, None], r_hi[:, None], r_w[:, None]
    cl, ch, cw = c_lo[None, :], c_hi[None, :], c_w[None, :]
    out = ((1 - rw) * (1 - cw) * maps[rl, cl, bins]
           + (1 - rw) * cw * maps[rl, ch, bins]
           + rw * (1 - cw) * maps[rh, cl, bins]
           + rw * cw * maps[rh, ch, bins])
    return np.clip(out, 0.0, 1.0)


def remove_text(img: np.ndarray, boxes, tol: float = 1e-4, max_iter: int = 20000) -> np.ndarray:
    """Inpaint each (x, y, w, h) box by harmonic diffusion from its border.

    Box interiors are relaxed with Jacobi sweeps (each pixel -> mean of its
    4-neighbours, pixels outside the box held fixed) until the largest update
    falls below ``tol``.
    """
    img = np.asarray(img, dtype=np.float64).copy()
    H, W = img.shape
    for box in boxes:
        x, y, w, h = (int(v) for v in box)
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > W or y + h > H:
            raise ValueError(f"text box {box} outside {W}x{H} image")
        # one-pixel ring around the box (clamped to the image) supplies boundary values
        y0, y1 = max(y - 1, 0), min(y + h + 1, H)
        x0, x1 = max(x - 1, 0), min(x + w + 1, W)
        patch = img[y0:y1, x0:x1].copy()
        inside = np.zeros_like(patch, dtype=bool)
        inside[y - y0:y - y0 + h, x - x0:x - x0 + w] = True
        ring = ~inside
        if ring.any():
            patch[inside] = patch[ring].mean()
        for _ in range(max_iter):
            padded = np.pad(patch, 1, mode="edge")
            avg = 0.25 * (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:])
            delta = np.abs(avg[inside] - patch[inside]).max()
            patch[inside] = avg[inside]
            if delta < tol:
                break
        img[y0:y1, x0:x1] = patch
    return np.clip(img, 0.0, 1.0)


def read_text_boxes(path: str | Path) -> dict[str, list[tuple[int, int, int, int]]]:
    """Parse the text-box sidecar: ``<image id> x y w h [x y w h ...]`` per line."""
    out: dict[str, list[tuple[int, int, int, int]]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        nums = parts[1:]
        if len(nums) % 4:
            raise ValueError(f"{path}:{lineno}: expected groups of 4 integers after the id")
        vals = [int(v) for v in nums]
        out[parts[0]] = [tuple(vals[i:i + 4]) for i in range(0, len(vals), 4)]
    return out


def write_text_boxes(path: str | Path, boxes: dict[str, list]) -> None:
    lines = [" ".join([k] + [str(int(v)) for b in bs for v in b]) for k, bs in boxes.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def preprocess_us(img: np.ndarray, cfg: PreprocessConfig | None = None, boxes=()) -> np.ndarray:
    """Full ultrasound chain; ``boxes`` are text boxes in raw-image coordinates."""
    cfg = cfg or PreprocessConfig()
    r0, r1, c0, c1 = crop_window(img, cfg.border_tol)
    out = to_grayscale(np.asarray(img, dtype=np.float64))[r0:r1, c0:c1]
    out = despeckle(out, cfg.despeckle_window)
    boxes = _shift_boxes(boxes, r0, c0, *out.shape)
    if boxes:
        out = remove_text(out, boxes)
    out = trim_normalize(out, cfg.trim_lo, cfg.trim_hi)
    out = clahe(out, cfg.clahe_clip, cfg.clahe_tiles)
    return resize(out, cfg.size, cfg.size, "bilinear")


def preprocess_skin(img: np.ndarray, size: int = TARGET_SIZE) -> np.ndarray:
    return resize(check_image(img), size, size, "bilinear")


def dataset_stats(images) -> tuple[float, float]:
    """Mean and std over every pixel of a training split."""
    stack = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    std = float(stack.std())
    return float(stack.mean()), std if std > 0 else 1.0
