"""Simplified edge diagrams from real images.

detect -> NMS/hysteresis thinning -> 8x8 block-max downscale to 32x32 ->
small-region removal -> Zhang-Suen skeleton. A precomputed edge map
(``<stem>.edges.png``) can stand in for the built-in gradient detector.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import block_max, read_image, to_grayscale

EIGHT = np.ones((3, 3), dtype=bool)
COARSE = 32


@dataclass
class SoftEdgeMap:
    pixels: np.ndarray
    source: str = "builtin"


@dataclass
class EdgeConfig:
    sigma: float = 1.0
    lo: float = 0.1
    hi: float = 0.3
    min_area: int = 3
    out_size: int = COARSE
    source: str = "builtin"

    def __post_init__(self):
        if self.source not in ("builtin", "external_sidecar"):
            raise ValueError("edge source must be builtin or external_sidecar")
        if not 0 <= self.lo <= self.hi <= 1:
            raise ValueError("need 0 <= lo <= hi <= 1")


def sidecar_path(image_path: str | Path) -> Path:
    p = Path(image_path)
    return p.with_name(p.stem + ".edges.png")


def detect_edges(img: np.ndarray, source: str = "builtin", sidecar: str | Path | None = None,
                 sigma: float = 1.0) -> SoftEdgeMap:
    """Soft edge strengths in [0, 1].

    ``builtin`` is the Gaussian-smoothed (``sigma``) gradient magnitude scaled
    by its maximum. ``external_sidecar`` loads a precomputed map of the same size.
    """
    img = to_grayscale(img)
    if source == "external_sidecar":
        if sidecar is None or not Path(sidecar).exists():
            raise FileNotFoundError(f"edge sidecar {sidecar} not found")
        edges = read_image(sidecar)
        if edges.shape != img.shape:
            raise ValueError(f"sidecar {edges.shape} does not match image {img.shape}")
        return SoftEdgeMap(edges, source)
    if source != "builtin":
        raise ValueError(f"unknown edge source {source!r}")
    smooth = ndimage.gaussian_filter(img, sigma, mode="nearest")
    gy, gx = np.gradient(smooth)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak < 1e-12:
        return SoftEdgeMap(np.zeros_like(mag), source)
    return SoftEdgeMap(mag / peak, source)


def _ridge_normal(edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets (dy, dx) pointing across each ridge of the edge map."""
    e = ndimage.gaussian_filter(edges, 1.0, mode="nearest")
    ey, ex = np.gradient(e)
    exy, exx = np.gradient(ex)
    eyy, _ = np.gradient(ey)
    # the eigenvector of the most negative Hessian eigenvalue crosses the ridge
    theta = 0.5 * np.arctan2(2 * exy, exx - eyy) + np.pi / 2
    octant = np.round(theta / (np.pi / 4)).astype(int) % 4
    dy = np.array([0, 1, 1, 1])[octant]
    dx = np.array([1, 1, 0, -1])[octant]
    return dy, dx


def nms_thin(edges: SoftEdgeMap | np.ndarray, lo: float = 0.1, hi: float = 0.3) -> np.ndarray:
    """Non-maximum suppression across the ridge, then hysteresis.

    A pixel survives NMS if it is strictly larger than its neighbour on one
    side and at least as large as the other, so two-pixel plateaus keep
    exactly one pixel.
    """
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError(f"need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")
    m = np.asarray(getattr(edges, "pixels", edges), dtype=np.float64)
    H, W = m.shape
    dy, dx = _ridge_normal(m)
    rr, cc = np.mgrid[0:H, 0:W]
    pad = np.pad(m, 1, mode="constant")
    before = pad[rr - dy + 1, cc - dx + 1]
    after = pad[rr + dy + 1, cc + dx + 1]
    peak = (m > before) & (m >= after) & (m > 0)

    strong = peak & (m >= hi)
    weak = peak & (m >= lo)
    labels, n = ndimage.label(weak, structure=EIGHT)
    if n == 0:
        return np.zeros_like(weak)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def remove_small_regions(mask: np.ndarray, min_area: int = 3) -> np.ndarray:
    """Clear 8-connected components with fewer than ``min_area`` pixels."""
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


# Zhang-Suen thinning ----------------------------------------------------------

# P2..P9 clockwise from north, as (drow, dcol)
_RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def _neighbours(pad: np.ndarray) -> list[np.ndarray]:
    H, W = pad.shape[0] - 2, pad.shape[1] - 2
    return [pad[1 + dr:1 + dr + H, 1 + dc:1 + dc + W] for dr, dc in _RING]


def _deletable(p: list, first: bool):
    p2, p3, p4, p5, p6, p7, p8, p9 = p
    b = sum(x.astype(np.int8) for x in p)
    ring = p + [p[0]]
    a = sum((~ring[k] & ring[k + 1]).astype(np.int8) for k in range(8))
    if first:
        c = ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
    else:
        c = ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
    return (b >= 2) & (b <= 6) & (a == 1) & c


def _still_deletable(pad: np.ndarray, r: int, c: int, first: bool) -> bool:
    p = [bool(pad[r + dr, c + dc]) for dr, dc in _RING]
    b = sum(p)
    a = sum((not p[k]) and p[(k + 1) % 8] for k in range(8))
    p2, p3, p4, p5, p6, p7, p8, p9 = p
    if first:
        c_ok = not (p2 and p4 and p6) and not (p4 and p6 and p8)
    else:
        c_ok = not (p2 and p4 and p8) and not (p2 and p6 and p8)
    return 2 <= b <= 6 and a == 1 and c_ok


def _same_components(before: np.ndarray, after: np.ndarray) -> bool:
    """True if every 8-component of ``before`` keeps exactly one piece in ``after``."""
    lb, nb = ndimage.label(before, structure=EIGHT)
    la, na = ndimage.label(after, structure=EIGHT)
    if na != nb:
        return False
    if na == 0:
        return True
    # after is a subset of before, so each piece lies in one original component
    first = np.zeros(na + 1, dtype=np.int64)
    flat_la, flat_lb = la.ravel(), lb.ravel()
    idx = np.flatnonzero(flat_la)
    first[flat_la[idx]] = flat_lb[idx]
    return len(np.unique(first[1:])) == nb


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen two-subiteration thinning, run to convergence.

    Each subiteration deletes its candidates in parallel, as in the original
    algorithm. Plain parallel deletion erases 2x2 blocks and two-pixel-thick
    diagonals outright; when a subiteration would split or erase an
    8-component, its candidates are instead removed one at a time in raster
    order with the deletion test re-checked against the updated image.
    """
    pad = np.pad(np.asarray(mask, dtype=bool), 1)
    while True:
        changed = False
        for first in (True, False):
            inner = pad[1:-1, 1:-1]
            cand = inner & _deletable(_neighbours(pad), first)
            if not cand.any():
                continue
            thinned = inner & ~cand
            if _same_components(inner, thinned):
                pad[1:-1, 1:-1] = thinned
                changed = True
                continue
            for r, c in zip(*np.nonzero(cand)):
                if _still_deletable(pad, r + 1, c + 1, first):
                    pad[r + 1, c + 1] = False
                    changed = True
        if not changed:
            return pad[1:-1, 1:-1].copy()


def make_edge_diagram(img: np.ndarray, cfg: EdgeConfig | None = None,
                      soft: SoftEdgeMap | None = None) -> np.ndarray:
    """32x32 binary edge diagram of a preprocessed image.

    Pass ``soft`` to use an externally computed edge map instead of the
    built-in detector.
    """
    cfg = cfg or EdgeConfig()
    img = to_grayscale(img)
    if img.shape[0] % cfg.out_size or img.shape[1] % cfg.out_size:
        raise ValueError(f"image {img.shape} is not a multiple of {cfg.out_size}")
    if soft is None:
        soft = detect_edges(img, sigma=cfg.sigma)
    thin = nms_thin(soft, cfg.lo, cfg.hi)
    coarse = block_max(thin, img.shape[0] // cfg.out_size)
    coarse = remove_small_regions(coarse, cfg.min_area)
    diagram = skeletonize(coarse)
    if not diagram.any():
        raise ValueError("no edges survived edge-diagram extraction")
    return diagram
