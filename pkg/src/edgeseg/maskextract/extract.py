"""Ground-truth masks from annotated/original image pairs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import check_image, to_uint8, write_image
from .contours import filter_contours, find_contours
from .hull import convex_hull, fill_polygon


@dataclass
class ExtractConfig:
    win_rows: int = 25
    win_cols: int = 40
    min_area: float = 25.0
    approx: str = "teh_chin"


def diff_image(annotated: np.ndarray, original: np.ndarray) -> np.ndarray:
    a, o = check_image(annotated, 1), check_image(original, 1)
    if a.shape != o.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {o.shape}")
    if a.ndim != 2:
        raise ValueError("expected grayscale images")
    return np.abs(a - o)


def window_sums(q: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Integer sums over a rows x cols window with replicate padding.

    The window at (y, x) spans rows y - rows//2 .. y - rows//2 + rows - 1 and
    likewise for columns, so even sizes extend one further up/left.
    """
    top, left = rows // 2, cols // 2
    p = np.pad(q.astype(np.int64), ((top, rows - 1 - top), (left, cols - 1 - left)), mode="edge")
    c = np.zeros((p.shape[0] + 1, p.shape[1] + 1), dtype=np.int64)
    c[1:, 1:] = p.cumsum(0).cumsum(1)
    H, W = q.shape
    return c[rows:rows + H, cols:cols + W] - c[:H, cols:cols + W] - c[rows:rows + H, :W] + c[:H, :W]


def adaptive_binarize(S: np.ndarray, rows: int = 25, cols: int = 40) -> np.ndarray:
    """B = 0 where S exceeds its windowed mean, else 1 (returned as a bool array).

    S is quantised to 8-bit levels first, so the comparison is made exactly
    on integers: S * rows * cols > window sum.
    """
    q = to_uint8(np.asarray(S, dtype=np.float64)).astype(np.int64)
    return ~(q * (rows * cols) > window_sums(q, rows, cols))


def extract_gt_mask(annotated: np.ndarray, original: np.ndarray, cfg: ExtractConfig | None = None,
                    panels: dict | None = None) -> np.ndarray:
    """diff -> adaptive threshold -> strokes -> outer contours -> area filter -> hull fill.

    Surviving hulls are unioned. Pass a dict as ``panels`` to receive the
    five intermediate images.
    """
    cfg = cfg or ExtractConfig()
    S = diff_image(annotated, original)
    B = adaptive_binarize(S, cfg.win_rows, cfg.win_cols)
    strokes = ~B
    contours = filter_contours(find_contours(strokes, cfg.approx), cfg.min_area)
    if not contours:
        raise ValueError("no annotation contours survived; image pair rejected")
    mask = np.zeros(S.shape, dtype=bool)
    hulls = []
    for c in contours:
        try:
            h = convex_hull(c.points)
        except ValueError:
            continue
        hulls.append(h)
        mask |= fill_polygon(h, S.shape)
    if not mask.any():
        raise ValueError("all surviving contours were degenerate")
    if panels is not None:
        panels.update({"1_diff": S, "2_binary": B.astype(float),
                       "3_contours": _draw(S.shape, [c.points for c in contours]),
                       "4_hulls": _draw(S.shape, hulls), "5_mask": mask.astype(float)})
    return mask


def _draw(shape, polys) -> np.ndarray:
    """Polygon outlines rasterised by dense sampling of each edge."""
    out = np.zeros(shape)
    for p in polys:
        q = np.roll(p, -1, axis=0)
        for (x0, y0), (x1, y1) in zip(p, q):
            n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
            xs = np.rint(np.linspace(x0, x1, n)).astype(int)
            ys = np.rint(np.linspace(y0, y1, n)).astype(int)
            out[ys, xs] = 1.0
    return out


def write_panels(out_dir, stem: str, panels: dict) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, img in sorted(panels.items()):
        path = out_dir / f"{stem}_{name}.png"
        write_image(path, np.clip(img, 0, 1))
        paths.append(path)
    return paths
