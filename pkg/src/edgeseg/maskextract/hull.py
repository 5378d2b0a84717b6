"""Convex hull by Sklansky's scan with a verified general-hull fallback, and polygon fill."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull


def _cross(o, a, b) -> int:
    return int((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def _signed_area2(p: np.ndarray) -> int:
    x, y = p[:, 0], p[:, 1]
    return int(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def sklansky_scan(polygon: np.ndarray) -> np.ndarray:
    """Three-coins scan over a polygon's vertices in boundary order.

    Correct for many simple polygons but not all; callers must verify.
    """
    p = np.asarray(polygon, dtype=np.int64)
    start = np.lexsort((p[:, 1], p[:, 0]))[0]
    p = np.roll(p, -start, axis=0)
    if _signed_area2(p) < 0:
        p = np.concatenate([p[:1], p[1:][::-1]])
    stack = [tuple(p[0])]
    for q in list(map(tuple, p[1:])) + [tuple(p[0])]:
        if q == stack[-1]:
            continue
        while len(stack) >= 2 and _cross(stack[-2], stack[-1], q) <= 0:
            stack.pop()
        stack.append(q)
    if len(stack) > 1 and stack[-1] == stack[0]:
        stack.pop()
    return np.array(stack, dtype=np.int64)


def is_hull_of(h: np.ndarray, pts: np.ndarray) -> bool:
    """Strictly convex, counter-clockwise, vertices drawn from ``pts`` and containing them all."""
    if len(h) < 3:
        return False
    vert = {tuple(v) for v in pts}
    if any(tuple(v) not in vert for v in h) or len({tuple(v) for v in h}) != len(h):
        return False
    n = len(h)
    for k in range(n):
        if _cross(h[k], h[(k + 1) % n], h[(k + 2) % n]) <= 0:
            return False
    a = h
    b = np.roll(h, -1, axis=0)
    # cross of every edge with every point, exact in int64
    c = (b[:, 0, None] - a[:, 0, None]) * (pts[None, :, 1] - a[:, 1, None]) \
        - (b[:, 1, None] - a[:, 1, None]) * (pts[None, :, 0] - a[:, 0, None])
    return bool(np.all(c >= 0))


def _qhull(pts: np.ndarray) -> np.ndarray:
    hull = ConvexHull(pts.astype(np.float64))
    h = pts[hull.vertices]
    if _signed_area2(h) < 0:
        h = h[::-1]
    return h


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull vertices (x, y); no collinear vertices.

    Orientation is measured with y pointing up, so on screen (rows down)
    the order appears clockwise.
    """
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    uniq = np.unique(pts, axis=0)
    if len(uniq) < 3 or np.linalg.matrix_rank(uniq[1:] - uniq[0]) < 2:
        raise ValueError("points are collinear; hull is degenerate")
    h = sklansky_scan(pts)
    if is_hull_of(h, uniq):
        return h
    h = _qhull(uniq)
    if not is_hull_of(h, uniq):
        raise RuntimeError("fallback hull failed verification")
    return h


def fill_polygon(poly, shape: tuple[int, int]) -> np.ndarray:
    """Pixels inside or on the boundary of a convex polygon given as (x, y) vertices."""
    h = np.asarray(poly, dtype=np.int64).reshape(-1, 2)
    if _signed_area2(h) < 0:
        h = h[::-1]
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W]
    inside = np.ones((H, W), dtype=bool)
    for k in range(len(h)):
        (x0, y0), (x1, y1) = h[k], h[(k + 1) % len(h)]
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside
