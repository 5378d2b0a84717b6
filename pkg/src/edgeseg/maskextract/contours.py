"""Border following (Suzuki-Abe) and Teh-Chin dominant-point approximation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 8-neighbourhood as (drow, dcol), clockwise on screen (rows grow downward)
_DIRS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
_DIR_INDEX = {d: k for k, d in enumerate(_DIRS)}


@dataclass
class Contour:
    """Closed polygon of integer (x, y) = (col, row) points."""
    points: np.ndarray
    level: int = 0
    is_outer: bool = True

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return len(self.points)


def _trace(f: np.ndarray, i: int, j: int, i2: int, j2: int, nbd: int) -> list[tuple[int, int]]:
    """Follow one border starting at (i, j) with (i2, j2) its known 0-neighbour.

    Marks visited pixels in ``f`` as in the original algorithm and returns
    the border as (row, col) points in the padded frame.
    """
    start = _DIR_INDEX[(i2 - i, j2 - j)]
    # 3.1: clockwise search for the first non-zero neighbour
    found = None
    for s in range(8):
        k = (start + s) % 8
        di, dj = _DIRS[k]
        if f[i + di, j + dj] != 0:
            found = (i + di, j + dj)
            break
    if found is None:
        f[i, j] = -nbd
        return [(i, j)]
    i1, j1 = found
    i2, j2 = i1, j1
    i3, j3 = i, j
    pts = []
    while True:
        pts.append((i3, j3))
        # 3.3: counter-clockwise search starting after (i2, j2)
        k = _DIR_INDEX[(i2 - i3, j2 - j3)]
        east_zero = False
        for _ in range(8):
            k = (k - 1) % 8
            di, dj = _DIRS[k]
            if f[i3 + di, j3 + dj] != 0:
                i4, j4 = i3 + di, j3 + dj
                break
            if k == 0:
                east_zero = True
        # 3.4
        if east_zero:
            f[i3, j3] = -nbd
        elif f[i3, j3] == 1:
            f[i3, j3] = nbd
        # 3.5
        if (i4, j4) == (i, j) and (i3, j3) == (i1, j1):
            return pts
        i2, j2 = i3, j3
        i3, j3 = i4, j4


def trace_borders(mask: np.ndarray) -> list[Contour]:
    """All borders (outer and hole) of the foreground, in raster discovery order.

    Foreground is 8-connected and background 4-connected. ``level`` is the
    depth of the border in the nesting tree: outer borders of top-level
    components have level 0, their holes level 1, components inside those
    holes level 2, and so on.
    """
    m = np.asarray(mask, dtype=bool)
    f = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=np.int64)
    f[1:-1, 1:-1] = m
    # border 1 is the frame (a hole border); parents/outer flags indexed by NBD
    is_outer = {1: False}
    parents = {1: 1}
    depth = {1: -1}
    nbd = 1
    out = []
    for i in range(1, f.shape[0] - 1):
        lnbd = 1
        for j in np.flatnonzero(f[i]):
            j = int(j)
            v = f[i, j]
            if v == 1 and f[i, j - 1] == 0:
                nbd += 1
                outer, start = True, (i, j - 1)
            elif v >= 1 and f[i, j + 1] == 0:
                nbd += 1
                outer, start = False, (i, j + 1)
                if v > 1:
                    lnbd = v
            else:
                if f[i, j] != 1:
                    lnbd = abs(f[i, j])
                continue
            # parent per the border-type table
            parent = lnbd if outer != is_outer[lnbd] else parents[lnbd]
            parents[nbd] = parent
            is_outer[nbd] = outer
            depth[nbd] = depth[parent] + 1
            pts = _trace(f, i, j, start[0], start[1], nbd)
            xy = np.array([(c - 1, r - 1) for r, c in pts], dtype=np.int64)
            out.append(Contour(xy, depth[nbd], outer))
            if f[i, j] != 1:
                lnbd = abs(f[i, j])
    return out


# Teh-Chin ---------------------------------------------------------------------

def _support_and_cos(p: np.ndarray):
    n = len(p)
    kmax = max(1, (n - 1) // 2)
    region = np.ones(n, dtype=int)
    cosv = np.empty(n)
    for i in range(n):
        def chord(k):
            a, b = p[(i - k) % n], p[(i + k) % n]
            ab = b - a
            length = float(np.hypot(*ab))
            # signed distance of p_i from the chord a->b
            d = float(ab[0] * (p[i][1] - a[1]) - ab[1] * (p[i][0] - a[0])) / length if length else 0.0
            return length, d
        k = 1
        l1, d1 = chord(1)
        while k < kmax:
            l2, d2 = chord(k + 1)
            if l1 >= l2:
                break
            if d1 > 0 and d1 / l1 >= d2 / l2:
                break
            if d1 < 0 and d1 / l1 <= d2 / l2:
                break
            k, l1, d1 = k + 1, l2, d2
        region[i] = k
        u = p[(i - k) % n] - p[i]
        v = p[(i + k) % n] - p[i]
        cosv[i] = float(u @ v) / (np.hypot(*u) * np.hypot(*v))
    return region, cosv


def teh_chin(points: np.ndarray, straight_tol: float = 1e-9) -> np.ndarray:
    """Dominant points of a closed digital curve (k-cosine significance).

    1. region of support per point from chord length / deviation ratios;
    2. non-maximum suppression of k-cosine within half the support;
    3. removal of straight points (k-cosine = -1);
    4. of two chain-adjacent survivors with unit support, the weaker is dropped.
    """
    p = np.asarray(points, dtype=np.int64)
    # chains that revisit pixels (1-px spurs) are returned unapproximated
    if len(p) < 5 or len(np.unique(p, axis=0)) < len(p):
        return p
    n = len(p)
    region, cosv = _support_and_cos(p)
    keep = []
    for i in range(n):
        h = region[i] // 2
        if all(cosv[(i + s) % n] <= cosv[i] for s in range(-h, h + 1) if s):
            keep.append(i)
    keep = [i for i in keep if cosv[i] > -1 + straight_tol]
    if len(keep) > 2:
        drop = set()
        for a, b in zip(keep, keep[1:] + keep[:1]):
            if (b - a) % n == 1 and region[a] == 1 and region[b] == 1 and a not in drop and b not in drop:
                drop.add(a if cosv[a] < cosv[b] else b)
        keep = [i for i in keep if i not in drop]
    if len(keep) < 3:
        return p
    return p[keep]


def find_contours(fg: np.ndarray, approx: str = "teh_chin", min_points: int = 3) -> list[Contour]:
    """Outer borders of the 8-connected foreground components of ``fg``.

    Components nested inside holes are reported too. Chains with fewer than
    ``min_points`` distinct pixels (1- and 2-pixel specks) are dropped.
    """
    if approx not in ("none", "teh_chin"):
        raise ValueError(f"unknown approximation {approx!r}")
    out = []
    for c in trace_borders(fg):
        if not c.is_outer or len(np.unique(c.points, axis=0)) < min_points:
            continue
        if approx == "teh_chin":
            c = Contour(teh_chin(c.points), c.level // 2, True)
        else:
            c = Contour(c.points, c.level // 2, True)
        out.append(c)
    return out


def polygon_area(points: np.ndarray) -> float:
    """Shoelace area of a closed polygon."""
    p = np.asarray(points, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def filter_contours(contours, min_area: float = 25.0) -> list[Contour]:
    return [c for c in contours if polygon_area(c.points) >= min_area]
