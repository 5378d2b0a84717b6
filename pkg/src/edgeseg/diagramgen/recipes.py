"""Parametric edge-diagram recipes with exactly known masks.

All geometry lives on the 32x32 coarse grid in pixel-centre coordinates
(x = column, y = row). A recipe is rasterised at 32x32 and then upscaled by
an integer factor, so the mask is always derived from the recipe itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..core import upscale_mask
from .cone import outline

GRID = 32


@dataclass
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    theta: float

    def local(self, x, y):
        dx, dy = np.asarray(x) - self.cx, np.asarray(y) - self.cy
        c, s = math.cos(self.theta), math.sin(self.theta)
        return dx * c + dy * s, -dx * s + dy * c

    def point(self, t):
        c, s = math.cos(self.theta), math.sin(self.theta)
        u, v = self.a * np.cos(t), self.b * np.sin(t)
        return self.cx + u * c - v * s, self.cy + u * s + v * c

    def half_extents(self) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return (math.sqrt((self.a * c) ** 2 + (self.b * s) ** 2),
                math.sqrt((self.a * s) ** 2 + (self.b * c) ** 2))

    def perimeter(self) -> float:
        return arc_length(self.a, self.b, 0.0, 2 * math.pi)


@dataclass
class PelvisArc:
    """Arc of an inner ellipse (0.6a x 0.35b) shifted ``offset`` along the minor axis."""
    offset: float
    t0: float
    t1: float


@dataclass
class Distractor:
    kind: str  # "line" | "arc" | "ellipse"
    params: list[float]


@dataclass
class DiagramRecipe:
    kind: str  # "kidney" | "lesion"
    ellipse: Ellipse
    gap_arcs: list[tuple[float, float]] = field(default_factory=list)
    pelvis: PelvisArc | None = None
    noise: list[tuple[int, int]] = field(default_factory=list)
    distractors: list[Distractor] = field(default_factory=list)

    @property
    def noise_count(self) -> int:
        return len(self.noise)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "DiagramRecipe":
        d = json.loads(line)
        return cls(
            kind=d["kind"],
            ellipse=Ellipse(**d["ellipse"]),
            gap_arcs=[tuple(g) for g in d["gap_arcs"]],
            pelvis=PelvisArc(**d["pelvis"]) if d["pelvis"] else None,
            noise=[tuple(p) for p in d["noise"]],
            distractors=[Distractor(**x) for x in d["distractors"]],
        )


@dataclass
class KidneyRecipeConfig:
    a_range: tuple[float, float] = (6.0, 13.0)
    b_ratio: tuple[float, float] = (0.45, 0.9)
    gap_count: tuple[int, int] = (1, 3)
    gap_fraction: tuple[float, float] = (0.05, 0.4)
    pelvis_span: tuple[float, float] = (0.6, 1.1)
    noise_max: int = 6
    attempts: int = 64


@dataclass
class LesionRecipeConfig:
    a_range: tuple[float, float] = (5.0, 14.0)
    b_ratio: tuple[float, float] = (0.5, 1.0)
    noise_max: int = 3
    p_distractors: float = 0.5
    max_distractors: int = 4


def write_recipes(path: str | Path, recipes) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in recipes))


def read_recipes(path: str | Path) -> list[DiagramRecipe]:
    return [DiagramRecipe.from_json(l) for l in Path(path).read_text().splitlines() if l.strip()]


# arc length helpers ------------------------------------------------------------

def _speed(a, b, t):
    return np.sqrt((a * np.sin(t)) ** 2 + (b * np.cos(t)) ** 2)


def arc_length(a: float, b: float, t0: float, t1: float, n: int = 4096) -> float:
    t = np.linspace(t0, t1, n + 1)
    return float(np.trapezoid(_speed(a, b, t), t))


def _arc_table(a: float, b: float, n: int = 4096):
    t = np.linspace(0.0, 2 * math.pi, n + 1)
    sp = _speed(a, b, t)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (sp[1:] + sp[:-1]) * np.diff(t))])
    return t, cum / cum[-1]


def _in_arcs(t: np.ndarray, arcs) -> np.ndarray:
    t = np.mod(t, 2 * math.pi)
    hit = np.zeros(t.shape, dtype=bool)
    for t0, t1 in arcs:
        t0, t1 = t0 % (2 * math.pi), t1 % (2 * math.pi)
        hit |= (t >= t0) & (t < t1) if t0 <= t1 else (t >= t0) | (t < t1)
    return hit


# rasterisation ----------------------------------------------------------------

def _pixel_centres(n: int = GRID):
    rr, cc = np.mgrid[0:n, 0:n].astype(float)
    return cc, rr


def fill_ellipse(e: Ellipse, n: int = GRID) -> np.ndarray:
    x, y = _pixel_centres(n)
    u, v = e.local(x, y)
    return (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0


def _draw_points(canvas: np.ndarray, xs, ys) -> None:
    c = np.round(np.asarray(xs)).astype(int)
    r = np.round(np.asarray(ys)).astype(int)
    ok = (r >= 0) & (r < canvas.shape[0]) & (c >= 0) & (c < canvas.shape[1])
    canvas[r[ok], c[ok]] = True


def _curve_samples(length: float) -> int:
    return max(int(math.ceil(length * 4)), 8)


def _pelvis_points(e: Ellipse, p: PelvisArc):
    inner = Ellipse(0.0, 0.0, 0.6 * e.a, 0.35 * e.b, e.theta)
    c, s = math.cos(e.theta), math.sin(e.theta)
    # minor-axis direction is (-sin, cos)
    inner.cx, inner.cy = e.cx - p.offset * s, e.cy + p.offset * c
    t1 = p.t1 if p.t1 > p.t0 else p.t1 + 2 * math.pi
    t = np.linspace(p.t0, t1, _curve_samples(arc_length(inner.a, inner.b, p.t0, t1)))
    return inner.point(t)


def _distractor_points(d: Distractor):
    q = d.params
    if d.kind == "line":
        x0, y0, x1, y1 = q
        t = np.linspace(0.0, 1.0, _curve_samples(math.hypot(x1 - x0, y1 - y0)))
        return x0 + t * (x1 - x0), y0 + t * (y1 - y0)
    if d.kind == "arc":
        cx, cy, r, t0, t1 = q
        t = np.linspace(t0, t1, _curve_samples(r * abs(t1 - t0)))
        return cx + r * np.cos(t), cy + r * np.sin(t)
    if d.kind == "ellipse":
        e = Ellipse(*q)
        t = np.linspace(0.0, 2 * math.pi, _curve_samples(e.perimeter()))
        return e.point(t)
    raise ValueError(f"unknown distractor kind {d.kind!r}")


def ellipse_outline(e: Ellipse, gaps=(), n: int = GRID) -> np.ndarray:
    """Boundary pixels of the filled ellipse, minus those whose angle falls in a gap."""
    mask = fill_ellipse(e, n)
    edge = outline(mask)
    if gaps:
        r, c = np.nonzero(edge)
        u, v = e.local(c.astype(float), r.astype(float))
        t = np.arctan2(v / e.b, u / e.a)
        drop = _in_arcs(t, gaps)
        edge[r[drop], c[drop]] = False
    return edge


def rasterize(recipe: DiagramRecipe, cone: np.ndarray | None = None,
              scale: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """(diagram, mask) at ``32 * scale`` pixels.

    The mask is the complete filled ellipse, gaps included.
    """
    if recipe.kind == "kidney" and cone is None:
        raise ValueError("kidney recipes need a cone")
    e = recipe.ellipse
    mask = fill_ellipse(e)
    diagram = ellipse_outline(e, recipe.gap_arcs)
    if cone is not None:
        diagram |= outline(cone)
    if recipe.pelvis is not None:
        _draw_points(diagram, *_pelvis_points(e, recipe.pelvis))
    for r, c in recipe.noise:
        diagram[r, c] = True
    for d in recipe.distractors:
        _draw_points(diagram, *_distractor_points(d))
    return upscale_mask(diagram, scale), upscale_mask(mask, scale)


# sampling ---------------------------------------------------------------------

def _sample_gaps(rng: np.random.Generator, e: Ellipse, cfg: KidneyRecipeConfig):
    k = int(rng.integers(cfg.gap_count[0], cfg.gap_count[1] + 1))
    while True:
        total = rng.uniform(*cfg.gap_fraction)
        parts = total * rng.dirichlet(np.ones(k))
        if np.all(parts < 0.9 / k):
            break
    t_tab, s_tab = _arc_table(e.a, e.b)
    offset = rng.uniform(0.0, 1.0)
    arcs = []
    for i, frac in enumerate(parts):
        # each gap sits inside its own 1/k slice of the perimeter, so gaps never overlap
        s0 = offset + i / k + rng.uniform(0.0, 1.0 / k - frac)
        s1 = s0 + frac
        t0 = float(np.interp(s0 % 1.0, s_tab, t_tab))
        t1 = float(np.interp(s1 % 1.0, s_tab, t_tab))
        arcs.append((t0, t1))
    return arcs


def gap_fraction(e: Ellipse, arcs) -> float:
    """Fraction of the perimeter (by arc length) covered by ``arcs``."""
    total = 0.0
    for t0, t1 in arcs:
        if t1 < t0:
            t1 += 2 * math.pi
        total += arc_length(e.a, e.b, t0, t1)
    return total / e.perimeter()


def _sample_noise(rng, mask: np.ndarray, edge: np.ndarray, count: int):
    r, c = np.nonzero(mask & ~edge)
    if r.size == 0 or count == 0:
        return []
    pick = rng.choice(r.size, size=min(count, r.size), replace=False)
    return sorted((int(r[i]), int(c[i])) for i in pick)


def sample_kidney_recipe(rng: np.random.Generator, cone: np.ndarray,
                         cfg: KidneyRecipeConfig | None = None) -> DiagramRecipe:
    """Ellipse inside the cone interior, with occluding gaps, pelvis arc and noise."""
    cfg = cfg or KidneyRecipeConfig()
    interior = np.asarray(cone, dtype=bool) & ~outline(cone)
    if not interior.any():
        raise ValueError("cone has no interior")
    # the ellipse contains a disc of radius b, so its centre must sit that deep
    depth = ndimage.distance_transform_edt(interior)
    theta = rng.uniform(0.0, math.pi)
    for _ in range(cfg.attempts):
        a = rng.uniform(*cfg.a_range)
        b = a * rng.uniform(*cfg.b_ratio)
        rows, cols = np.nonzero(depth >= b)
        if rows.size == 0:
            continue
        i = rng.integers(rows.size)
        e = Ellipse(float(cols[i] + rng.uniform(-0.5, 0.5)), float(rows[i] + rng.uniform(-0.5, 0.5)),
                    float(a), float(b), float(theta))
        mask = fill_ellipse(e)
        if mask.any() and not np.any(mask & ~interior):
            break
    else:
        raise ValueError(f"cone too small for an ellipse after {cfg.attempts} attempts")
    gaps = _sample_gaps(rng, e, cfg)
    span = rng.uniform(*cfg.pelvis_span)
    side = math.pi / 2 if rng.random() < 0.5 else -math.pi / 2
    pelvis = PelvisArc(offset=float(rng.uniform(-0.25, 0.25) * e.b),
                       t0=float(side - span), t1=float(side + span))
    noise = _sample_noise(rng, mask, outline(mask), int(rng.integers(0, cfg.noise_max + 1)))
    return DiagramRecipe("kidney", e, gaps, pelvis, noise, [])


def _sample_distractor(rng: np.random.Generator) -> Distractor:
    kind = ["line", "arc", "ellipse"][int(rng.integers(3))]
    if kind == "line":
        return Distractor(kind, [float(v) for v in rng.uniform(-8, GRID + 8, size=4)])
    if kind == "arc":
        t0 = rng.uniform(0, 2 * math.pi)
        return Distractor(kind, [float(rng.uniform(0, GRID)), float(rng.uniform(0, GRID)),
                                 float(rng.uniform(4, 20)), float(t0), float(t0 + rng.uniform(0.5, 2.5))])
    a = rng.uniform(1.5, 4.0)
    return Distractor(kind, [float(rng.uniform(0, GRID)), float(rng.uniform(0, GRID)),
                             float(a), float(a * rng.uniform(0.5, 1.0)), float(rng.uniform(0, math.pi))])


def sample_lesion_recipe(rng: np.random.Generator,
                         cfg: LesionRecipeConfig | None = None) -> DiagramRecipe:
    """Ellipse within the frame plus 0-4 ruler/hair/pen-mark distractors; no cone."""
    cfg = cfg or LesionRecipeConfig()
    a = rng.uniform(*cfg.a_range)
    b = a * rng.uniform(*cfg.b_ratio)
    theta = rng.uniform(0.0, math.pi)
    e = Ellipse(0.0, 0.0, float(a), float(b), float(theta))
    hx, hy = e.half_extents()
    e.cx = float(rng.uniform(hx, GRID - 1 - hx))
    e.cy = float(rng.uniform(hy, GRID - 1 - hy))
    mask = fill_ellipse(e)
    noise = _sample_noise(rng, mask, outline(mask), int(rng.integers(0, cfg.noise_max + 1)))
    distractors = []
    if cfg.p_distractors > 0 and rng.random() < cfg.p_distractors:
        n = int(rng.integers(1, cfg.max_distractors + 1))
        distractors = [_sample_distractor(rng) for _ in range(n)]
    return DiagramRecipe("lesion", e, [], None, noise, distractors)
