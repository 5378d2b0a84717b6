"""Pixel confusion counts, per-image scores and dataset-level reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import check_mask

METRICS = ("f1", "specificity", "sensitivity", "miou", "th_miou", "pacc")
TAU = 0.65


def confusion(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) pixel counts."""
    p, g = check_mask(pred), check_mask(gt)
    if p.shape != g.shape:
        raise ValueError(f"mask dims differ: {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, p.size - tp - fp - fn, fn


def _ratio(num: int, den: int) -> float:
    # a zero denominator means both sets involved are empty: perfect agreement
    return 1.0 if den == 0 else num / den


def image_metrics(counts) -> dict[str, float]:
    tp, fp, tn, fn = (int(c) for c in counts)
    total = tp + fp + tn + fn
    if total <= 0:
        raise ValueError("counts must describe at least one pixel")
    return {
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
        "specificity": _ratio(tn, tn + fp),
        "sensitivity": _ratio(tp, tp + fn),
        "iou": _ratio(tp, tp + fp + fn),
        "pacc": (tp + tn) / total,
    }


def th_mean_iou(ious, tau: float = TAU) -> float:
    """Mean IoU after zeroing every per-image score below ``tau``."""
    v = np.asarray(ious, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no IoU values")
    if np.any(v < 0) or np.any(v > 1):
        raise ValueError("IoU values must lie in [0, 1]")
    return float(np.where(v >= tau, v, 0.0).mean())


@dataclass
class MetricsReport:
    per_image: list[dict] = field(default_factory=list)
    aggregates: dict[str, tuple[float, float]] = field(default_factory=dict)

    def table(self, title: str = "") -> str:
        """Human-readable table, each cell as mean (population sd)."""
        head = "  ".join(f"{m:>13}" for m in METRICS)
        body = "  ".join(f"{self.aggregates[m][0]:.3f} ({self.aggregates[m][1]:.3f})".rjust(13) for m in METRICS)
        lines = [title] if title else []
        lines += [f"n={len(self.per_image)} images; cells are mean (population sd)", head, body]
        return "\n".join(lines) + "\n"

    def records(self) -> str:
        """One JSON object per line: per-image rows, then a single aggregate row."""
        lines = [json.dumps({"kind": "image", **r}, sort_keys=True) for r in self.per_image]
        agg = {m: {"mean": v[0], "sd": v[1]} for m, v in self.aggregates.items()}
        lines.append(json.dumps({"kind": "aggregate", **agg}, sort_keys=True))
        return "\n".join(lines) + "\n"


def evaluate_dataset(preds: dict, gts: dict, tau: float = TAU) -> MetricsReport:
    """Per-image metrics and mean / population-sd aggregates over matching ids."""
    if set(preds) != set(gts):
        missing = sorted(set(preds) ^ set(gts))
        raise ValueError(f"prediction and ground-truth ids differ (e.g. {missing[:5]})")
    if not preds:
        raise ValueError("nothing to evaluate")
    rows = []
    for sid in sorted(preds):
        c = confusion(preds[sid], gts[sid])
        rows.append({"id": sid, "tp": c[0], "fp": c[1], "tn": c[2], "fn": c[3], **image_metrics(c)})
    ious = np.array([r["iou"] for r in rows])
    cols = {
        "f1": np.array([r["f1"] for r in rows]),
        "specificity": np.array([r["specificity"] for r in rows]),
        "sensitivity": np.array([r["sensitivity"] for r in rows]),
        "miou": ious,
        "th_miou": np.where(ious >= tau, ious, 0.0),
        "pacc": np.array([r["pacc"] for r in rows]),
    }
    agg = {k: (float(v.mean()), float(v.std())) for k, v in cols.items()}
    return MetricsReport(rows, agg)
