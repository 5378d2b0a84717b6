"""Ground-truth extraction from outline-annotated images, with debug panels.

    python scripts/mask_panels.py [--n 10] [--seed 0] [--out runs/mask-panels]

Draws synthetic annotated/original pairs, extracts masks, writes the
intermediate panels per case and prints IoU against the analytic ellipse.
"""

import argparse
from pathlib import Path

import numpy as np

from edgeseg import core
from edgeseg.maskextract import extract_gt_mask, write_panels
from edgeseg.toy import annotated_pair


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--out", default="runs/mask-panels")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    ious = []
    for k in range(args.n):
        ann, orig, blob = annotated_pair(rng, args.size)
        panels = {}
        mask = extract_gt_mask(ann, orig, panels=panels)
        truth = blob.mask(args.size)
        iou = (mask & truth).sum() / (mask | truth).sum()
        ious.append(iou)
        name = f"case{k:03d}"
        core.write_image(out / f"{name}_annotated.png", ann)
        write_panels(out, name, panels)
        print(f"{name}: IoU {iou:.3f}")
    print(f"mean IoU {np.mean(ious):.3f}, min {np.min(ious):.3f}; panels in {out}")


if __name__ == "__main__":
    main()
