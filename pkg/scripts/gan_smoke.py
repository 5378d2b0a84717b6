"""GAN smoke experiment: 8x8 outline -> blurred filled ellipse, 200 steps on CPU.

    python scripts/gan_smoke.py [--epochs 10] [--pairs 100] [--seed 7] [--out runs/gan-smoke]

Prints held-out L1 and FID per epoch.
"""

import argparse
from pathlib import Path

import numpy as np

from edgeseg.gan import GanConfig, build_gan, train_gan, translate
from edgeseg.gan.training import load_generator
from edgeseg.toy import gan_smoke_pairs


def held_out_l1(bundle, pairs) -> float:
    return float(np.mean([np.abs(translate(bundle, d) - x).mean() for d, x in pairs]))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--pairs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="runs/gan-smoke")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    pairs = gan_smoke_pairs(rng, args.pairs)
    held_out = gan_smoke_pairs(rng, 50)
    cfg = GanConfig(image_size=8, base_channels=8, n_downsample=1, n_blocks=1, d_layers=1,
                    batch_size=4, fid_dim=8, epochs=args.epochs, seed=args.seed)
    bundle = build_gan(cfg)
    print(f"epoch 0: L1 {held_out_l1(bundle, held_out):.4f}")
    bundle, cks, rows = train_gan(pairs, cfg, rng, Path(args.out))
    for ck, row in zip(cks, rows[1:]):
        load_generator(bundle, ck)
        print(f"epoch {ck.epoch}: L1 {held_out_l1(bundle, held_out):.4f}  FID {row['fid']:.4f}  "
              f"loss_D {row['loss_D']:.3f}  loss_G {row['loss_G']:.3f}")
    print(f"FID epoch 0 {rows[0]['fid']:.4f} -> final {rows[-1]['fid']:.4f}; checkpoints in {args.out}")


if __name__ == "__main__":
    main()
