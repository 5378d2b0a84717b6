"""Building, training and applying the diagram-to-image GAN."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .fid import RandomConvEmbedder, compute_fid
from .losses import FORMS, adversarial_loss_logits, feature_matching_loss, total_generator_loss
from .networks import LocalEnhancer, MultiscaleDiscriminator

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "loss_D", "loss_G", "fm", "fid")


@dataclass
class GanConfig:
    base_channels: int = 16
    num_discriminators: int = 3
    lambda_fm: float = 10.0
    adv_loss_form: str = "log"
    lr: float = 2e-4
    adam_betas: tuple[float, float] = (0.5, 0.999)
    epochs: int = 10
    image_size: int = 64
    n_downsample: int = 2
    n_blocks: int = 3
    n_local_blocks: int = 1
    d_layers: int = 3
    batch_size: int = 1
    fid_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.num_discriminators < 1:
            raise ValueError("num_discriminators must be >= 1")
        if self.lambda_fm < 0:
            raise ValueError("lambda_fm must be >= 0")
        if self.adv_loss_form not in FORMS:
            raise ValueError(f"adv_loss_form must be one of {FORMS}")
        if self.image_size < 1 or self.image_size & (self.image_size - 1):
            raise ValueError(f"image_size must be a power of two, got {self.image_size}")
        if min(self.base_channels, self.epochs, self.batch_size, self.fid_dim, self.d_layers) < 1:
            raise ValueError("base_channels, epochs, batch_size, fid_dim and d_layers must be positive")
        if self.image_size < self.min_image_size:
            raise ValueError(f"image_size {self.image_size} too small for n_downsample={self.n_downsample}; "
                             f"need >= {self.min_image_size}")

    @property
    def min_image_size(self) -> int:
        # the global subnet runs at half size and its bottleneck must stay >= 2 px
        # for reflection padding; its 7x7 stem needs >= 4 px
        return max(8, 2 ** (self.n_downsample + 2))


@dataclass
class GanBundle:
    cfg: GanConfig
    generator: LocalEnhancer
    discriminator: MultiscaleDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    epoch: int = 0


@dataclass
class Checkpoint:
    epoch: int
    generator_state: dict
    fid: float
    losses: dict = field(default_factory=dict)


class DiscriminatorCollapse(RuntimeError):
    pass


def build_gan(cfg: GanConfig) -> GanBundle:
    torch.manual_seed(cfg.seed)
    g = LocalEnhancer(1, 1, cfg.base_channels, cfg.n_downsample, cfg.n_blocks, cfg.n_local_blocks)
    d = MultiscaleDiscriminator(2, cfg.base_channels, cfg.d_layers, cfg.num_discriminators)
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
    return GanBundle(cfg, g, d, opt_g, opt_d)


def _as_batch(arrays) -> torch.Tensor:
    return torch.from_numpy(np.stack([np.asarray(a, dtype=np.float32) for a in arrays]))[:, None]


def translate(bundle: GanBundle, diagram: np.ndarray) -> np.ndarray:
    """Deterministic generator forward pass; returns a float64 image in [0, 1]."""
    d = np.asarray(diagram)
    s = bundle.cfg.image_size
    if d.shape != (s, s):
        raise ValueError(f"diagram shape {d.shape} does not match image_size {s}")
    bundle.generator.eval()
    with torch.no_grad():
        out = bundle.generator(_as_batch([d]))
    return np.clip(out[0, 0].numpy().astype(np.float64), 0.0, 1.0)


def translate_batch(bundle: GanBundle, diagrams) -> np.ndarray:
    # one diagram at a time so results do not depend on batch composition
    return np.stack([translate(bundle, d) for d in diagrams])


def _step_losses(bundle: GanBundle, z: torch.Tensor, x: torch.Tensor):
    cfg = bundle.cfg
    fake = bundle.generator(z)
    real_pair = torch.cat([z, x], 1)
    fake_pair = torch.cat([z, fake], 1)
    out_real = bundle.discriminator(real_pair)
    out_fake_d = bundle.discriminator(fake_pair.detach())
    out_fake_g = bundle.discriminator(fake_pair)
    loss_d, adv_g, fm = 0.0, [], []
    for fr, fd, fg in zip(out_real, out_fake_d, out_fake_g):
        ld, _ = adversarial_loss_logits(fr[-1], fd[-1], cfg.adv_loss_form)
        _, lg = adversarial_loss_logits(fr[-1].detach(), fg[-1], cfg.adv_loss_form)
        loss_d = loss_d + ld
        adv_g.append(lg)
        fm.append(feature_matching_loss([f.detach() for f in fr[:-1]], fg[:-1]))
    loss_g = total_generator_loss(adv_g, fm, cfg.lambda_fm)
    return loss_d, loss_g, sum(fm)


def _fid(bundle, extractor, diagrams, real_feats) -> float:
    return compute_fid(extractor.features(translate_batch(bundle, diagrams)), real_feats)


def train_gan(pairs, cfg: GanConfig, rng: np.random.Generator, out_dir=None, collapse_eps: float = 1e-6):
    """Adversarial training with per-epoch FID checkpoints.

    ``pairs`` is a sequence of (diagram, image) arrays at ``image_size``.
    20% of the pairs are held out for FID. Returns ``(bundle, checkpoints,
    log_rows)``; log row 0 holds the FID of the untrained generator.
    """
    if len(pairs) < 8:
        raise ValueError(f"need at least 8 pairs, got {len(pairs)}")
    s = cfg.image_size
    for i, (d, x) in enumerate(pairs):
        if np.shape(d) != (s, s) or np.shape(x) != (s, s):
            raise ValueError(f"pair {i} shapes {np.shape(d)}, {np.shape(x)} do not match image_size {s}")
    order = rng.permutation(len(pairs))
    n_val = max(1, int(round(0.2 * len(pairs))))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if n_val < cfg.fid_dim + 1:
        raise ValueError(f"{n_val} validation pairs cannot support FID with fid_dim={cfg.fid_dim}")
    val_d = [pairs[i][0] for i in val_idx]
    z_all = _as_batch([pairs[i][0] for i in train_idx])
    x_all = _as_batch([pairs[i][1] for i in train_idx])

    bundle = build_gan(cfg)
    extractor = RandomConvEmbedder(cfg.fid_dim, seed=cfg.seed)
    real_feats = extractor.features([pairs[i][1] for i in val_idx])
    rows = [{"epoch": 0, "loss_D": float("nan"), "loss_G": float("nan"), "fm": float("nan"),
             "fid": _fid(bundle, extractor, val_d, real_feats)}]
    checkpoints: list[Checkpoint] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    low_d = 0
    for epoch in range(1, cfg.epochs + 1):
        bundle.generator.train()
        bundle.discriminator.train()
        perm = rng.permutation(len(train_idx))
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, len(perm), cfg.batch_size):
            b = torch.from_numpy(perm[start:start + cfg.batch_size])
            loss_d, loss_g, fm = _step_losses(bundle, z_all[b], x_all[b])
            bundle.opt_g.zero_grad()
            loss_g.backward()
            bundle.opt_g.step()
            bundle.opt_d.zero_grad()
            loss_d.backward()
            bundle.opt_d.step()
            sums += [loss_d.item(), loss_g.item(), fm.item()]
            n_batches += 1
        bundle.epoch = epoch
        m = sums / n_batches
        fid = _fid(bundle, extractor, val_d, real_feats)
        row = {"epoch": epoch, "loss_D": float(m[0]), "loss_G": float(m[1]), "fm": float(m[2]), "fid": fid}
        rows.append(row)
        ck = Checkpoint(epoch, copy.deepcopy(bundle.generator.state_dict()), fid,
                        {k: row[k] for k in ("loss_D", "loss_G", "fm")})
        checkpoints.append(ck)
        log.info("gan epoch %d loss_D=%.4f loss_G=%.4f fm=%.4f fid=%.4f", epoch, *m, fid)
        if out is not None:
            save_checkpoint(out / f"ckpt_epoch{epoch:03d}.pt", cfg, ck)
            write_log(out / "gan_log.tsv", rows)
        low_d = low_d + 1 if m[0] < collapse_eps else 0
        if low_d >= 3:
            raise DiscriminatorCollapse(f"loss_D below {collapse_eps} for 3 consecutive epochs (epoch {epoch})")
    return bundle, checkpoints, rows


def select_checkpoint(checkpoints, val_diagrams=None, real_val_images=None, extractor=None, bundle=None) -> int:
    """Epoch with the lowest FID; ties go to the earliest epoch.

    If validation data, an extractor and a bundle are given, FIDs are
    recomputed by loading each snapshot; otherwise the stored values are used.
    """
    if not checkpoints:
        raise ValueError("no checkpoints")
    recompute = val_diagrams is not None and real_val_images is not None
    if recompute and (extractor is None or bundle is None):
        raise ValueError("recomputing FID needs both an extractor and a bundle")
    scored = []
    for ck in checkpoints:
        fid = ck.fid
        if recompute:
            bundle.generator.load_state_dict(ck.generator_state)
            fid = compute_fid(extractor.features(translate_batch(bundle, val_diagrams)),
                              extractor.features(real_val_images))
        scored.append((fid, ck.epoch))
    return min(scored)[1]


def load_generator(bundle: GanBundle, ck: Checkpoint) -> GanBundle:
    bundle.generator.load_state_dict(ck.generator_state)
    bundle.epoch = ck.epoch
    bundle.generator.eval()
    return bundle


def save_checkpoint(path, cfg: GanConfig, ck: Checkpoint) -> None:
    torch.save({"config": asdict(cfg), "epoch": ck.epoch, "fid": ck.fid, "losses": ck.losses,
                "generator": ck.generator_state}, path)


def load_checkpoint(path) -> tuple[GanBundle, Checkpoint]:
    blob = torch.load(path, weights_only=False)
    cfg = GanConfig(**blob["config"])
    ck = Checkpoint(blob["epoch"], blob["generator"], blob["fid"], blob["losses"])
    return load_generator(build_gan(cfg), ck), ck


def write_log(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(LOG_FIELDS) + "\n")
        for r in rows:
            fh.write("\t".join(repr(r[k]) if k != "epoch" else str(r[k]) for k in LOG_FIELDS) + "\n")


def read_log(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != LOG_FIELDS:
        raise ValueError(f"{path}: not a GAN training log")
    rows = []
    for line in lines[1:]:
        vals = line.split("\t")
        rows.append({k: int(v) if k == "epoch" else float(v) for k, v in zip(LOG_FIELDS, vals)})
    return rows
