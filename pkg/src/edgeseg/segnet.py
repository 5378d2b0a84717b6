"""U-net segmenter: loss, augmentation, training, fine-tuning and inference."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy import ndimage
from torch import nn
from torch.nn import functional as F

from .core import check_image, check_mask

log = logging.getLogger(__name__)

PROFILES = ("kidney", "skin")


@dataclass
class SegConfig:
    depth: int = 3
    base_channels: int = 16
    batch_size: int = 1
    lr: float = 1e-4
    epochs: int = 10
    aug_profile: str = "kidney"
    threshold: float = 0.5
    dice_eps: float = 1e-6
    val_fraction: float = 0.1
    finetune_epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.dice_eps <= 0:
            raise ValueError("dice_eps must be > 0")
        if self.aug_profile not in PROFILES:
            raise ValueError(f"aug_profile must be one of {PROFILES}")
        if min(self.base_channels, self.batch_size) < 1 or self.lr <= 0:
            raise ValueError("base_channels, batch_size and lr must be positive")
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")


# loss -------------------------------------------------------------------------

def _dice_term(p: torch.Tensor, t: torch.Tensor, eps: float) -> torch.Tensor:
    dims = tuple(range(1, p.ndim)) if p.ndim > 2 else tuple(range(p.ndim))
    inter = (p * t).sum(dims)
    soft = (2 * inter + eps) / (p.sum(dims) + t.sum(dims) + eps)
    return 1 - soft.mean()


def bce_dice_terms(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-6):
    """``(bce, dice_term)`` for probabilities ``pred``; total loss is their sum.

    Inputs with 3+ dims are treated as batches: soft Dice is computed per
    sample and averaged, BCE is a mean over every pixel.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if torch.any(pred <= 0) or torch.any(pred >= 1):
        raise ValueError("predictions must lie strictly inside (0, 1)")
    target = target.to(pred.dtype)
    bce = -(target * torch.log(pred) + (1 - target) * torch.log1p(-pred)).mean()
    return bce, _dice_term(pred, target, eps)


def bce_dice_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Mean pixel BCE plus (1 - soft Dice)."""
    bce, dice = bce_dice_terms(pred, target, eps)
    return bce + dice


def bce_dice_terms_logits(logits: torch.Tensor, target: torch.Tensor, eps: float = 1e-6):
    """Same terms as :func:`bce_dice_terms`, computed stably from logits."""
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(target.shape)}")
    target = target.to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, target)
    return bce, _dice_term(torch.sigmoid(logits), target, eps)


# augmentation -----------------------------------------------------------------

@dataclass(frozen=True)
class AugParams:
    hflip: bool = False
    vflip: bool = False
    rot90: int = 0        # quarter turns counter-clockwise
    dx: int = 0           # columns, positive moves content right
    dy: int = 0           # rows, positive moves content down
    blur_sigma: float = 0.0


def max_translation(width: int) -> int:
    return int(round(0.1 * width))


def sample_aug_params(profile: str, shape: tuple[int, int], rng: np.random.Generator) -> AugParams:
    H, W = shape
    if profile == "kidney":
        t = max_translation(W)
        return AugParams(hflip=bool(rng.random() < 0.5),
                         dx=int(rng.integers(-t, t + 1)), dy=int(rng.integers(-t, t + 1)))
    if profile == "skin":
        if H != W:
            raise ValueError("skin profile rotates by quarter turns and needs square images")
        return AugParams(hflip=bool(rng.random() < 0.5), vflip=bool(rng.random() < 0.5),
                         rot90=int(rng.choice([0, 1, 3])),
                         blur_sigma=float(rng.uniform(0.0, 5.0 * W / 256)))
    raise ValueError(f"unknown augmentation profile {profile!r}")


def _shift(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(a)
    H, W = a.shape
    if abs(dy) >= H or abs(dx) >= W:
        return out
    src = a[max(0, -dy):H - max(0, dy), max(0, -dx):W - max(0, dx)]
    out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return out


def apply_geometry(a: np.ndarray, p: AugParams) -> np.ndarray:
    """Geometric part of an augmentation; identical for images and masks."""
    if p.hflip:
        a = a[:, ::-1]
    if p.vflip:
        a = a[::-1, :]
    if p.rot90:
        a = np.rot90(a, p.rot90)
    if p.dx or p.dy:
        a = _shift(a, p.dy, p.dx)
    return np.ascontiguousarray(a)


def apply_aug(img: np.ndarray, mask: np.ndarray, p: AugParams) -> tuple[np.ndarray, np.ndarray]:
    img2 = apply_geometry(img, p)
    if p.blur_sigma > 0:
        img2 = ndimage.gaussian_filter(img2, p.blur_sigma, mode="nearest")
    return img2, apply_geometry(mask, p)


def augment(img: np.ndarray, mask: np.ndarray, profile: str, rng: np.random.Generator):
    """Random label-consistent augmentation of an (image, mask) pair.

    Translations are bounded by 10% of the width and zero-filled; the
    blur (skin profile only) touches the image alone.
    """
    img = check_image(img)
    mask = check_mask(mask)
    if img.shape != mask.shape:
        raise ValueError(f"image {img.shape} and mask {mask.shape} differ")
    return apply_aug(img, mask, sample_aug_params(profile, img.shape, rng))


# network ----------------------------------------------------------------------

def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(True),
                         nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(True))


class UNet(nn.Module):
    """Encoder/decoder with skip connections; returns per-pixel logits."""

    def __init__(self, depth: int = 3, base: int = 16):
        super().__init__()
        chans = [base * 2 ** i for i in range(depth)]
        self.down = nn.ModuleList()
        cin = 1
        for c in chans:
            self.down.append(_double_conv(cin, c))
            cin = c
        self.up = nn.ModuleList()
        self.merge = nn.ModuleList()
        for c in reversed(chans[:-1]):
            self.up.append(nn.ConvTranspose2d(2 * c, c, 2, 2))
            self.merge.append(_double_conv(2 * c, c))
        self.head = nn.Conv2d(chans[0], 1, 1)
        self.depth = depth

    def forward(self, x):
        skips = []
        for i, block in enumerate(self.down):
            x = block(x)
            if i < self.depth - 1:
                skips.append(x)
                x = F.max_pool2d(x, 2)
        for up, merge in zip(self.up, self.merge):
            x = merge(torch.cat([skips.pop(), up(x)], 1))
        return self.head(x)


@dataclass
class SegModel:
    net: UNet
    cfg: SegConfig
    mean: float = 0.0
    std: float = 1.0
    log: list[dict] = field(default_factory=list)

    def _input(self, imgs) -> torch.Tensor:
        x = np.stack([np.asarray(i, dtype=np.float64) for i in imgs])
        return torch.from_numpy(((x - self.mean) / self.std).astype(np.float32))[:, None]

    def logits(self, img: np.ndarray) -> np.ndarray:
        img = check_image(img)
        m = 2 ** (self.cfg.depth - 1)
        if img.shape[0] % m or img.shape[1] % m:
            raise ValueError(f"image dims {img.shape} must be multiples of {m} for depth {self.cfg.depth}")
        self.net.eval()
        with torch.no_grad():
            return self.net(self._input([img]))[0, 0].numpy().astype(np.float64)

    def prob(self, img: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits(img)))


def build_segmenter(cfg: SegConfig, mean: float = 0.0, std: float = 1.0) -> SegModel:
    torch.manual_seed(cfg.seed)
    return SegModel(UNet(cfg.depth, cfg.base_channels), cfg, float(mean), float(std))


def predict(model: SegModel, img: np.ndarray, threshold: float | None = None) -> np.ndarray:
    """Mask of pixels whose probability exceeds ``threshold``.

    The comparison is made in logit space, so threshold 0 sets every pixel
    and threshold 1 clears every pixel regardless of float saturation.
    """
    thr = model.cfg.threshold if threshold is None else float(threshold)
    if not 0 <= thr <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    z = model.logits(img)
    if thr == 0:
        return np.ones(z.shape, dtype=bool)
    if thr == 1:
        return np.zeros(z.shape, dtype=bool)
    return z > np.log(thr / (1 - thr))


def dice_score(pred: np.ndarray, target: np.ndarray) -> float:
    """Hard Dice; two empty masks agree perfectly."""
    s = pred.sum() + target.sum()
    return 1.0 if s == 0 else float(2 * np.logical_and(pred, target).sum() / s)


def mean_dice(model: SegModel, pairs) -> float:
    return float(np.mean([dice_score(predict(model, x), m) for x, m in pairs]))


def _fit(model: SegModel, train, val, epochs: int, lr: float, rng: np.random.Generator,
         stage: str) -> SegModel:
    """Shared optimisation loop; returns the best-validation snapshot.

    The starting weights count as candidate epoch 0; ties keep the earlier one.
    """
    cfg = model.cfg
    opt = torch.optim.Adam(model.net.parameters(), lr=lr)
    best_dice = mean_dice(model, val)
    best_state, best_epoch = copy.deepcopy(model.net.state_dict()), 0
    # epoch 0 is the starting point: no training loss yet
    model.log.append({"stage": stage, "epoch": 0, "loss": None, "bce": None,
                      "dice_term": None, "val_dice": best_dice})
    for epoch in range(1, epochs + 1):
        model.net.train()
        order = rng.permutation(len(train))
        sums = np.zeros(2)
        for start in range(0, len(order), cfg.batch_size):
            xs, ms = [], []
            for i in order[start:start + cfg.batch_size]:
                x, m = apply_aug(*train[i], sample_aug_params(cfg.aug_profile, train[i][0].shape, rng))
                xs.append(x)
                ms.append(m)
            logits = model.net(model._input(xs))
            target = torch.from_numpy(np.stack(ms).astype(np.float32))[:, None]
            bce, dice = bce_dice_terms_logits(logits, target, cfg.dice_eps)
            loss = bce + dice
            if not torch.isfinite(loss):
                raise FloatingPointError(f"{stage}: non-finite loss at epoch {epoch} "
                                         f"(bce={bce.item()}, dice_term={dice.item()})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += [bce.item() * len(xs), dice.item() * len(xs)]
        bce_m, dice_m = sums / len(train)
        vd = mean_dice(model, val)
        model.log.append({"stage": stage, "epoch": epoch, "loss": float(bce_m + dice_m), "bce": float(bce_m),
                          "dice_term": float(dice_m), "val_dice": vd})
        log.info("%s epoch %d loss=%.4f val_dice=%.4f", stage, epoch, bce_m + dice_m, vd)
        if vd > best_dice:
            best_dice, best_epoch = vd, epoch
            best_state = copy.deepcopy(model.net.state_dict())
    model.net.load_state_dict(best_state)
    model.net.eval()
    model.log.append({"stage": stage, "epoch": -1, "best_epoch": best_epoch, "val_dice": best_dice})
    return model


def _check_pairs(pairs, what: str):
    out = []
    for i, (x, m) in enumerate(pairs):
        x, m = check_image(x), check_mask(m)
        if x.shape != m.shape:
            raise ValueError(f"{what} pair {i}: image {x.shape} and mask {m.shape} differ")
        out.append((x, m))
    return out


def train_segmenter(pairs, cfg: SegConfig, rng: np.random.Generator, val_pairs=None) -> SegModel:
    """Train a fresh U-net; without ``val_pairs`` a ``val_fraction`` split of ``pairs`` is held out."""
    pairs = _check_pairs(pairs, "training")
    if len(pairs) < 10:
        raise ValueError(f"need at least 10 training pairs, got {len(pairs)}")
    if val_pairs is None:
        order = rng.permutation(len(pairs))
        n_val = max(1, int(round(cfg.val_fraction * len(pairs))))
        val = [pairs[i] for i in order[:n_val]]
        train = [pairs[i] for i in order[n_val:]]
    else:
        train, val = pairs, _check_pairs(val_pairs, "validation")
    imgs = np.stack([x for x, _ in train])
    std = float(imgs.std())
    model = build_segmenter(cfg, imgs.mean(), std if std > 0 else 1.0)
    return _fit(model, train, val, cfg.epochs, cfg.lr, rng, "train")


def fine_tune(model: SegModel, labelled, cfg: SegConfig | None = None, rng: np.random.Generator | None = None,
              val_pairs=None, labelled_ids=(), eval_ids=(), epochs: int | None = None) -> SegModel:
    """Continue training on a small real labelled set at a tenth of the learning rate.

    Returns a new model; the input model is left untouched. Without
    ``val_pairs`` the snapshot is chosen on the labelled set itself.
    """
    overlap = set(labelled_ids) & set(eval_ids)
    if overlap:
        raise ValueError(f"fine-tune ids overlap evaluation ids: {sorted(overlap)[:5]}")
    cfg = cfg or model.cfg
    labelled = _check_pairs(labelled, "fine-tune")
    if not labelled:
        raise ValueError("need at least one labelled pair")
    epochs = cfg.finetune_epochs if epochs is None else epochs
    tuned = SegModel(copy.deepcopy(model.net), model.cfg, model.mean, model.std, list(model.log))
    if epochs == 0:
        return tuned
    rng = rng or np.random.default_rng(cfg.seed)
    val = labelled if val_pairs is None else _check_pairs(val_pairs, "validation")
    return _fit(tuned, labelled, val, epochs, cfg.lr / 10, rng, "finetune")


def save_segmenter(path, model: SegModel) -> None:
    torch.save({"config": asdict(model.cfg), "mean": model.mean, "std": model.std,
                "state": model.net.state_dict(), "log": model.log}, path)


def load_segmenter(path) -> SegModel:
    blob = torch.load(path, weights_only=False)
    cfg = SegConfig(**blob["config"])
    model = SegModel(UNet(cfg.depth, cfg.base_channels), cfg, blob["mean"], blob["std"], blob["log"])
    model.net.load_state_dict(blob["state"])
    model.net.eval()
    return model
