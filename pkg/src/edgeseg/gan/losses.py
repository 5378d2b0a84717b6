"""Adversarial, feature-matching and combined generator objectives.

All functions are plain torch expressions so they work in float64 for
gradient checks and in float32 during training.
"""

from __future__ import annotations

import torch
from torch.nn import functional as F

FORMS = ("log", "least_squares")


def adversarial_loss(d_real: torch.Tensor, d_fake: torch.Tensor, form: str = "log"):
    """Return ``(loss_D, loss_G)`` for one discriminator's per-patch scores.

    log form takes probabilities in (0, 1):
        loss_D = -E[log D(x)] - E[log(1 - D(G(z)))]
        loss_G = -E[log D(G(z))]            (non-saturating generator loss)
    least_squares form takes raw scores:
        loss_D = E[(D(x) - 1)^2] + E[D(G(z))^2]
        loss_G = E[(D(G(z)) - 1)^2]
    """
    if form == "log":
        for name, t in (("real", d_real), ("fake", d_fake)):
            if torch.any(t <= 0) or torch.any(t >= 1):
                raise ValueError(f"{name} scores must lie strictly inside (0, 1) for the log form")
        loss_d = -(torch.log(d_real).mean() + torch.log1p(-d_fake).mean())
        loss_g = -torch.log(d_fake).mean()
        return loss_d, loss_g
    if form == "least_squares":
        loss_d = ((d_real - 1) ** 2).mean() + (d_fake ** 2).mean()
        loss_g = ((d_fake - 1) ** 2).mean()
        return loss_d, loss_g
    raise ValueError(f"unknown adversarial loss form {form!r}")


def adversarial_loss_logits(real_logits: torch.Tensor, fake_logits: torch.Tensor, form: str = "log"):
    """Same objective as :func:`adversarial_loss` with log-form scores given as logits.

    Used in training, where sigmoid outputs can round to exactly 0 or 1.
    """
    if form == "least_squares":
        return adversarial_loss(real_logits, fake_logits, form)
    if form != "log":
        raise ValueError(f"unknown adversarial loss form {form!r}")
    loss_d = -(F.logsigmoid(real_logits).mean() + F.logsigmoid(-fake_logits).mean())
    loss_g = -F.logsigmoid(fake_logits).mean()
    return loss_d, loss_g


def feature_matching_loss(real_feats, fake_feats) -> torch.Tensor:
    """Sum over layers of the mean absolute activation difference.

    Each layer's L1 distance is divided by its unit count and averaged over
    the batch, i.e. a plain elementwise mean per layer.
    """
    if len(real_feats) != len(fake_feats):
        raise ValueError(f"layer count mismatch: {len(real_feats)} vs {len(fake_feats)}")
    total = None
    for i, (r, f) in enumerate(zip(real_feats, fake_feats)):
        if r.shape != f.shape:
            raise ValueError(f"layer {i} shape mismatch: {tuple(r.shape)} vs {tuple(f.shape)}")
        term = (r - f).abs().mean()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no layers to match")
    return total


def total_generator_loss(adv_terms, fm_terms, lam: float = 10.0) -> torch.Tensor:
    """Sum of per-discriminator generator losses plus ``lam`` times their feature-matching terms."""
    if len(adv_terms) != len(fm_terms):
        raise ValueError("need one feature-matching term per discriminator")
    return sum(adv_terms) + lam * sum(fm_terms)
