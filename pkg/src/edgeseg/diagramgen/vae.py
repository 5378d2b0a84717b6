"""Convolutional VAE over 32x32 edge diagrams, used to sample new cone outlines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .cone import extract_cone_profile, otsu_binarize


@dataclass
class VaeConfig:
    latent_dim: int = 32
    epochs: int = 40
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0


class ConvVAE(nn.Module):
    def __init__(self, latent_dim: int = 32):
        super().__init__()
        self.latent_dim = latent_dim
        self.encoder = nn.Sequential(
            nn.Conv2d(1, 16, 4, 2, 1), nn.LeakyReLU(0.2),   # 16x16
            nn.Conv2d(16, 32, 4, 2, 1), nn.LeakyReLU(0.2),  # 8x8
            nn.Conv2d(32, 64, 4, 2, 1), nn.LeakyReLU(0.2),  # 4x4
            nn.Flatten(),
        )
        self.mu = nn.Linear(64 * 16, latent_dim)
        self.logvar = nn.Linear(64 * 16, latent_dim)
        self.expand = nn.Linear(latent_dim, 64 * 16)
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(64, 32, 4, 2, 1), nn.ReLU(),
            nn.ConvTranspose2d(32, 16, 4, 2, 1), nn.ReLU(),
            nn.ConvTranspose2d(16, 1, 4, 2, 1),
        )

    def encode(self, x):
        h = self.encoder(x)
        return self.mu(h), self.logvar(h)

    def decode_logits(self, z):
        return self.decoder(self.expand(z).view(-1, 64, 4, 4))

    def decode(self, z):
        return torch.sigmoid(self.decode_logits(z))

    def forward(self, x, noise):
        mu, logvar = self.encode(x)
        z = mu + torch.exp(0.5 * logvar) * noise
        return self.decode_logits(z), mu, logvar


@dataclass
class VaeModel:
    net: ConvVAE
    latent_dim: int
    log: list[dict] = field(default_factory=list)

    def decode(self, z: np.ndarray) -> np.ndarray:
        self.net.eval()
        with torch.no_grad():
            out = self.net.decode(torch.as_tensor(np.atleast_2d(z), dtype=torch.float32))
        return out[:, 0].numpy().astype(np.float64)


def elbo_terms(logits, x, mu, logvar):
    """Per-image reconstruction (summed pixel BCE) and KL to N(0, I), batch-averaged."""
    recon = F.binary_cross_entropy_with_logits(logits, x, reduction="sum") / x.shape[0]
    kl = -0.5 * torch.sum(1 + logvar - mu.pow(2) - logvar.exp()) / x.shape[0]
    return recon, kl


def train_cone_vae(diagrams, cfg: VaeConfig | None = None) -> VaeModel:
    cfg = cfg or VaeConfig()
    data = np.stack([np.asarray(d, dtype=np.float32) for d in diagrams])
    if len(data) < 2 * cfg.batch_size:
        raise ValueError(f"need at least {2 * cfg.batch_size} diagrams, got {len(data)}")
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net = ConvVAE(cfg.latent_dim)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    x_all = torch.from_numpy(data)[:, None]
    model = VaeModel(net, cfg.latent_dim)
    for epoch in range(1, cfg.epochs + 1):
        net.train()
        order = rng.permutation(len(data))
        sums = np.zeros(2)
        for start in range(0, len(order), cfg.batch_size):
            x = x_all[order[start:start + cfg.batch_size]]
            noise = torch.randn(x.shape[0], cfg.latent_dim, generator=gen)
            logits, mu, logvar = net(x, noise)
            recon, kl = elbo_terms(logits, x, mu, logvar)
            loss = recon + kl
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += np.array([recon.item(), kl.item()]) * x.shape[0]
        recon_m, kl_m = sums / len(data)
        model.log.append({"epoch": epoch, "recon": recon_m, "kl": kl_m, "elbo_loss": recon_m + kl_m})
    net.eval()
    return model


def sample_cone(model: VaeModel, rng: np.random.Generator, retries: int = 16) -> np.ndarray:
    """Decode a standard-normal latent into a valid cone profile, retrying on failure.

    Decoded outlines are soft and fragmentary, so they are thresholded with
    Otsu and closed by the outer-profile fill rather than cut at 0.5.
    """
    last = None
    for _ in range(retries):
        z = rng.standard_normal(model.latent_dim)
        soft = model.decode(z)[0]
        try:
            return extract_cone_profile(otsu_binarize(soft))
        except ValueError as exc:
            last = exc
    raise ValueError(f"{retries} consecutive invalid cone samples (last: {last})")


def save_vae(path, model: VaeModel) -> None:
    torch.save({"latent_dim": model.latent_dim, "state": model.net.state_dict(), "log": model.log}, path)


def load_vae(path) -> VaeModel:
    blob = torch.load(path, weights_only=False)
    net = ConvVAE(blob["latent_dim"])
    net.load_state_dict(blob["state"])
    net.eval()
    return VaeModel(net, blob["latent_dim"], blob["log"])
