"""Frechet distance between Gaussian fits of image embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


@dataclass(frozen=True)
class FeatureSet:
    matrix: np.ndarray
    extractor_id: str = "raw"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim == 1:
            m = m[:, None]
        if m.ndim != 2:
            raise ValueError(f"feature matrix must be N x D, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("non-finite features")
        object.__setattr__(self, "matrix", m)


def _psd_sqrt(a: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    w = np.where(w < eps, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def compute_fid(a: FeatureSet, b: FeatureSet, eps: float = 1e-8) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of the product root is taken from the symmetric matrix
    S_a^(1/2) S_b S_a^(1/2), which has the same eigenvalues as S_a S_b;
    eigenvalues below ``eps`` are clamped to zero.
    """
    xa, xb = a.matrix, b.matrix
    if xa.shape[1] != xb.shape[1]:
        raise ValueError(f"feature dims differ: {xa.shape[1]} vs {xb.shape[1]}")
    d = xa.shape[1]
    for name, x in (("a", xa), ("b", xb)):
        if x.shape[0] < d + 1:
            raise ValueError(f"set {name} has {x.shape[0]} rows; need at least D+1 = {d + 1}")
    mu_a, mu_b = xa.mean(axis=0), xb.mean(axis=0)
    sa = np.atleast_2d(np.cov(xa, rowvar=False, ddof=1))
    sb = np.atleast_2d(np.cov(xb, rowvar=False, ddof=1))
    root_a = _psd_sqrt(sa, eps)
    w = np.linalg.eigvalsh(_sym(root_a @ sb @ root_a))
    tr_cross = np.sqrt(np.where(w < eps, 0.0, w)).sum()
    fid = float(np.sum((mu_a - mu_b) ** 2) + np.trace(sa) + np.trace(sb) - 2.0 * tr_cross)
    return max(fid, 0.0)


def _sym(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2


class RandomConvEmbedder(nn.Module):
    """Frozen, randomly initialised conv net mapping grey images to ``dim`` features.

    Weights depend only on ``seed``, so embeddings are comparable across runs.
    """

    def __init__(self, dim: int = 64, seed: int = 0, width: int = 16):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        shapes = [(width, 1, 3, 3), (2 * width, width, 3, 3), (dim, 2 * width, 3, 3)]
        self.weights = [torch.randn(s, generator=gen, dtype=torch.float64) * np.sqrt(2.0 / np.prod(s[1:]))
                        for s in shapes]
        self.dim, self.seed = dim, seed

    @property
    def extractor_id(self) -> str:
        return f"randconv-d{self.dim}-s{self.seed}"

    def forward(self, x):
        for i, w in enumerate(self.weights):
            x = F.conv2d(x, w, padding=1, stride=1 if i == 0 else 2)
            x = F.leaky_relu(x, 0.2)
        return x.mean(dim=(2, 3))

    def features(self, images) -> FeatureSet:
        x = torch.as_tensor(np.stack([np.asarray(i, dtype=np.float64) for i in images]))[:, None]
        with torch.no_grad():
            f = self(x).numpy()
        return FeatureSet(f, self.extractor_id)
