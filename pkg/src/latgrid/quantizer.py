"""Vector quantization with a learned embedding table.

Latent vectors snap to their nearest embedding by L2 distance (ties to the
lowest index). The training path passes gradients straight through from the
quantized output to the pre-quantized latents, and the embedding table learns
only from the commitment term, with its gradient scaled by 0.25.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

EMBED_GRAD_SCALE = 0.25


@dataclass
class LatentDiscrete:
    """Codebook indices plus their one-hot and embedding-vector views."""

    indices: np.ndarray  # (..., k2) int64 in [0, l)
    one_hot: np.ndarray  # (..., k2, l) float32 rows summing to 1
    quantized: np.ndarray  # (..., k2, d) float32, row i == embeddings[indices[i]]


def nearest_indices(latents: torch.Tensor, embeddings: torch.Tensor) -> torch.Tensor:
    """argmin_j ||z - e_j||_2 along the last dim; ties break to the lowest j."""
    if embeddings.numel() == 0:
        raise ValueError("empty embedding table")
    d2 = (latents.pow(2).sum(-1, keepdim=True)
          - 2.0 * latents @ embeddings.t()
          + embeddings.pow(2).sum(-1))
    return d2.argmin(dim=-1)


def quantize(latents, embeddings) -> LatentDiscrete:
    """Quantize (..., k2, d) latents against an (l, d) table."""
    z = torch.as_tensor(np.asarray(latents), dtype=torch.float32)
    e = torch.as_tensor(np.asarray(embeddings), dtype=torch.float32)
    if z.shape[-1] != e.shape[-1]:
        raise ValueError(f"latent dim {z.shape[-1]} != embedding dim {e.shape[-1]}")
    idx = nearest_indices(z, e)
    one_hot = torch.nn.functional.one_hot(idx, num_classes=e.shape[0]).float()
    quantized = e[idx]
    return LatentDiscrete(idx.numpy(), one_hot.numpy(), quantized.numpy())


class VectorQuantizer(nn.Module):
    def __init__(self, codebook_size: int, dim: int):
        super().__init__()
        if codebook_size < 1:
            raise ValueError("codebook_size must be >= 1")
        self.codebook_size = codebook_size
        self.dim = dim
        scale = 1.0 / codebook_size
        self.embeddings = nn.Parameter(
            torch.empty(codebook_size, dim).uniform_(-scale, scale))

    def indices(self, z: torch.Tensor) -> torch.Tensor:
        return nearest_indices(z, self.embeddings)

    @torch.no_grad()
    def init_from_data(self, z: torch.Tensor, rng: np.random.Generator):
        """Seed the codebook with k-means centers of sampled latent vectors.

        A tiny uniform init leaves every latent in a single Voronoi cell, so
        the decoder never receives state-distinguishing input and the codebook
        collapses; seeding from the data puts cell boundaries through the
        latent cloud from the first step.
        """
        from sklearn.cluster import KMeans

        flat = z.reshape(-1, z.shape[-1]).numpy()
        if len(flat) <= self.codebook_size:
            picks = rng.choice(len(flat), size=self.codebook_size, replace=True)
            centers = flat[picks] + 1e-3 * rng.standard_normal(
                (self.codebook_size, self.dim)).astype(flat.dtype)
        else:
            km = KMeans(n_clusters=self.codebook_size, n_init=4,
                        random_state=int(rng.integers(2**31 - 1)))
            centers = km.fit(flat).cluster_centers_.astype(flat.dtype)
        self.embeddings.copy_(torch.as_tensor(centers, dtype=self.embeddings.dtype))

    def forward(self, z: torch.Tensor):
        """Returns (straight-through quantized z, indices, commitment term).

        The commitment term is the per-element mean squared distance between
        latent vectors and their selected embeddings (the convention of
        F.mse_loss). It anchors the encoder against straight-through drift
        while the embedding side of the same term, carrying a 0.25 gradient
        weight, pulls the codebook toward its assigned latent clusters. The
        quantized output carries identity gradients back to `z`.
        """
        idx = self.indices(z)
        selected = self.embeddings[idx]
        quantized = z + (selected - z).detach()
        e_scaled = EMBED_GRAD_SCALE * selected + (1.0 - EMBED_GRAD_SCALE) * selected.detach()
        commitment = (z - e_scaled).pow(2).mean()
        return quantized, idx, commitment

    @torch.no_grad()
    def usage_fraction(self, idx: torch.Tensor) -> float:
        """Fraction of the codebook referenced by a batch of indices."""
        return float(torch.unique(idx).numel()) / self.codebook_size


def one_hot_to_indices(one_hot: torch.Tensor) -> torch.Tensor:
    return one_hot.argmax(dim=-1)
