"""Fuzzy tiling activation: scalars to fuzzy one-hot tile vectors."""
from __future__ import annotations

import torch
from torch import nn


def fta_expand(z: torch.Tensor, lower: float = -2.0, upper: float = 2.0,
               n_tiles: int = 16) -> torch.Tensor:
    """Expand each scalar of `z` into `n_tiles` fuzzy-indicator activations.

    Tiles of width delta = (upper - lower) / n_tiles partition [lower, upper];
    the fuzz width eta equals delta, so at most two adjacent tiles respond to
    any input. Inputs are clipped to the tiling bounds first. Output shape is
    z.shape[:-1] + (z.shape[-1] * n_tiles,), entries in [0, 1].
    """
    if upper <= lower:
        raise ValueError(f"tiling bounds must satisfy upper > lower, got [{lower}, {upper}]")
    if n_tiles < 2:
        raise ValueError(f"n_tiles must be >= 2, got {n_tiles}")
    if not torch.isfinite(z).all():
        raise ValueError("non-finite input to fta_expand")
    delta = (upper - lower) / n_tiles
    eta = delta
    anchors = lower + delta * torch.arange(n_tiles, dtype=z.dtype, device=z.device)
    zc = z.clamp(lower, upper).unsqueeze(-1)
    dist = torch.relu(anchors - zc) + torch.relu(zc - anchors - delta)
    out = 1.0 - torch.minimum(dist / eta, torch.ones_like(dist))
    return out.reshape(*z.shape[:-1], z.shape[-1] * n_tiles)


class FTA(nn.Module):
    def __init__(self, lower: float = -2.0, upper: float = 2.0, n_tiles: int = 16):
        super().__init__()
        self.lower = lower
        self.upper = upper
        self.n_tiles = n_tiles

    def forward(self, z):
        return fta_expand(z, self.lower, self.upper, self.n_tiles)

    def extra_repr(self):
        return f"bounds=[{self.lower}, {self.upper}], n_tiles={self.n_tiles}"
