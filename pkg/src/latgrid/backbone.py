"""Shared convolutional encoder/decoder backbone.

The encoder is a three-layer conv stack followed by adaptive pooling to a
fixed (k, k, C) shape and one residual block; the decoder mirrors the shape
transformations with transposed convolutions. Full-scale filter sizes cannot
consume the half-resolution desk observations, so the desk profile uses a
proportionally scaled stack (the last conv keeps 64 channels either way, which
pins the VQ-VAE embedding dim at 64).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class ConvSpec:
    filters: tuple
    channels: tuple
    strides: tuple
    paddings: tuple

    @property
    def out_channels(self) -> int:
        return self.channels[-1]


def conv_spec_for(env_id: str, scale: str) -> ConvSpec:
    if scale == "full":
        strides = (2, 1, 2) if env_id == "crossing" else (2, 2, 2)
        return ConvSpec((8, 6, 4), (64, 128, 64), strides, (1, 0, 0))
    if scale == "desk":
        return ConvSpec((4, 3, 3), (16, 32, 64), (2, 1, 2), (1, 0, 0))
    raise ValueError(f"unknown scale {scale!r}")


def conv_shape_trace(spec: ConvSpec, hw: tuple) -> list:
    """Spatial dims after each conv layer, starting from the input dims."""
    dims = [hw]
    h, w = hw
    for f, s, p in zip(spec.filters, spec.strides, spec.paddings):
        h = (h + 2 * p - f) // s + 1
        w = (w + 2 * p - f) // s + 1
        if h < 1 or w < 1:
            raise ValueError(f"conv spec {spec} collapses input {hw} below 1x1")
        dims.append((h, w))
    return dims


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ConvEncoder(nn.Module):
    """(B, 3, H, W) -> (B, C, k, k) feature maps."""

    def __init__(self, spec: ConvSpec, input_hw: tuple, pool_k: int):
        super().__init__()
        self.spec = spec
        self.input_hw = tuple(input_hw)
        self.pool_k = pool_k
        self.shape_trace = conv_shape_trace(spec, self.input_hw)
        layers = []
        in_ch = 3
        for f, ch, s, p in zip(spec.filters, spec.channels, spec.strides, spec.paddings):
            layers += [nn.Conv2d(in_ch, ch, f, stride=s, padding=p), nn.ReLU()]
            in_ch = ch
        self.convs = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d((pool_k, pool_k))
        self.res = ResidualBlock(spec.out_channels)

    def forward(self, x):
        if x.shape[-2:] != self.input_hw:
            raise ValueError(f"expected {self.input_hw} input, got {tuple(x.shape[-2:])}")
        return self.res(self.pool(self.convs(x)))


class ConvDecoder(nn.Module):
    """(B, C, k, k) -> (B, 3, H, W), mirroring a ConvEncoder's shape trace."""

    def __init__(self, spec: ConvSpec, input_hw: tuple, pool_k: int):
        super().__init__()
        self.pool_k = pool_k
        trace = conv_shape_trace(spec, tuple(input_hw))
        self.pre_pool_hw = trace[-1]
        self.res = ResidualBlock(spec.out_channels)
        deconvs = []
        chans = (3,) + tuple(spec.channels)
        for i in reversed(range(len(spec.filters))):
            f, s, p = spec.filters[i], spec.strides[i], spec.paddings[i]
            target_h = trace[i][0]
            in_h = trace[i + 1][0]
            out_pad = target_h - ((in_h - 1) * s - 2 * p + f)
            if not 0 <= out_pad < max(s, 2):
                raise ValueError(f"cannot mirror conv layer {i}: output_padding {out_pad}")
            deconvs.append(nn.ConvTranspose2d(chans[i + 1], chans[i], f, stride=s,
                                              padding=p, output_padding=out_pad))
            if i > 0:
                deconvs.append(nn.ReLU())
        self.deconvs = nn.Sequential(*deconvs)

    def forward(self, z):
        x = self.res(z)
        x = nn.functional.interpolate(x, size=self.pre_pool_hw, mode="nearest")
        return torch.sigmoid(self.deconvs(x))


class MLP(nn.Module):
    """Plain ReLU MLP used by world models, outcome heads and actor-critic."""

    def __init__(self, in_dim: int, hidden, out_dim: int):
        super().__init__()
        layers = []
        prev = in_dim
        for h in hidden:
            layers += [nn.Linear(prev, h), nn.ReLU()]
            prev = h
        layers.append(nn.Linear(prev, out_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)
