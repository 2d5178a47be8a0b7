"""Shallow 3D CNN supplying local detail the patch-embedded transformer loses.

Three stages at strides 1, 2, 4 relative to the input; each level is later
fused into the decoder at the matching resolution. Kept deliberately small
next to the transformer.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class CnnLevel:
    features: torch.Tensor  # (B, C, D, H, W)
    stride: int


def _conv_block(c_in: int, c_out: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, kernel_size=3, stride=stride, padding=1),
        nn.InstanceNorm3d(c_out, affine=True),
        nn.LeakyReLU(0.01, inplace=True),
        nn.Conv3d(c_out, c_out, kernel_size=3, padding=1),
        nn.InstanceNorm3d(c_out, affine=True),
        nn.LeakyReLU(0.01, inplace=True),
    )


class LocalDetailEncoder(nn.Module):
    """Strided conv stages producing a small multi-scale feature set."""

    def __init__(self, channels: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        if not channels:
            raise ValueError("need at least one stage")
        self.channels = tuple(channels)
        stages = []
        c_in = 1
        for i, c_out in enumerate(self.channels):
            stages.append(_conv_block(c_in, c_out, stride=1 if i == 0 else 2))
            c_in = c_out
        self.stages = nn.ModuleList(stages)

    @property
    def strides(self) -> tuple[int, ...]:
        return tuple(2 ** i for i in range(len(self.channels)))

    def forward(self, image: torch.Tensor) -> list[CnnLevel]:
        if image.ndim != 5 or image.shape[1] != 1:
            raise ValueError(f"expected (B, 1, D, H, W), got {tuple(image.shape)}")
        min_side = 2 ** (len(self.channels) - 1)
        if min(image.shape[2:]) < min_side:
            raise ValueError(f"input {tuple(image.shape[2:])} too small for "
                             f"{len(self.channels)} stages (needs >= {min_side})")
        levels = []
        x = image
        for i, stage in enumerate(self.stages):
            x = stage(x)
            levels.append(CnnLevel(features=x, stride=2 ** i))
        return levels


class FusionBlock(nn.Module):
    """Merge a CNN level into a decoder feature map of the same spatial size.

    residual: 1x1-project the CNN features to the decoder width and add.
    concatenate: stack channels, then 1x1-project back to the decoder width.
    """

    def __init__(self, cnn_channels: int, decoder_channels: int, mode: str):
        super().__init__()
        if mode not in ("residual", "concatenate"):
            raise ValueError(f"unknown fusion mode {mode!r}")
        self.mode = mode
        c_in = cnn_channels if mode == "residual" else cnn_channels + decoder_channels
        self.proj = nn.Conv3d(c_in, decoder_channels, kernel_size=1)

    def forward(self, cnn_feat: torch.Tensor, dec_feat: torch.Tensor) -> torch.Tensor:
        if cnn_feat.shape[2:] != dec_feat.shape[2:]:
            raise ValueError(f"fusion shape mismatch: cnn {tuple(cnn_feat.shape[2:])} "
                             f"vs decoder {tuple(dec_feat.shape[2:])}")
        if self.mode == "residual":
            return dec_feat + self.proj(cnn_feat)
        return self.proj(torch.cat([cnn_feat, dec_feat], dim=1))
