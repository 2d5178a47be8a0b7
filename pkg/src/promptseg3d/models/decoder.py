"""Lightweight convolutional decoder from token grids to a full-size mask.

Every tapped transformer level is refined and upsampled once, the levels are
summed, then the map is progressively doubled back to input resolution with
channel halving. Prompt similarity maps enter once, concatenated to the
deepest tap. CNN detail levels are fused at matching resolutions, and the
raw input is concatenated before the 1-channel head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .cnn import CnnLevel, FusionBlock

UPSAMPLE_MODES = ("trilinear", "up_conv")
FUSION_MODES = ("residual", "concatenate")


@dataclass
class DecoderConfig:
    refine_channels: int = 128
    upsample_mode: str = "up_conv"
    fusion_mode: str = "concatenate"

    def __post_init__(self):
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ValueError(f"upsample_mode must be one of {UPSAMPLE_MODES}, "
                             f"got {self.upsample_mode!r}")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, "
                             f"got {self.fusion_mode!r}")
        if self.refine_channels < 8:
            raise ValueError("refine_channels must be >= 8")


def _conv_stage(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, kernel_size=3, padding=1),
        nn.InstanceNorm3d(c_out, affine=True),
        nn.LeakyReLU(0.01, inplace=True),
    )


def _refine_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(_conv_stage(c_in, c_out), _conv_stage(c_out, c_out))


class VolumeMaskDecoder(nn.Module):
    def __init__(self, embed_dim: int, n_taps: int, n_queries: int,
                 patch_stride: int, cfg: DecoderConfig,
                 cnn_channels: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        if n_taps < 1:
            raise ValueError("need at least one tap")
        if patch_stride < 2 or patch_stride & (patch_stride - 1):
            raise ValueError(f"patch stride {patch_stride} must be a power of "
                             "two >= 2")
        self.cfg = cfg
        self.n_queries = n_queries
        self.patch_stride = patch_stride
        rc = cfg.refine_channels

        # per-tap refinement; only the deepest tap carries the prompt maps
        self.refine = nn.ModuleList(
            _refine_block(embed_dim + (n_queries if i == n_taps - 1 else 0), rc)
            for i in range(n_taps))
        self.tap_up = nn.ModuleList(
            nn.ConvTranspose3d(rc, rc, kernel_size=2, stride=2)
            for _ in range(n_taps))

        cnn_by_stride = {2 ** i: c for i, c in enumerate(cnn_channels)}
        self.up_convs = nn.ModuleDict()
        self.stage_convs = nn.ModuleDict()
        self.fusers = nn.ModuleDict()
        stride, ch = patch_stride // 2, rc
        self._plan: list[tuple[int, int]] = []  # (stride, channels at stride)
        while True:
            self._plan.append((stride, ch))
            if stride in cnn_by_stride:
                self.fusers[str(stride)] = FusionBlock(cnn_by_stride[stride], ch,
                                                       cfg.fusion_mode)
            if stride == 1:
                break
            ch_next = max(ch // 2, 8)
            if cfg.upsample_mode == "up_conv":
                self.up_convs[str(stride)] = nn.ConvTranspose3d(
                    ch, ch, kernel_size=2, stride=2)
            self.stage_convs[str(stride)] = _conv_stage(ch, ch_next)
            stride, ch = stride // 2, ch_next
        self.final = _conv_stage(ch + 1, ch)
        self.head = nn.Conv3d(ch, 1, kernel_size=1)

    def _upsample(self, x: torch.Tensor, stride: int) -> torch.Tensor:
        if self.cfg.upsample_mode == "up_conv":
            return self.up_convs[str(stride)](x)
        return F.interpolate(x, scale_factor=2, mode="trilinear",
                             align_corners=False)

    def forward(self, taps: list[torch.Tensor], cnn_levels: list[CnnLevel],
                prompt_map: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
        """taps: (B, D', H', W', C) grids, deepest last. Returns (B, 1, *image)."""
        if len(taps) != len(self.refine):
            raise ValueError(f"expected {len(self.refine)} taps, got {len(taps)}")
        levels_by_stride = {lvl.stride: lvl.features for lvl in cnn_levels}
        fused = None
        for i, tap in enumerate(taps):
            feat = tap.permute(0, 4, 1, 2, 3)
            if i == len(taps) - 1:
                feat = torch.cat([feat, prompt_map.permute(0, 4, 1, 2, 3)], dim=1)
            feat = self.tap_up[i](self.refine[i](feat))
            fused = feat if fused is None else fused + feat
        x = fused
        for stride, _ in self._plan:
            key = str(stride)
            if key in self.fusers:
                cnn_feat = levels_by_stride.get(stride)
                if cnn_feat is None:
                    raise ValueError(f"missing CNN level at stride {stride}")
                x = self.fusers[key](cnn_feat, x)
            if stride == 1:
                break
            x = self.stage_convs[key](self._upsample(x, stride))
        if x.shape[2:] != image.shape[2:]:
            raise ValueError(f"decoder output {tuple(x.shape[2:])} does not "
                             f"match input {tuple(image.shape[2:])}")
        x = self.final(torch.cat([x, image], dim=1))
        return self.head(x)


def predict_mask(logits, threshold: float = 0.5) -> np.ndarray:
    """Sigmoid + strict threshold. Probability exactly at threshold is
    background. NaN logits are refused rather than silently thresholded."""
    t = torch.as_tensor(logits)
    if torch.isnan(t).any():
        raise FloatingPointError("NaN logits in predict_mask")
    probs = torch.sigmoid(t.float())
    return (probs > threshold).to(torch.uint8).cpu().numpy()
