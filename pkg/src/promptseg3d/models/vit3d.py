"""Volume transformer encoder built on a frozen 2D backbone.

A pretrained 2D ViT supplies the spatial patch embedding, positional
embedding, and per-block attention/MLP weights, all kept frozen. Volumetric
capacity comes from small trainable parts: a depth patch projection, a depth
positional embedding, fine-tuned normalization layers, and one or two
bottleneck adapters per block whose depth-wise 3D convolution mixes
information along the depth axis. Adapters are exact identities at
initialization (zero-init up-projection), so a fresh model reproduces the
frozen backbone.

Token grids are laid out (B, D', H', W', C).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class EncoderConfig:
    n_blocks: int = 4
    embed_dim: int = 96
    n_heads: int = 4
    spatial_patch: int = 16
    depth_patch: int = 16
    adapter_bottleneck_ratio: float = 0.25
    tap_blocks: tuple[int, ...] | None = None  # 1-indexed; None -> 4 even taps
    use_second_adapter: bool = True
    mlp_ratio: float = 4.0
    pos_embed_grid: int = 8    # native (H', W') of the stored 2D pos embedding
    pos_embed_depth: int = 8   # native D' of the stored depth pos embedding
    pretrained_path: str | None = None

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by "
                             f"n_heads {self.n_heads}")
        if self.tap_blocks is None:
            n_taps = min(4, self.n_blocks)
            step = self.n_blocks / n_taps
            self.tap_blocks = tuple(int(round(step * (i + 1))) for i in range(n_taps))
        self.tap_blocks = tuple(sorted(set(int(b) for b in self.tap_blocks)))
        if not all(1 <= b <= self.n_blocks for b in self.tap_blocks):
            raise ValueError(f"tap_blocks {self.tap_blocks} outside "
                             f"[1, {self.n_blocks}]")
        if self.n_blocks not in self.tap_blocks:
            raise ValueError("tap_blocks must include the deepest block")

    @classmethod
    def tiny(cls, **overrides) -> "EncoderConfig":
        return cls(**overrides)

    @classmethod
    def vit_b(cls, pretrained_path: str | None = None) -> "EncoderConfig":
        return cls(n_blocks=12, embed_dim=768, n_heads=12, tap_blocks=(3, 6, 9, 12),
                   pos_embed_grid=64, pretrained_path=pretrained_path)


@dataclass
class ParameterPartition:
    """Disjoint frozen/trainable split over parameter names."""

    frozen: tuple[str, ...]
    trainable: tuple[str, ...]

    def __post_init__(self):
        overlap = set(self.frozen) & set(self.trainable)
        if overlap:
            raise ValueError(f"parameters in both partitions: {sorted(overlap)[:5]}")


# Pretrained-2D-backbone surface; everything else in the encoder is trainable.
_FROZEN_MARKERS = ("spatial_proj.", ".attn.", ".mlp.")
_FROZEN_EXACT_SUFFIXES = ("pos_embed_2d",)


def _is_frozen_name(name: str) -> bool:
    if any(marker in name for marker in _FROZEN_MARKERS):
        return True
    return any(name.endswith(sfx) for sfx in _FROZEN_EXACT_SUFFIXES)


class DepthAwareAdapter(nn.Module):
    """Residual bottleneck with a per-channel 3D conv over the token grid.

    norm -> down-projection -> depth-wise conv (k=3) -> GELU -> zero-init
    up-projection -> residual. Exact identity at initialization.
    """

    def __init__(self, dim: int, bottleneck_ratio: float = 0.25):
        super().__init__()
        hidden = max(1, int(round(dim * bottleneck_ratio)))
        self.norm = nn.LayerNorm(dim)
        self.down = nn.Linear(dim, hidden)
        self.conv = nn.Conv3d(hidden, hidden, kernel_size=3, padding=1, groups=hidden)
        self.act = nn.GELU()
        self.up = nn.Linear(hidden, dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        y = self.down(self.norm(grid))
        y = y.permute(0, 4, 1, 2, 3)
        y = self.conv(y)
        y = y.permute(0, 2, 3, 4, 1)
        y = self.up(self.act(y))
        return grid + y


class SelfAttention(nn.Module):
    """Global multi-head self-attention with explicit attention weights."""

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.last_attn_shape: tuple | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, N, C = x.shape
        qkv = (self.qkv(x)
               .reshape(B, N, 3, self.n_heads, self.head_dim)
               .permute(2, 0, 3, 1, 4))
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        self.last_attn_shape = tuple(attn.shape)
        out = (attn @ v).transpose(1, 2).reshape(B, N, C)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class AdaptedBlock(nn.Module):
    """Pre-norm transformer block wrapped by one or two adapters.

    With adapters at identity this is a standard 2D ViT block applied to the
    flattened token sequence (global attention, no relative position bias).
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.adapter1 = DepthAwareAdapter(cfg.embed_dim, cfg.adapter_bottleneck_ratio)
        self.norm1 = nn.LayerNorm(cfg.embed_dim)
        self.attn = SelfAttention(cfg.embed_dim, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.embed_dim)
        self.mlp = Mlp(cfg.embed_dim, cfg.mlp_ratio)
        self.adapter2 = (DepthAwareAdapter(cfg.embed_dim, cfg.adapter_bottleneck_ratio)
                         if cfg.use_second_adapter else None)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        x = self.adapter1(grid)
        B, D, H, W, C = x.shape
        seq = x.reshape(B, D * H * W, C)
        seq = seq + self.attn(self.norm1(seq))
        seq = seq + self.mlp(self.norm2(seq))
        x = seq.reshape(B, D, H, W, C)
        if self.adapter2 is not None:
            x = self.adapter2(x)
        return x


class FactorizedPatchEmbed3d(nn.Module):
    """Frozen per-slice 2D patch embedding + trainable depth projection.

    The depth projection is a per-channel strided 1D convolution initialized
    to uniform averaging, so a depth-constant volume embeds exactly like any
    single slice. Positional terms: the (frozen) 2D embedding is bilinearly
    resized to the spatial grid and broadcast over depth; a trainable depth
    embedding (zero-init) is broadcast over space.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.spatial_patch = cfg.spatial_patch
        self.depth_patch = cfg.depth_patch
        self.spatial_proj = nn.Conv2d(1, cfg.embed_dim, kernel_size=cfg.spatial_patch,
                                      stride=cfg.spatial_patch)
        self.depth_proj = nn.Conv1d(cfg.embed_dim, cfg.embed_dim,
                                    kernel_size=cfg.depth_patch,
                                    stride=cfg.depth_patch, groups=cfg.embed_dim)
        with torch.no_grad():
            self.depth_proj.weight.fill_(1.0 / cfg.depth_patch)
            self.depth_proj.bias.zero_()
        self.pos_embed_2d = nn.Parameter(
            0.02 * torch.randn(1, cfg.pos_embed_grid, cfg.pos_embed_grid,
                               cfg.embed_dim))
        self.depth_pos_embed = nn.Parameter(
            torch.zeros(1, cfg.pos_embed_depth, cfg.embed_dim))

    def _pos2d(self, hp: int, wp: int) -> torch.Tensor:
        pos = self.pos_embed_2d
        if pos.shape[1] != hp or pos.shape[2] != wp:
            pos = F.interpolate(pos.permute(0, 3, 1, 2), size=(hp, wp),
                                mode="bilinear", align_corners=False)
            pos = pos.permute(0, 2, 3, 1)
        return pos.unsqueeze(1)  # (1, 1, hp, wp, C)

    def _pos_depth(self, dp: int) -> torch.Tensor:
        pos = self.depth_pos_embed
        if pos.shape[1] != dp:
            pos = F.interpolate(pos.permute(0, 2, 1), size=dp, mode="linear",
                                align_corners=False).permute(0, 2, 1)
        return pos[:, :, None, None, :]  # (1, dp, 1, 1, C)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim == 3:
            image = image[None, None]
        elif image.ndim == 4:
            image = image[:, None]
        B, _, D, H, W = image.shape
        if D % self.depth_patch or H % self.spatial_patch or W % self.spatial_patch:
            raise ValueError(
                f"input {tuple(image.shape[2:])} not divisible by patches "
                f"(depth {self.depth_patch}, spatial {self.spatial_patch})")
        slices = image.permute(0, 2, 1, 3, 4).reshape(B * D, 1, H, W)
        tok = self.spatial_proj(slices)  # (B*D, C, H', W')
        C, Hp, Wp = tok.shape[1], tok.shape[2], tok.shape[3]
        tok = tok.reshape(B, D, C, Hp, Wp)
        seq = tok.permute(0, 3, 4, 2, 1).reshape(B * Hp * Wp, C, D)
        seq = self.depth_proj(seq)
        Dp = seq.shape[-1]
        grid = seq.reshape(B, Hp, Wp, C, Dp).permute(0, 4, 1, 2, 3)
        return grid + self._pos2d(Hp, Wp) + self._pos_depth(Dp)


class VolumeTransformerEncoder(nn.Module):
    """embed_3d -> adapted blocks, with multi-level tap outputs."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = FactorizedPatchEmbed3d(cfg)
        self.blocks = nn.ModuleList(AdaptedBlock(cfg) for _ in range(cfg.n_blocks))
        self.apply_partition()

    def embed_3d(self, image: torch.Tensor) -> torch.Tensor:
        return self.embed(image)

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        return self.encode(image)

    def encode(self, image: torch.Tensor) -> list[torch.Tensor]:
        """Run all blocks, returning one token grid per tap (deepest last)."""
        x = self.embed(image)
        taps = []
        for i, block in enumerate(self.blocks, start=1):
            x = block(x)
            if i in self.cfg.tap_blocks:
                taps.append(x)
        return taps

    def parameter_partition(self) -> ParameterPartition:
        frozen, trainable = [], []
        for name, _ in self.named_parameters():
            (frozen if _is_frozen_name(name) else trainable).append(name)
        return ParameterPartition(frozen=tuple(frozen), trainable=tuple(trainable))

    def apply_partition(self) -> ParameterPartition:
        """Set requires_grad according to the frozen/trainable split."""
        part = self.parameter_partition()
        frozen = set(part.frozen)
        for name, p in self.named_parameters():
            p.requires_grad_(name not in frozen)
        return part


# --- pretrained 2D checkpoint transplant ------------------------------------

_SKIP_MARKERS = ("rel_pos", "neck.", "mask_decoder.", "prompt_encoder.",
                 "pixel_mean", "pixel_std")


def build_transplant_plan(source_keys, cfg: EncoderConfig) -> tuple[list[dict], list[str]]:
    """Map 2D ViT checkpoint keys onto encoder parameter names.

    Returns (mapping rows, skipped source keys). Each row is
    {source, target, transform} where transform is one of copy,
    collapse_rgb_sum, resize_bilinear.
    """
    mapping, skipped = [], []
    for key in sorted(source_keys):
        stripped = key.removeprefix("image_encoder.")
        if any(marker in stripped for marker in _SKIP_MARKERS):
            skipped.append(key)
            continue
        target, transform = None, "copy"
        if stripped == "patch_embed.proj.weight":
            target, transform = "embed.spatial_proj.weight", "collapse_rgb_sum"
        elif stripped == "patch_embed.proj.bias":
            target = "embed.spatial_proj.bias"
        elif stripped == "pos_embed":
            target, transform = "embed.pos_embed_2d", "resize_bilinear"
        elif stripped.startswith("blocks."):
            parts = stripped.split(".")
            idx = int(parts[1])
            if idx >= cfg.n_blocks:
                skipped.append(key)
                continue
            rest = ".".join(parts[2:])
            rest = rest.replace("mlp.lin1", "mlp.fc1").replace("mlp.lin2", "mlp.fc2")
            if rest.split(".")[0] in ("norm1", "norm2", "attn", "mlp"):
                target = f"blocks.{idx}.{rest}"
        if target is None:
            skipped.append(key)
        else:
            mapping.append({"source": key, "target": target, "transform": transform})
    return mapping, skipped


def _transform_tensor(value: torch.Tensor, transform: str,
                      target_shape: torch.Size) -> torch.Tensor:
    if transform == "copy":
        return value
    if transform == "collapse_rgb_sum":
        # grayscale input replicated to RGB sees sum over input channels, so
        # collapsing by sum preserves the pretrained per-patch embeddings
        return value.sum(dim=1, keepdim=True)
    if transform == "resize_bilinear":
        pos = value
        if pos.ndim == 3:  # (1, N, C) token layout -> square grid
            n = pos.shape[1]
            side = int(round(n ** 0.5))
            pos = pos.reshape(1, side, side, pos.shape[-1])
        if pos.shape[1:3] != target_shape[1:3]:
            pos = F.interpolate(pos.permute(0, 3, 1, 2), size=target_shape[1:3],
                                mode="bilinear", align_corners=False)
            pos = pos.permute(0, 2, 3, 1)
        return pos
    raise ValueError(f"unknown transform {transform!r}")


@dataclass
class TransplantReport:
    partition: ParameterPartition
    mapping: list[dict] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "mapping": self.mapping,
            "skipped_source_keys": self.skipped,
            "frozen": list(self.partition.frozen),
            "trainable": list(self.partition.trainable),
        }


def transplant_pretrained(encoder: VolumeTransformerEncoder,
                          checkpoint: Mapping[str, torch.Tensor] | None,
                          dry_run: bool = False) -> TransplantReport:
    """Import 2D backbone weights and return the frozen/trainable partition.

    With no checkpoint the encoder keeps its random init but the partition is
    still reported (the freezing contract does not depend on the init
    source). Shape mismatches raise with all offending keys listed.
    """
    if checkpoint is None:
        return TransplantReport(partition=encoder.apply_partition())
    mapping, skipped = build_transplant_plan(checkpoint.keys(), encoder.cfg)
    params = dict(encoder.named_parameters())
    staged, bad = {}, []
    for row in mapping:
        target = params.get(row["target"])
        if target is None:
            bad.append(f"{row['source']} -> missing target {row['target']}")
            continue
        value = torch.as_tensor(checkpoint[row["source"]])
        value = _transform_tensor(value, row["transform"], target.shape)
        if tuple(value.shape) != tuple(target.shape):
            bad.append(f"{row['source']} -> {row['target']}: checkpoint "
                       f"{tuple(value.shape)} vs model {tuple(target.shape)}")
            continue
        staged[row["target"]] = value
    if bad:
        raise ValueError("transplant shape mismatches:\n  " + "\n  ".join(bad))
    if not dry_run:
        with torch.no_grad():
            for name, value in staged.items():
                params[name].copy_(value)
    return TransplantReport(partition=encoder.apply_partition(),
                            mapping=mapping, skipped=skipped)
