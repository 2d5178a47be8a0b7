"""Query-based encoder for point prompts.

Each click is embedded as the trilinearly sampled visual feature at its
location in the deepest token grid plus a learned foreground/background
embedding. A small set of learnable global queries attends jointly with the
point embeddings (one self-attention round), then cross-attends into the
image tokens; the resulting queries are turned into per-voxel similarity maps
that feed the decoder bottleneck.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def trilinear_sample(grid: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample (B, D, H, W, C) features at fractional grid coords (n, 3).

    Coordinates are in grid index space, order (z, y, x), clamped to the
    grid; an integer coordinate returns that token exactly.
    """
    B, D, H, W, C = grid.shape
    coords = torch.as_tensor(coords, dtype=grid.dtype, device=grid.device)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ValueError(f"expected (n, 3) coords, got {tuple(coords.shape)}")
    hi = torch.tensor([D - 1, H - 1, W - 1], dtype=grid.dtype, device=grid.device)
    c = coords.clamp(min=torch.zeros_like(hi), max=hi)
    c0 = c.floor()
    frac = c - c0
    c0 = c0.long()
    c1 = torch.minimum(c0 + 1, hi.long())
    out = grid.new_zeros(B, coords.shape[0], C)
    for dz in (0, 1):
        wz = frac[:, 0] if dz else 1.0 - frac[:, 0]
        iz = c1[:, 0] if dz else c0[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            iy = c1[:, 1] if dy else c0[:, 1]
            for dx in (0, 1):
                wx = frac[:, 2] if dx else 1.0 - frac[:, 2]
                ix = c1[:, 2] if dx else c0[:, 2]
                w = (wz * wy * wx)[None, :, None]
                out = out + w * grid[:, iz, iy, ix, :]
    return out


class PromptQueryEncoder(nn.Module):
    BG, FG = 0, 1

    def __init__(self, image_dim: int, d_prompt: int = 256, n_queries: int = 4,
                 n_heads: int = 8):
        super().__init__()
        if d_prompt % n_heads != 0:
            raise ValueError(f"d_prompt {d_prompt} not divisible by n_heads {n_heads}")
        self.d_prompt = d_prompt
        self.n_queries = n_queries
        self.feature_proj = nn.Linear(image_dim, d_prompt)
        self.label_embed = nn.Embedding(2, d_prompt)
        self.global_queries = nn.Parameter(0.02 * torch.randn(n_queries, d_prompt))
        self.self_attn = nn.MultiheadAttention(d_prompt, n_heads, batch_first=True)
        self.norm_self = nn.LayerNorm(d_prompt)
        self.cross_attn = nn.MultiheadAttention(d_prompt, n_heads, batch_first=True)
        self.norm_cross = nn.LayerNorm(d_prompt)

    def project(self, image_grid: torch.Tensor) -> torch.Tensor:
        """(B, D', H', W', C_img) -> (B, D', H', W', d_prompt)."""
        return self.feature_proj(image_grid)

    @staticmethod
    def to_grid_coords(positions: torch.Tensor, input_size: tuple[int, int, int],
                       grid_size: tuple[int, int, int]) -> torch.Tensor:
        """Voxel coords in the model input -> fractional token-grid coords.

        Uses the pixel-center convention: voxel v sits at grid coordinate
        (v + 0.5) / patch - 0.5 where patch = input_size / grid_size.
        """
        positions = torch.as_tensor(positions, dtype=torch.float32)
        patch = torch.tensor([i / g for i, g in zip(input_size, grid_size)],
                             dtype=torch.float32)
        return (positions + 0.5) / patch - 0.5

    def visual_sample(self, proj_grid: torch.Tensor, positions: torch.Tensor,
                      input_size: tuple[int, int, int]) -> torch.Tensor:
        grid_size = tuple(proj_grid.shape[1:4])
        coords = self.to_grid_coords(positions, input_size, grid_size)
        return trilinear_sample(proj_grid, coords.to(proj_grid.device))

    def point_embeddings(self, proj_grid: torch.Tensor, positions: torch.Tensor,
                         labels: torch.Tensor,
                         input_size: tuple[int, int, int]) -> torch.Tensor:
        """Sampled visual feature plus the learned fg/bg embedding, (B, n, d)."""
        labels = torch.as_tensor(labels, dtype=torch.long, device=proj_grid.device)
        points = self.visual_sample(proj_grid, positions, input_size)
        return points + self.label_embed(labels)[None]

    def forward(self, proj_grid: torch.Tensor, positions: torch.Tensor,
                labels: torch.Tensor,
                input_size: tuple[int, int, int]) -> torch.Tensor:
        """Encode prompts into (B, n_queries, d_prompt) output queries.

        Zero prompts is legal: the global queries then attend only among
        themselves before cross-attending into the image."""
        labels = torch.as_tensor(labels, dtype=torch.long, device=proj_grid.device)
        if labels.ndim != 1:
            raise ValueError(f"labels must be 1D, got shape {tuple(labels.shape)}")
        B = proj_grid.shape[0]
        queries = self.global_queries[None].expand(B, -1, -1)
        if labels.shape[0] > 0:
            points = self.point_embeddings(proj_grid, positions, labels, input_size)
            x = torch.cat([queries, points], dim=1)
        else:
            x = queries
        attn_out, _ = self.self_attn(x, x, x, need_weights=False)
        x = self.norm_self(x + attn_out)
        q = x[:, :self.n_queries]
        tokens = proj_grid.reshape(B, -1, self.d_prompt)
        cross_out, _ = self.cross_attn(q, tokens, tokens, need_weights=False)
        return self.norm_cross(q + cross_out)

    def similarity_map(self, proj_grid: torch.Tensor,
                       queries: torch.Tensor) -> torch.Tensor:
        """Scaled dot product of every token with every output query.

        (B, D', H', W', d_prompt) x (B, nq, d_prompt) -> (B, D', H', W', nq).
        """
        scale = 1.0 / math.sqrt(self.d_prompt)
        return torch.einsum("bdhwc,bqc->bdhwq", proj_grid, queries) * scale
