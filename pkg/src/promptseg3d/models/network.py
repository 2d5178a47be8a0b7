"""Full promptable segmentation network.

Wires the frozen-backbone transformer encoder, the shallow CNN, the prompt
query encoder, and the mask decoder into one module with a single forward:
(volume patch, point prompts) -> full-resolution logits.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import torch
from torch import nn

from .cnn import LocalDetailEncoder
from .decoder import VolumeMaskDecoder
from .prompt_encoder import PromptQueryEncoder
from .vit3d import ParameterPartition, VolumeTransformerEncoder, _is_frozen_name

if TYPE_CHECKING:
    from ..config import ModelConfig


class PromptSegNetwork(nn.Module):
    def __init__(self, config: "ModelConfig"):
        super().__init__()
        self.config = config
        enc = config.encoder
        self.vit = VolumeTransformerEncoder(enc)
        self.cnn = LocalDetailEncoder(config.cnn_channels)
        self.prompt_encoder = PromptQueryEncoder(
            image_dim=enc.embed_dim, d_prompt=config.prompt.d_prompt,
            n_queries=config.prompt.n_queries, n_heads=config.prompt.n_heads)
        self.decoder = VolumeMaskDecoder(
            embed_dim=enc.embed_dim, n_taps=len(enc.tap_blocks),
            n_queries=config.prompt.n_queries, patch_stride=enc.spatial_patch,
            cfg=config.decoder, cnn_channels=config.cnn_channels)
        self.apply_partition()

    def forward(self, image: torch.Tensor, positions: torch.Tensor,
                labels: torch.Tensor) -> torch.Tensor:
        """image (B, 1, D, H, W); positions (n, 3) voxel coords (z, y, x) in
        the model input frame; labels (n,) with 1=fg, 0=bg. -> (B, 1, D, H, W)
        logits. Prompts apply to every batch element."""
        if image.ndim != 5 or image.shape[1] != 1:
            raise ValueError(f"expected (B, 1, D, H, W) input, got "
                             f"{tuple(image.shape)}")
        taps = self.vit.encode(image)
        cnn_levels = self.cnn(image)
        input_size = tuple(image.shape[2:])
        proj = self.prompt_encoder.project(taps[-1])
        queries = self.prompt_encoder(proj, positions, labels, input_size)
        prompt_map = self.prompt_encoder.similarity_map(proj, queries)
        return self.decoder(taps, cnn_levels, prompt_map, image)

    def parameter_partition(self) -> ParameterPartition:
        """Model-wide split: the transformer's pretrained surface is frozen,
        everything else (adapters, norms, depth parts, CNN, prompt encoder,
        decoder) trains."""
        frozen, trainable = [], []
        for name, _ in self.named_parameters():
            if name.startswith("vit.") and _is_frozen_name(name):
                frozen.append(name)
            else:
                trainable.append(name)
        return ParameterPartition(frozen=tuple(frozen), trainable=tuple(trainable))

    def apply_partition(self) -> ParameterPartition:
        part = self.parameter_partition()
        frozen = set(part.frozen)
        for name, p in self.named_parameters():
            p.requires_grad_(name not in frozen)
        return part

    def trainable_parameters(self):
        frozen = set(self.parameter_partition().frozen)
        return [p for name, p in self.named_parameters() if name not in frozen]


def build_model(config: "ModelConfig", seed: int | None = None) -> PromptSegNetwork:
    """Construct with a fixed torch seed so builds are reproducible."""
    if seed is None:
        seed = config.optim.seed
    torch.manual_seed(seed)
    return PromptSegNetwork(config)
