"""Segmentation objectives: structural (Dice+CE) and boundary-aware terms.

The boundary term needs no offline edge-map precomputation: a smooth
boundary map is derived on the fly from any soft or binary mask M as
|M - avgpool_k(M)|, and prediction/target boundary maps are compared with
MSE. Replicate padding keeps the map zero on an all-foreground volume
(average of a constant is the constant), including at the borders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F


@dataclass
class BoundarySpec:
    kernel_size: int = 5
    padding_mode: str = "replicate"

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")


@dataclass
class LossWeights:
    lambda_structural: float = 1.0
    lambda_boundary: float = 10.0

    def __post_init__(self):
        if self.lambda_structural < 0 or self.lambda_boundary < 0:
            raise ValueError("loss weights must be non-negative")


def _as_5d(m: torch.Tensor) -> tuple[torch.Tensor, tuple]:
    shape = m.shape
    if m.ndim == 3:
        m = m[None, None]
    elif m.ndim == 4:
        m = m[:, None]
    elif m.ndim != 5:
        raise ValueError(f"expected 3D/4D/5D mask, got ndim {m.ndim}")
    return m, shape


def boundary_map(m: torch.Tensor, spec: BoundarySpec | None = None) -> torch.Tensor:
    """Smooth boundary map |M - avgpool_k(M)| in [0, 1], same shape as input."""
    spec = spec or BoundarySpec()
    m5, shape = _as_5d(m)
    if not m5.dtype.is_floating_point:
        m5 = m5.float()
    pad = spec.kernel_size // 2
    padded = F.pad(m5, (pad,) * 6, mode=spec.padding_mode)
    pooled = F.avg_pool3d(padded, kernel_size=spec.kernel_size, stride=1)
    return (m5 - pooled).abs().reshape(shape)


DICE_EPS = 1e-5


def _check_finite(logits: torch.Tensor) -> None:
    if not torch.isfinite(logits).all():
        raise FloatingPointError("non-finite logits (training divergence?)")


def soft_dice_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """1 - soft Dice with eps in numerator and denominator (empty-safe)."""
    probs = torch.sigmoid(logits)
    p5, _ = _as_5d(probs)
    t5, _ = _as_5d(target.to(probs.dtype))
    dims = (1, 2, 3, 4)
    inter = (p5 * t5).sum(dim=dims)
    total = p5.sum(dim=dims) + t5.sum(dim=dims)
    dice = (2.0 * inter + DICE_EPS) / (total + DICE_EPS)
    return 1.0 - dice.mean()


def structural_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Soft Dice loss + voxelwise binary cross-entropy (mean-reduced)."""
    _check_finite(logits)
    if logits.shape != target.shape:
        raise ValueError(f"logits shape {tuple(logits.shape)} != target {tuple(target.shape)}")
    ce = F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype))
    return soft_dice_loss(logits, target) + ce


def boundary_loss(logits: torch.Tensor, target: torch.Tensor,
                  spec: BoundarySpec | None = None) -> torch.Tensor:
    """MSE between boundary maps of the soft prediction and the target.

    The sigmoid (not a binarization) enters the boundary generator so the
    term stays differentiable.
    """
    spec = spec or BoundarySpec()
    probs = torch.sigmoid(logits)
    return F.mse_loss(boundary_map(probs, spec),
                      boundary_map(target.to(probs.dtype), spec))


def total_loss(logits: torch.Tensor, target: torch.Tensor,
               weights: LossWeights | None = None,
               spec: BoundarySpec | None = None) -> torch.Tensor:
    """Weighted sum of structural and boundary terms (default 1 : 10)."""
    weights = weights or LossWeights()
    out = weights.lambda_structural * structural_loss(logits, target)
    if weights.lambda_boundary != 0:
        out = out + weights.lambda_boundary * boundary_loss(logits, target, spec)
    return out
