"""Prompt-driven 3D segmentation with a frozen 2D transformer backbone.

A pretrained 2D ViT is adapted to volumes through lightweight trainable
parts (depth embeddings, per-block adapters, fine-tuned norms), combined
with a shallow CNN detail path, a query-based point-prompt encoder, and a
lightweight mask decoder, trained with a boundary-aware objective.
"""

from importlib import resources

from .config import (ABLATION_ORDER, ConfigError, DataConfig, LossConfig,
                     ModelConfig, OptimConfig, PromptConfig, ablation_presets,
                     load_config, save_config, tiny_config)
from .inference import centroid_foreground_prompt, infer_volume
from .losses import (BoundarySpec, LossWeights, boundary_loss, boundary_map,
                     soft_dice_loss, structural_loss, total_loss)
from .metrics import dice_score, metrics_report, nsd_score, surface_voxels
from .models import (DecoderConfig, EncoderConfig, PromptSegNetwork,
                     build_model, predict_mask, transplant_pretrained)
from .prompts import (PointPrompt, load_prompts, prompts_from_json,
                      prompts_to_arrays, prompts_to_json, simulate_prompts)
from .training import (TrainingDiverged, load_checkpoint, lr_at,
                       save_checkpoint, train_model)

__version__ = "0.1.0"


def schema_path(name: str):
    """Filesystem path of a bundled JSON schema (e.g. 'prompt_request')."""
    return resources.files(__name__) / "schemas" / f"{name}.schema.json"


__all__ = [
    "ABLATION_ORDER", "BoundarySpec", "ConfigError", "DataConfig",
    "DecoderConfig", "EncoderConfig", "LossConfig", "LossWeights",
    "ModelConfig", "OptimConfig", "PointPrompt", "PromptConfig",
    "PromptSegNetwork", "TrainingDiverged", "ablation_presets",
    "boundary_loss", "boundary_map", "build_model",
    "centroid_foreground_prompt", "dice_score", "infer_volume",
    "load_checkpoint", "load_config", "load_prompts", "lr_at",
    "metrics_report", "nsd_score", "predict_mask", "prompts_from_json",
    "prompts_to_arrays", "prompts_to_json", "save_checkpoint", "save_config",
    "schema_path", "simulate_prompts", "soft_dice_loss", "structural_loss",
    "surface_voxels", "tiny_config", "total_loss", "train_model",
    "transplant_pretrained",
]
