from .cnn import CnnLevel, FusionBlock, LocalDetailEncoder
from .decoder import DecoderConfig, VolumeMaskDecoder, predict_mask
from .network import PromptSegNetwork, build_model
from .prompt_encoder import PromptQueryEncoder, trilinear_sample
from .vit3d import (AdaptedBlock, DepthAwareAdapter, EncoderConfig,
                    FactorizedPatchEmbed3d, ParameterPartition, SelfAttention,
                    TransplantReport, VolumeTransformerEncoder,
                    build_transplant_plan, transplant_pretrained)

__all__ = [
    "AdaptedBlock", "CnnLevel", "DecoderConfig", "DepthAwareAdapter",
    "EncoderConfig", "FactorizedPatchEmbed3d", "FusionBlock",
    "LocalDetailEncoder", "ParameterPartition", "PromptQueryEncoder",
    "PromptSegNetwork", "SelfAttention", "TransplantReport",
    "VolumeMaskDecoder", "VolumeTransformerEncoder", "build_model",
    "build_transplant_plan", "predict_mask", "transplant_pretrained",
    "trilinear_sample",
]
