"""Complete hyperparameter record and its JSON round-trip.

A ModelConfig drives everything: model construction, training, inference,
and the service. Every field has a default; loading rejects unknown keys so
typos fail loudly instead of silently training the wrong variant.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data.preprocess import PreprocessSpec
from .losses import BoundarySpec, LossWeights
from .models.decoder import DecoderConfig
from .models.vit3d import EncoderConfig


class ConfigError(ValueError):
    pass


@dataclass
class PromptConfig:
    n_train_points: int = 10
    n_queries: int = 4
    d_prompt: int = 256
    n_heads: int = 8

    def __post_init__(self):
        if self.n_train_points < 1 or self.n_queries < 1:
            raise ValueError("n_train_points and n_queries must be >= 1")
        if self.d_prompt % self.n_heads != 0:
            raise ValueError(f"d_prompt {self.d_prompt} not divisible by "
                             f"n_heads {self.n_heads}")


@dataclass
class DataConfig:
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    patch_size: int = 32
    model_input_size: int = 128
    augment: bool = True

    def __post_init__(self):
        if self.patch_size < 4:
            raise ValueError("patch_size must be >= 4")
        if self.model_input_size < self.patch_size:
            raise ValueError("model_input_size must be >= patch_size")


@dataclass
class OptimConfig:
    lr0: float = 4e-4
    lr_decrement_per_epoch: float = 2e-6
    max_epochs: int = 200
    iterations_per_epoch: int = 50
    batch_size: int = 1
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.lr_decrement_per_epoch < 0:
            raise ValueError("lr decrement must be >= 0")
        if self.max_epochs < 1 or self.iterations_per_epoch < 1:
            raise ValueError("max_epochs and iterations_per_epoch must be >= 1")
        # lr must stay positive over the whole schedule domain [0, max_epochs)
        last = self.lr0 - (self.max_epochs - 1) * self.lr_decrement_per_epoch
        if last <= 0:
            raise ValueError(f"lr hits {last:.3e} at epoch {self.max_epochs - 1}; "
                             "shrink the decrement or max_epochs")


@dataclass
class LossConfig:
    use_boundary_loss: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    data: DataConfig = field(default_factory=DataConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    cnn_channels: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        self.cnn_channels = tuple(self.cnn_channels)
        if self.encoder.spatial_patch != self.encoder.depth_patch:
            raise ConfigError("decoder stride plan needs spatial_patch == "
                              "depth_patch")
        if self.data.model_input_size % self.encoder.spatial_patch:
            raise ConfigError(f"model_input_size {self.data.model_input_size} "
                              f"not divisible by patch {self.encoder.spatial_patch}")
        max_cnn_stride = 2 ** (len(self.cnn_channels) - 1)
        if max_cnn_stride >= self.encoder.spatial_patch:
            raise ConfigError("CNN strides must stay below the patch stride")

    # single source of truth for flags that describe sub-configs
    @property
    def fusion_mode(self) -> str:
        return self.decoder.fusion_mode

    @property
    def use_second_adapter(self) -> bool:
        return self.encoder.use_second_adapter

    @property
    def use_boundary_loss(self) -> bool:
        return self.loss.use_boundary_loss

    def effective_loss_weights(self) -> LossWeights:
        if self.loss.use_boundary_loss:
            return self.loss.weights
        return LossWeights(lambda_structural=self.loss.weights.lambda_structural,
                           lambda_boundary=0.0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return _dataclass_from_dict(cls, data, "")


def _is_union(hint) -> bool:
    return typing.get_origin(hint) in (typing.Union, types.UnionType)


def _coerce(hint, value, path: str):
    if dataclasses.is_dataclass(hint) and isinstance(hint, type):
        return _dataclass_from_dict(hint, value, path)
    if _is_union(hint):
        if value is None:
            return None
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return _coerce(args[0], value, path) if len(args) == 1 else value
    if typing.get_origin(hint) is tuple or hint is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a sequence, got "
                              f"{type(value).__name__}")
        return tuple(value)
    return value


def _dataclass_from_dict(cls, data, path: str):
    where = path.rstrip(".") or "top level"
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got "
                          f"{type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys at {where}: {unknown}")
    kwargs = {name: _coerce(hints[name], value, f"{path}{name}.")
              for name, value in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def save_config(config: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def load_config(path) -> ModelConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ModelConfig.from_dict(data)


def tiny_config(**overrides) -> ModelConfig:
    """Desk-scale default: 4-block encoder, 32-voxel patches fed at 128."""
    return ModelConfig(**overrides)


# Architecture/loss variants, cumulative like the ablation they mirror:
# each row changes one switch relative to the previous row, ending at the
# proposed configuration (two adapters, transposed-conv upsampling,
# concatenation fusion, boundary loss).
ABLATION_ORDER = ("baseline", "two_adapters", "up_conv", "residual_boundary",
                  "concat", "concat_boundary")


def ablation_presets() -> dict[str, ModelConfig]:
    def make(second_adapter: bool, upsample: str, fusion: str,
             boundary: bool) -> ModelConfig:
        return ModelConfig(
            encoder=EncoderConfig(use_second_adapter=second_adapter),
            decoder=DecoderConfig(upsample_mode=upsample, fusion_mode=fusion),
            loss=LossConfig(use_boundary_loss=boundary))

    return {
        "baseline": make(False, "trilinear", "residual", False),
        "two_adapters": make(True, "trilinear", "residual", False),
        "up_conv": make(True, "up_conv", "residual", False),
        "residual_boundary": make(True, "up_conv", "residual", True),
        "concat": make(True, "up_conv", "concatenate", False),
        "concat_boundary": make(True, "up_conv", "concatenate", True),
    }
