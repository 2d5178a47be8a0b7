"""Shared fixtures: a fast micro configuration, synthetic cases, and the
terminal summary that prints one line per acceptance criterion."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from promptseg3d.config import (DataConfig, ModelConfig, OptimConfig,
                                PromptConfig)
from promptseg3d.data.preprocess import PreprocessSpec
from promptseg3d.data.synthetic import SyntheticSpec, generate_synthetic_case
from promptseg3d.models.decoder import DecoderConfig
from promptseg3d.models.network import build_model
from promptseg3d.models.vit3d import EncoderConfig, VolumeTransformerEncoder


def make_micro_config(**overrides) -> ModelConfig:
    """Smallest config that exercises every architectural branch.

    Two blocks with two taps, 8-voxel patches fed at 16, two CNN stages.
    """
    defaults = dict(
        encoder=EncoderConfig(n_blocks=2, embed_dim=32, n_heads=2,
                              spatial_patch=8, depth_patch=8,
                              pos_embed_grid=2, pos_embed_depth=2,
                              tap_blocks=(1, 2)),
        decoder=DecoderConfig(refine_channels=32),
        prompt=PromptConfig(n_train_points=4, n_queries=2, d_prompt=32,
                            n_heads=2),
        data=DataConfig(preprocess=PreprocessSpec(), patch_size=8,
                        model_input_size=16),
        optim=OptimConfig(iterations_per_epoch=2, max_epochs=8),
        cnn_channels=(8, 16),
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


@pytest.fixture
def micro_config() -> ModelConfig:
    return make_micro_config()


@pytest.fixture(scope="session")
def micro_model_session():
    return build_model(make_micro_config(), seed=0)


@pytest.fixture(scope="session")
def synth_case():
    """One 32-cube case with a single irregular blob; used across files."""
    return generate_synthetic_case(SyntheticSpec(), rng_seed=7)


@pytest.fixture(scope="session")
def vit_b_frozen_count() -> int:
    """Frozen-surface parameter count at the 12-block/768-dim scale.

    Built on the meta device so the reference count never allocates the
    actual 88M floats.
    """
    with torch.device("meta"):
        enc = VolumeTransformerEncoder(EncoderConfig.vit_b())
    named = dict(enc.named_parameters())
    part = enc.parameter_partition()
    return sum(named[n].numel() for n in part.frozen)


def rand_binary(shape, rng, p=0.5) -> np.ndarray:
    return (rng.random(shape) < p).astype(np.uint8)


# --- acceptance criterion reporting ------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, passed: bool | None, detail: str = "") -> None:
    """passed=None marks a criterion whose precondition was unavailable."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    suffix = f" ({detail})" if detail else ""
    ACCEPTANCE_LINES.append(f"{status} {name}{suffix}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
