"""Training loop: linear lr schedule, frozen-partition enforcement,
deterministic per-seed sampling, and checkpointing.

Each iteration draws one patch (fair fg/bg coin), augments it, upsamples to
the model input size, simulates point prompts from the patch mask, and takes
one AdamW step restricted to the trainable partition. Validation runs
volume-level inference with a single deterministic foreground prompt.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, ModelConfig
from .data.manifest import entries_for_split, load_manifest, resolve_path
from .data.io import load_volume
from .data.patches import augment, derive_seed, sample_patch, upsample_patch
from .data.volume import LabelMask, Volume
from .losses import boundary_loss, structural_loss, total_loss
from .metrics import dice_score
from .models.network import PromptSegNetwork, build_model
from .prompts import prompts_to_arrays, simulate_prompts

log = logging.getLogger(__name__)

Case = tuple[Volume, LabelMask]


def lr_at(epoch: int, lr0: float = 4e-4, decrement: float = 2e-6,
          max_epochs: int = 200) -> float:
    """Linear decay: lr0 minus a fixed amount per epoch."""
    if not 0 <= epoch < max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {max_epochs})")
    return lr0 - epoch * decrement


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {json.dumps(diagnostics, default=str)}")
        self.diagnostics = diagnostics


@dataclass
class TrainResult:
    model: PromptSegNetwork
    history: list[dict] = field(default_factory=list)
    best_val_dice: float | None = None
    checkpoint_path: Path | None = None


def load_cases(manifest_path, split: str) -> list[Case]:
    entries = entries_for_split(load_manifest(manifest_path), split)
    cases = []
    for e in entries:
        image = resolve_path(e.image_path, manifest_path)
        mask = resolve_path(e.mask_path, manifest_path) if e.mask_path else None
        vol, lm = load_volume(image, mask)
        if lm is None:
            raise ValueError(f"{split} case {e.image_path} has no mask")
        cases.append((vol, lm))
    return cases


def _prepare_iteration(config: ModelConfig, cases: list[Case], seed: int):
    case_idx = int(np.random.default_rng(derive_seed(seed, 3))
                   .integers(len(cases)))
    vol, mask = cases[case_idx]
    patch = sample_patch(vol, mask, config.data.patch_size,
                         rng_seed=derive_seed(seed, 0))
    if config.data.augment:
        patch = augment(patch, rng_seed=derive_seed(seed, 1))
    patch = upsample_patch(patch, config.data.model_input_size)
    prompts = simulate_prompts(patch.mask, config.prompt.n_train_points,
                               rng_seed=derive_seed(seed, 2))
    positions, labels = prompts_to_arrays(prompts)
    image = torch.from_numpy(patch.image)[None, None]
    target = torch.from_numpy(patch.mask.astype(np.float32))[None, None]
    return vol.id, image, target, torch.from_numpy(positions), torch.from_numpy(labels)


def _loss_terms_for_dump(logits, target, config: ModelConfig) -> dict:
    with torch.no_grad():
        try:
            terms = {"structural": float(structural_loss(logits, target))}
        except FloatingPointError:
            terms = {"structural": "non-finite"}
        if config.use_boundary_loss:
            terms["boundary"] = float(boundary_loss(logits, target,
                                                    config.loss.boundary))
    return terms


def validation_dice(model: PromptSegNetwork, config: ModelConfig,
                    cases: list[Case]) -> float:
    from .inference import centroid_foreground_prompt, infer_volume
    scores = []
    for vol, mask in cases:
        prompt = centroid_foreground_prompt(mask)
        pred, _ = infer_volume(vol, [prompt], model, config)
        scores.append(dice_score(pred.data, mask.data))
    return float(np.mean(scores)) if scores else float("nan")


def train_model(config: ModelConfig, cases: list[Case] | None = None,
                manifest_path=None, val_cases: list[Case] | None = None,
                n_epochs: int | None = None, out_dir=None) -> TrainResult:
    """Train from in-memory cases or a manifest; returns the selected model.

    Model selection is by validation Dice when a val split exists, otherwise
    the final state is kept. n_epochs caps the run but never exceeds the
    configured maximum.
    """
    if cases is None:
        if manifest_path is None:
            raise ValueError("need cases or a manifest_path")
        cases = load_cases(manifest_path, "train")
        if val_cases is None:
            val_cases = load_cases(manifest_path, "val")
    if not cases:
        raise ValueError("empty training set")

    model = build_model(config)
    partition = model.apply_partition()
    named = dict(model.named_parameters())
    optimizer = torch.optim.AdamW(
        [named[n] for n in partition.trainable], lr=config.optim.lr0,
        weight_decay=config.optim.weight_decay)

    epochs = config.optim.max_epochs
    if n_epochs is not None:
        epochs = min(n_epochs, epochs)
    weights = config.effective_loss_weights()
    history: list[dict] = []
    best_val, best_state = None, None

    for epoch in range(epochs):
        lr = lr_at(epoch, config.optim.lr0, config.optim.lr_decrement_per_epoch,
                   config.optim.max_epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        losses = []
        for it in range(config.optim.iterations_per_epoch):
            seed = derive_seed(config.optim.seed, epoch, it)
            case_id, image, target, positions, labels = _prepare_iteration(
                config, cases, seed)
            logits = None
            try:
                logits = model(image, positions, labels)
                loss = total_loss(logits, target, weights, config.loss.boundary)
                finite = bool(torch.isfinite(loss))
            except FloatingPointError:
                loss, finite = None, False
            if not finite:
                diag = {"epoch": epoch, "iteration": it, "case_id": case_id,
                        "lr": lr}
                if logits is not None:
                    diag["loss_terms"] = _loss_terms_for_dump(
                        logits.detach(), target, config)
                raise TrainingDiverged("non-finite loss", diag)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))

        record = {"epoch": epoch, "lr": lr, "mean_loss": float(np.mean(losses)),
                  "losses": losses}
        if val_cases:
            model.eval()
            record["val_dice"] = validation_dice(model, config, val_cases)
            if best_val is None or record["val_dice"] > best_val:
                best_val = record["val_dice"]
                best_state = copy.deepcopy(model.state_dict())
        history.append(record)
        log.info("epoch %d lr %.3e loss %.4f%s", epoch, lr, record["mean_loss"],
                 f" val_dice {record.get('val_dice', float('nan')):.4f}"
                 if val_cases else "")

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / "checkpoint.pt"
        save_checkpoint(model, config, checkpoint_path,
                        epoch=epochs - 1, best_val_dice=best_val)
        (out_dir / "history.json").write_text(json.dumps(history, indent=2))
    return TrainResult(model=model, history=history, best_val_dice=best_val,
                       checkpoint_path=checkpoint_path)


CHECKPOINT_FORMAT = 1
# fields that must agree between a checkpoint and the runner's expectations
# for the weights to be loadable at all
_ARCH_SECTIONS = ("encoder", "decoder", "prompt", "cnn_channels")


class CheckpointMismatch(ValueError):
    pass


def save_checkpoint(model: PromptSegNetwork, config: ModelConfig, path,
                    epoch: int = 0, best_val_dice: float | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "state_dict": model.state_dict(),
        "config": config.to_dict(),
        "epoch": int(epoch),
        "best_val_dice": best_val_dice,
        "rng_state": torch.get_rng_state(),
    }, path)
    return path


def _diff_paths(a, b, path=""):
    if isinstance(a, dict) and isinstance(b, dict):
        for key in sorted(set(a) | set(b)):
            yield from _diff_paths(a.get(key), b.get(key), f"{path}{key}.")
    elif a != b:
        yield f"{path.rstrip('.')}: checkpoint={a!r} expected={b!r}"


def load_checkpoint(path, expected_config: ModelConfig | None = None
                    ) -> tuple[PromptSegNetwork, dict]:
    """Rebuild the model from the embedded config and load weights.

    With expected_config given, any architecture-affecting difference is an
    error that names the offending flags.
    """
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or "state_dict" not in payload:
        raise CheckpointMismatch(f"{path} is not a checkpoint produced here")
    try:
        config = ModelConfig.from_dict(payload["config"])
    except ConfigError as exc:
        raise CheckpointMismatch(f"embedded config invalid: {exc}") from None
    if expected_config is not None:
        got, want = config.to_dict(), expected_config.to_dict()
        diffs = [d for section in _ARCH_SECTIONS
                 for d in _diff_paths(got.get(section), want.get(section),
                                      f"{section}.")]
        if diffs:
            raise CheckpointMismatch(
                "checkpoint architecture differs from expected config:\n  "
                + "\n  ".join(diffs))
    model = PromptSegNetwork(config)
    model.load_state_dict(payload["state_dict"], strict=True)
    model.eval()
    meta = {k: payload.get(k) for k in ("epoch", "best_val_dice", "format")}
    return model, meta
