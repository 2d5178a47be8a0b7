"""Volume-level inference from point prompts.

Training is patch-based, so full volumes are segmented through windows:
prompt_centered runs one window centered on the first prompt (clamped inside
the volume) on a zero-logit canvas; tiled adds a covering grid of windows.
Prompts are mapped into every window's model-input frame; overlapping window
logits are averaged before thresholding.
"""

from __future__ import annotations

from itertools import product

import numpy as np
import torch
import torch.nn.functional as F

from .config import ModelConfig
from .data.volume import LabelMask, Volume
from .metrics import metrics_report
from .models.decoder import predict_mask
from .models.network import PromptSegNetwork
from .prompts import PointPrompt

WINDOW_POLICIES = ("prompt_centered", "tiled")


def centroid_foreground_prompt(mask: LabelMask) -> PointPrompt:
    """Foreground voxel nearest the foreground centroid; deterministic, so
    validation curves are comparable across runs. Falls back to a background
    prompt at the volume center when the mask is empty."""
    fg = np.argwhere(mask.data > 0)
    if fg.size == 0:
        center = tuple(float(n // 2) for n in mask.shape)
        return PointPrompt(position=center, label="bg")
    centroid = fg.mean(axis=0)
    nearest = fg[int(np.argmin(((fg - centroid) ** 2).sum(axis=1)))]
    return PointPrompt(position=tuple(float(v) for v in nearest), label="fg")


def _window_starts(shape, window, primary_start, policy: str) -> list[tuple]:
    starts = {tuple(primary_start)}
    if policy == "tiled":
        per_axis = []
        for n, w in zip(shape, window):
            axis_starts = list(range(0, n - w + 1, w))
            if axis_starts[-1] + w < n:
                axis_starts.append(n - w)
            per_axis.append(axis_starts)
        starts.update(product(*per_axis))
    return sorted(starts)


def _to_model_coords(prompts, start, window, model_size) -> tuple[np.ndarray, np.ndarray]:
    positions = np.array([p.position for p in prompts], dtype=np.float32)
    labels = np.array([1 if p.is_foreground else 0 for p in prompts],
                      dtype=np.int64)
    win_pos = positions - np.asarray(start, dtype=np.float32)
    scale = np.array([model_size / w for w in window], dtype=np.float32)
    # pixel-center mapping, consistent with trilinear resizing of the window
    model_pos = (win_pos + 0.5) * scale - 0.5
    model_pos = np.clip(model_pos, 0.0, model_size - 1.0)
    return model_pos, labels


def infer_volume(volume: Volume, prompts: list[PointPrompt],
                 model: PromptSegNetwork, config: ModelConfig,
                 policy: str = "prompt_centered", gt: LabelMask | None = None,
                 tolerance_mm: float = 1.0) -> tuple[LabelMask, dict | None]:
    """Segment a preprocessed volume. Returns the mask and, when ground
    truth is supplied, an evaluation row."""
    if not prompts:
        raise ValueError("promptable inference needs at least one prompt")
    if policy not in WINDOW_POLICIES:
        raise ValueError(f"unknown window policy {policy!r}")
    shape = volume.shape
    window = tuple(min(config.data.patch_size, n) for n in shape)
    first = np.asarray(prompts[0].position)
    primary = tuple(int(np.clip(int(round(p)) - w // 2, 0, n - w))
                    for p, w, n in zip(first, window, shape))

    model_size = config.data.model_input_size
    canvas = np.zeros(shape, dtype=np.float32)
    counts = np.zeros(shape, dtype=np.int32)
    model.eval()
    with torch.no_grad():
        for start in _window_starts(shape, window, primary, policy):
            sl = tuple(slice(s, s + w) for s, w in zip(start, window))
            crop = torch.from_numpy(
                np.ascontiguousarray(volume.data[sl], dtype=np.float32))[None, None]
            if crop.shape[2:] != (model_size,) * 3:
                crop = F.interpolate(crop, size=(model_size,) * 3,
                                     mode="trilinear", align_corners=False)
            positions, labels = _to_model_coords(prompts, start, window, model_size)
            logits = model(crop, torch.from_numpy(positions),
                           torch.from_numpy(labels))
            if logits.shape[2:] != tuple(window):
                logits = F.interpolate(logits, size=window, mode="trilinear",
                                       align_corners=False)
            canvas[sl] += logits[0, 0].numpy()
            counts[sl] += 1

    covered = counts > 0
    canvas[covered] /= counts[covered]
    mask = LabelMask(data=predict_mask(canvas), spacing=volume.spacing,
                     origin=volume.origin, id=f"{volume.id}-pred")
    report = None
    if gt is not None:
        gt.check_paired(volume)
        report = metrics_report(volume.id, mask.data, gt.data,
                                tolerance_mm=tolerance_mm,
                                spacing=volume.spacing,
                                prompt_count=len(prompts))
    return mask, report
