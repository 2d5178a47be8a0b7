"""Point prompts: data model, JSON wire format, and training-time simulation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FOREGROUND = "fg"
BACKGROUND = "bg"


@dataclass(frozen=True)
class PointPrompt:
    """A labeled (z, y, x) voxel coordinate; axes 0/1/2 of the array."""

    position: tuple[float, float, float]
    label: str = FOREGROUND

    def __post_init__(self):
        if self.label not in (FOREGROUND, BACKGROUND):
            raise ValueError(f"label must be 'fg' or 'bg', got {self.label!r}")
        if len(self.position) != 3:
            raise ValueError(f"position must have 3 coordinates, got {self.position}")
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))

    @property
    def is_foreground(self) -> bool:
        return self.label == FOREGROUND


def simulate_prompts(patch_mask: np.ndarray, n: int = 10,
                     rng_seed: int = 0) -> list[PointPrompt]:
    """Draw n training prompts from a binary patch mask.

    If the patch contains any foreground, all n points are sampled uniformly
    (with replacement) from foreground voxels and labeled foreground;
    otherwise all n come from background, labeled background. Noisy
    background-only prompts keep the model robust to imprecise clicks.
    """
    mask = np.asarray(patch_mask)
    if mask.ndim != 3:
        raise ValueError(f"patch mask must be 3D, got ndim {mask.ndim}")
    rng = np.random.default_rng(rng_seed)
    fg_flat = np.flatnonzero(mask)
    if fg_flat.size > 0:
        pool, label = fg_flat, FOREGROUND
    else:
        pool, label = np.flatnonzero(mask == 0), BACKGROUND
    picks = rng.choice(pool, size=n, replace=True)
    coords = np.unravel_index(picks, mask.shape)
    return [PointPrompt(position=(float(z), float(y), float(x)), label=label)
            for z, y, x in zip(*coords)]


def prompts_to_arrays(prompts: list[PointPrompt]) -> tuple[np.ndarray, np.ndarray]:
    """(n, 3) float positions and (n,) int labels (1=fg, 0=bg)."""
    if not prompts:
        return np.zeros((0, 3), dtype=np.float32), np.zeros((0,), dtype=np.int64)
    pos = np.array([p.position for p in prompts], dtype=np.float32)
    lab = np.array([1 if p.is_foreground else 0 for p in prompts], dtype=np.int64)
    return pos, lab


def prompts_to_json(prompts: list[PointPrompt]) -> dict:
    return {"points": [
        {"z": p.position[0], "y": p.position[1], "x": p.position[2], "label": p.label}
        for p in prompts]}


def prompts_from_json(payload) -> list[PointPrompt]:
    """Parse the {"points": [{z,y,x,label}, ...]} wire format."""
    if isinstance(payload, (str, bytes)):
        payload = json.loads(payload)
    if not isinstance(payload, dict) or "points" not in payload:
        raise ValueError("prompt JSON must be an object with a 'points' list")
    points = payload["points"]
    if not isinstance(points, list) or not points:
        raise ValueError("'points' must be a non-empty list")
    out = []
    for row in points:
        try:
            out.append(PointPrompt(position=(row["z"], row["y"], row["x"]),
                                   label=row["label"]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed prompt entry {row!r}") from exc
    return out


def load_prompts(path) -> list[PointPrompt]:
    return prompts_from_json(Path(path).read_text())
