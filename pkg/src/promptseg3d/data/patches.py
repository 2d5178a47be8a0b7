"""Training patch extraction, augmentation, and model-input upsampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .volume import LabelMask, Volume

log = logging.getLogger(__name__)

_warned_no_foreground: set[str] = set()


@dataclass
class Patch:
    """A cropped (and possibly upsampled) image/mask pair from one volume."""

    image: np.ndarray
    mask: np.ndarray
    center: tuple[int, int, int]
    contains_foreground: bool

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError(
                f"patch image {self.image.shape} != mask {self.mask.shape}")


def derive_seed(*keys: int) -> int:
    """Deterministic child seed from (global_seed, worker, iteration)-style keys."""
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


def sample_patch(v: Volume, m: LabelMask, patch_size: int, rng_seed: int) -> Patch:
    """Crop a cube whose center is a fair coin flip between classes.

    With probability 0.5 the center is a uniformly drawn foreground voxel,
    otherwise a uniformly drawn background voxel; the crop window is shifted
    inward at volume borders so it never leaves the data.
    """
    if any(patch_size > n for n in v.shape):
        raise ValueError(f"patch_size {patch_size} exceeds volume shape {v.shape}")
    m.check_paired(v)
    rng = np.random.default_rng(rng_seed)
    flat_mask = m.data.reshape(-1)
    fg_flat = np.flatnonzero(flat_mask)
    bg_flat = np.flatnonzero(flat_mask == 0)

    want_foreground = bool(rng.random() < 0.5)
    if fg_flat.size == 0:
        if v.id not in _warned_no_foreground:
            log.warning("volume %s has no foreground; sampling background only", v.id)
            _warned_no_foreground.add(v.id)
        want_foreground = False
    elif bg_flat.size == 0:
        want_foreground = True

    pool = fg_flat if want_foreground else bg_flat
    center = np.unravel_index(int(rng.choice(pool)), m.data.shape)

    start = [int(np.clip(c - patch_size // 2, 0, n - patch_size))
             for c, n in zip(center, v.shape)]
    sl = tuple(slice(s, s + patch_size) for s in start)
    image = np.ascontiguousarray(v.data[sl], dtype=np.float32)
    mask = np.ascontiguousarray(m.data[sl])
    return Patch(image=image, mask=mask, center=tuple(int(c) for c in center),
                 contains_foreground=bool(mask.any()))


@dataclass
class AugmentPlan:
    """Concrete transform draw; ``None`` entries are skipped."""

    flip_axis: int | None = None
    rotation: tuple[tuple[int, int], int] | None = None  # (axis pair, k*90deg)
    zoom: float | None = None
    intensity_shift: float | None = None

    @property
    def is_identity(self) -> bool:
        return (self.flip_axis is None and self.rotation is None
                and self.zoom is None and self.intensity_shift is None)


def draw_augment_plan(rng: np.random.Generator,
                      zoom_range=(0.9, 1.1),
                      shift_range=(-0.1, 0.1)) -> AugmentPlan:
    """Each transform fires independently with probability 0.5."""
    plan = AugmentPlan()
    if rng.random() < 0.5:
        plan.flip_axis = int(rng.integers(3))
    if rng.random() < 0.5:
        pairs = ((0, 1), (0, 2), (1, 2))
        plan.rotation = (pairs[int(rng.integers(3))], int(rng.integers(1, 4)))
    if rng.random() < 0.5:
        plan.zoom = float(rng.uniform(*zoom_range))
    if rng.random() < 0.5:
        plan.intensity_shift = float(rng.uniform(*shift_range))
    return plan


def _resize(arr: np.ndarray, out_shape, nearest: bool) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))[None, None]
    mode = "nearest-exact" if nearest else "trilinear"
    kwargs = {} if nearest else {"align_corners": False}
    out = F.interpolate(t, size=tuple(out_shape), mode=mode, **kwargs)
    return out[0, 0].numpy()


def _crop_or_pad(arr: np.ndarray, target_shape, pad_mode: str) -> np.ndarray:
    slices, pads = [], []
    for n, t in zip(arr.shape, target_shape):
        if n >= t:
            lo = (n - t) // 2
            slices.append(slice(lo, lo + t))
            pads.append((0, 0))
        else:
            slices.append(slice(0, n))
            lo = (t - n) // 2
            pads.append((lo, t - n - lo))
    out = arr[tuple(slices)]
    if any(p != (0, 0) for p in pads):
        out = np.pad(out, pads, mode=pad_mode)
    return out


def apply_augment_plan(p: Patch, plan: AugmentPlan) -> Patch:
    if plan.is_identity:
        return Patch(image=p.image.copy(), mask=p.mask.copy(), center=p.center,
                     contains_foreground=p.contains_foreground)
    image, mask = p.image, p.mask
    if plan.flip_axis is not None:
        image = np.flip(image, axis=plan.flip_axis)
        mask = np.flip(mask, axis=plan.flip_axis)
    if plan.rotation is not None:
        axes, k = plan.rotation
        image = np.rot90(image, k=k, axes=axes)
        mask = np.rot90(mask, k=k, axes=axes)
    if plan.zoom is not None:
        zoomed_shape = [max(1, int(round(n * plan.zoom))) for n in image.shape]
        zoomed_img = _resize(image, zoomed_shape, nearest=False)
        zoomed_msk = _resize(mask, zoomed_shape, nearest=True)
        image = _crop_or_pad(zoomed_img, p.image.shape, pad_mode="edge")
        mask = _crop_or_pad(zoomed_msk, p.image.shape, pad_mode="constant")
    image = np.ascontiguousarray(image, dtype=np.float32)
    mask = np.ascontiguousarray(mask).astype(np.uint8)
    if plan.intensity_shift is not None:
        image = image + np.float32(plan.intensity_shift)
    return Patch(image=image, mask=mask, center=p.center,
                 contains_foreground=bool(mask.any()))


def augment(p: Patch, rng_seed: int) -> Patch:
    """Seeded random flip / 90-degree rotation / zoom / intensity shift.

    Masks get the identical spatial transforms with nearest-neighbor
    interpolation; rotations are restricted to 90-degree multiples so masks
    stay exactly binary.
    """
    plan = draw_augment_plan(np.random.default_rng(rng_seed))
    return apply_augment_plan(p, plan)


def upsample_patch(p: Patch, model_input_size: int) -> Patch:
    """Upsample a patch to the model input resolution (trilinear/nearest)."""
    if any(model_input_size < n for n in p.image.shape):
        raise ValueError(
            f"model_input_size {model_input_size} smaller than patch {p.image.shape}")
    if p.image.shape == (model_input_size,) * 3:
        return Patch(image=p.image.copy(), mask=p.mask.copy(), center=p.center,
                     contains_foreground=p.contains_foreground)
    out_shape = (model_input_size,) * 3
    image = _resize(p.image, out_shape, nearest=False).astype(np.float32)
    mask = _resize(p.mask, out_shape, nearest=True).astype(np.uint8)
    return Patch(image=image, mask=mask, center=p.center,
                 contains_foreground=bool(mask.any()))
