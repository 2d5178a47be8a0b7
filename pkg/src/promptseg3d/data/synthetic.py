"""Desk-scale synthetic CT-like cases: noisy background, bias field, blobs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import LabelMask, Volume


@dataclass
class SyntheticSpec:
    shape: tuple[int, int, int] = (32, 32, 32)
    n_blobs: int = 1
    blob_radius_range: tuple[float, float] = (4.0, 6.0)
    noise_std: float = 0.1
    foreground_contrast: float = 1.0
    bias_strength: float = 0.2
    boundary_irregularity: float = 0.15


def generate_synthetic_case(spec: SyntheticSpec, rng_seed: int) -> tuple[Volume, LabelMask]:
    """Generate a paired (volume, mask) case at 1mm isotropic spacing.

    The volume is Gaussian noise plus a smooth bias field; the mask is a
    union of ellipsoids whose radius is perturbed by a smooth random field so
    boundaries are irregular. Foreground voxels get an elevated mean
    intensity. Deterministic per (spec, rng_seed).
    """
    shape = tuple(int(n) for n in spec.shape)
    r_lo, r_hi = spec.blob_radius_range
    if spec.n_blobs > 0 and 2 * r_hi + 2 > min(shape):
        raise ValueError(
            f"blob radius up to {r_hi} does not fit within shape {shape}")
    rng = np.random.default_rng(rng_seed)

    image = rng.normal(0.0, spec.noise_std, size=shape).astype(np.float32)
    coarse = rng.uniform(-1.0, 1.0, size=(4, 4, 4))
    zoom = [n / 4 for n in shape]
    bias = ndimage.zoom(coarse, zoom, order=1, mode="nearest")
    image += (spec.bias_strength * bias).astype(np.float32)

    mask = np.zeros(shape, dtype=bool)
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    for _ in range(spec.n_blobs):
        radii = rng.uniform(r_lo, r_hi, size=3)
        center = [rng.uniform(r + 1, n - 1 - r - 1) if n - 2 > 2 * r else n / 2
                  for r, n in zip(radii, shape)]
        implicit = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
        wobble = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=2.0)
        wobble /= max(wobble.std(), 1e-8)
        mask |= implicit <= 1.0 + spec.boundary_irregularity * wobble

    image[mask] += np.float32(spec.foreground_contrast)
    vol = Volume(data=image, spacing=(1.0, 1.0, 1.0), id=f"synth-{rng_seed}")
    lbl = LabelMask(data=mask.astype(np.uint8), spacing=(1.0, 1.0, 1.0),
                    id=vol.id)
    return vol, lbl


def write_synthetic_dataset(out_dir, n_cases: int, spec: SyntheticSpec | None = None,
                            seed: int = 0, file_format: str = "nii.gz"):
    """Write n synthetic cases plus a train/val/test manifest; returns its path."""
    from .io import save_mask, save_volume
    from .manifest import ManifestEntry, assign_splits, save_manifest

    spec = spec or SyntheticSpec()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = {"nii.gz": ".nii.gz", "nii": ".nii", "raw": ".raw"}[file_format]
    splits = assign_splits(n_cases)
    entries = []
    for i in range(n_cases):
        vol, msk = generate_synthetic_case(spec, rng_seed=seed + i)
        image_name = f"case_{i:03d}_image{suffix}"
        mask_name = f"case_{i:03d}_mask{suffix}"
        save_volume(vol, out_dir / image_name)
        save_mask(msk, out_dir / mask_name)
        entries.append(ManifestEntry(image_path=image_name, mask_path=mask_name,
                                     split=splits[i]))
    manifest_path = out_dir / "manifest.json"
    save_manifest(entries, manifest_path)
    return manifest_path
