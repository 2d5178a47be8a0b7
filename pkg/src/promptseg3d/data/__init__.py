from .volume import LabelMask, Volume, VolumeError, foreground_mask
from .io import load_volume, save_mask, save_volume, read_nifti, write_nifti
from .preprocess import PreprocessSpec, clip_and_normalize, preprocess_case, resample, resample_mask
from .patches import (AugmentPlan, Patch, apply_augment_plan, augment,
                      derive_seed, draw_augment_plan, sample_patch, upsample_patch)
from .synthetic import SyntheticSpec, generate_synthetic_case, write_synthetic_dataset
from .manifest import (ManifestEntry, assign_splits, entries_for_split,
                       load_manifest, resolve_path, save_manifest)

__all__ = [
    "Volume", "LabelMask", "VolumeError", "foreground_mask",
    "load_volume", "save_volume", "save_mask", "read_nifti", "write_nifti",
    "PreprocessSpec", "resample", "resample_mask", "clip_and_normalize",
    "preprocess_case",
    "Patch", "sample_patch", "augment", "upsample_patch", "AugmentPlan",
    "draw_augment_plan", "apply_augment_plan", "derive_seed",
    "SyntheticSpec", "generate_synthetic_case", "write_synthetic_dataset",
    "ManifestEntry", "assign_splits", "save_manifest", "load_manifest",
    "entries_for_split", "resolve_path",
]
