"""Spacing resampling and foreground-statistics intensity normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volume import LabelMask, Volume, VolumeError

log = logging.getLogger(__name__)


@dataclass
class PreprocessSpec:
    """Intensity/spacing preprocessing parameters.

    Clipping percentiles are computed over foreground voxels; z-score
    statistics come from the clipped foreground and are applied globally.
    """

    target_spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    clip_lo_pct: float = 0.5
    clip_hi_pct: float = 99.5
    normalize: bool = True
    foreground_method: str = "nonzero"  # or "above_median" for synthetic data

    def __post_init__(self):
        if not 0 <= self.clip_lo_pct < self.clip_hi_pct <= 100:
            raise ValueError(
                f"need 0 <= lo < hi <= 100, got ({self.clip_lo_pct}, {self.clip_hi_pct})")


def _resample_array(data: np.ndarray, in_spacing, out_spacing, out_shape,
                    order: int) -> np.ndarray:
    """Resample by direct index mapping: out[j] = in[j * out_spacing/in_spacing].

    Output index j along an axis maps to source index j * ratio, so lattice
    points shared by both grids copy source values exactly and ratio==1 is an
    identity.
    """
    ratios = [o / i for i, o in zip(in_spacing, out_spacing)]
    if all(abs(r - 1.0) < 1e-12 for r in ratios) and tuple(out_shape) == data.shape:
        return data.copy()
    coords = np.meshgrid(
        *(np.arange(n, dtype=np.float64) * r for n, r in zip(out_shape, ratios)),
        indexing="ij",
    )
    out = ndimage.map_coordinates(
        data.astype(np.float32 if order > 0 else data.dtype),
        np.stack(coords), order=order, mode="nearest")
    return out


def resample(v: Volume, target_spacing) -> Volume:
    """Resample a volume to a new voxel spacing with trilinear interpolation.

    Output shape is round(shape * spacing / target_spacing) per axis.
    """
    target_spacing = tuple(float(s) for s in target_spacing)
    if any(s <= 0 for s in target_spacing):
        raise VolumeError(f"target spacing must be positive, got {target_spacing}")
    out_shape = tuple(
        int(round(n * s / t)) for n, s, t in zip(v.shape, v.spacing, target_spacing))
    if any(n < 1 for n in out_shape):
        raise VolumeError(
            f"resampling {v.shape} at {v.spacing} to {target_spacing} "
            f"gives degenerate shape {out_shape}")
    out = _resample_array(v.data, v.spacing, target_spacing, out_shape, order=1)
    return Volume(data=out.astype(np.float32), spacing=target_spacing,
                  origin=v.origin, id=v.id)


def resample_mask(m: LabelMask, target_spacing) -> LabelMask:
    """Nearest-neighbor counterpart of :func:`resample` for binary masks."""
    target_spacing = tuple(float(s) for s in target_spacing)
    out_shape = tuple(
        int(round(n * s / t)) for n, s, t in zip(m.shape, m.spacing, target_spacing))
    if any(n < 1 for n in out_shape):
        raise VolumeError(f"degenerate mask resample shape {out_shape}")
    out = _resample_array(m.data, m.spacing, target_spacing, out_shape, order=0)
    return LabelMask(data=out.astype(np.uint8), spacing=target_spacing,
                     origin=m.origin, id=m.id)


def clip_and_normalize(v: Volume, fg: LabelMask | np.ndarray,
                       spec: PreprocessSpec | None = None) -> Volume:
    """Percentile-clip and z-score a volume using foreground statistics.

    Intensities are clipped to the [lo, hi] foreground percentiles, then the
    whole volume is standardized by the clipped foreground mean/std, so the
    foreground lands at mean 0 / std 1. Empty foreground falls back to
    whole-volume statistics (with a warning); zero foreground variance is an
    error.
    """
    spec = spec or PreprocessSpec()
    fg_data = fg.data if isinstance(fg, LabelMask) else np.asarray(fg)
    if fg_data.shape != v.shape:
        raise VolumeError(f"foreground shape {fg_data.shape} != volume {v.shape}")
    selector = fg_data.astype(bool)
    if not selector.any():
        log.warning("volume %s: empty foreground, using whole-volume statistics", v.id)
        selector = np.ones(v.shape, dtype=bool)
    fg_values = v.data[selector].astype(np.float64)
    lo, hi = np.percentile(fg_values, [spec.clip_lo_pct, spec.clip_hi_pct])
    clipped = np.clip(v.data, lo, hi)
    if not spec.normalize:
        return v.with_data(clipped.astype(np.float32))
    fg_clipped = clipped[selector].astype(np.float64)
    mu = fg_clipped.mean()
    sigma = fg_clipped.std()
    if sigma == 0:
        raise VolumeError(
            f"volume {v.id!r}: zero foreground intensity variance, cannot z-score")
    out = ((clipped - mu) / sigma).astype(np.float32)
    return v.with_data(out)


def preprocess_case(v: Volume, m: LabelMask | None,
                    spec: PreprocessSpec | None = None) -> tuple[Volume, LabelMask | None]:
    """Full preprocessing: resample to target spacing, then clip+normalize."""
    spec = spec or PreprocessSpec()
    v = resample(v, spec.target_spacing_mm)
    if m is not None:
        m = resample_mask(m, spec.target_spacing_mm)
        m.check_paired(v)
    from .volume import foreground_mask
    fg = foreground_mask(v, spec.foreground_method)
    v = clip_and_normalize(v, fg, spec)
    v.validate_finite()
    return v, m
