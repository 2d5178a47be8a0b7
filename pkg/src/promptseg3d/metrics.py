"""Evaluation metrics: Dice overlap and normalized surface Dice (NSD)."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .data.volume import LabelMask

_SIX_CONN = ndimage.generate_binary_structure(3, 1)


def _as_binary(mask) -> np.ndarray:
    data = mask.data if isinstance(mask, LabelMask) else np.asarray(mask)
    if data.ndim != 3:
        raise ValueError(f"mask must be 3D, got ndim {data.ndim}")
    if not np.isin(np.unique(data), (0, 1)).all():
        raise ValueError("mask values must be binary")
    return data.astype(bool)


def dice_score(seg, gt) -> float:
    """2|S∩G| / (|S|+|G|); 1.0 when both masks are empty."""
    s, g = _as_binary(seg), _as_binary(gt)
    if s.shape != g.shape:
        raise ValueError(f"shape mismatch {s.shape} vs {g.shape}")
    total = int(s.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(s, g).sum()) / total


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels 6-adjacent to background (outside counts as background)."""
    m = _as_binary(mask)
    eroded = ndimage.binary_erosion(m, structure=_SIX_CONN, border_value=0)
    return m & ~eroded


def nsd_score(seg, gt, tolerance_mm: float = 1.0, spacing=(1.0, 1.0, 1.0)) -> float:
    """Normalized surface Dice at a distance tolerance (spacing-aware, exact EDT).

    Fraction of each mask's surface voxels lying within ``tolerance_mm`` of
    the other mask's surface, summed over both directions. Conventions: both
    masks empty -> 1.0, exactly one empty -> 0.0.
    """
    if tolerance_mm < 0:
        raise ValueError("tolerance must be >= 0")
    s, g = _as_binary(seg), _as_binary(gt)
    if s.shape != g.shape:
        raise ValueError(f"shape mismatch {s.shape} vs {g.shape}")
    s_any, g_any = bool(s.any()), bool(g.any())
    if not s_any and not g_any:
        return 1.0
    if s_any != g_any:
        return 0.0
    s_surf = surface_voxels(s)
    g_surf = surface_voxels(g)
    spacing = tuple(float(x) for x in spacing)
    dist_to_g = ndimage.distance_transform_edt(~g_surf, sampling=spacing)
    dist_to_s = ndimage.distance_transform_edt(~s_surf, sampling=spacing)
    s_close = int((dist_to_g[s_surf] <= tolerance_mm).sum())
    g_close = int((dist_to_s[g_surf] <= tolerance_mm).sum())
    return (s_close + g_close) / (int(s_surf.sum()) + int(g_surf.sum()))


def metrics_report(case_id: str, seg, gt, tolerance_mm: float = 1.0,
                   spacing=(1.0, 1.0, 1.0), prompt_count: int = 1) -> dict:
    """One evaluation row in the published report schema."""
    return {
        "case_id": case_id,
        "dice": dice_score(seg, gt),
        "nsd": nsd_score(seg, gt, tolerance_mm=tolerance_mm, spacing=spacing),
        "tolerance_mm": tolerance_mm,
        "prompt_count": prompt_count,
    }
