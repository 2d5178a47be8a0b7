"""Core 3D volume and binary mask containers.

Arrays are indexed ``[z, y, x]`` = axes ``(0, 1, 2)``; ``spacing[i]`` is the
voxel size in millimeters along data axis ``i``. For NIfTI files the on-disk
(i, j, k) order is kept as-is, so spacing is a passthrough of the header
pixdims; the z/y/x names are a pure axis-naming convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Triple = tuple[float, float, float]


class VolumeError(ValueError):
    """Raised for invalid volume/mask data or metadata."""


@dataclass
class Volume:
    """A 3D scalar image with voxel spacing and world-origin metadata."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)
    id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise VolumeError(f"volume data must have 3 axes, got {self.data.ndim}")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be 3 positive values, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def validate_finite(self) -> None:
        """Check the no-NaN/Inf invariant (holds after preprocessing)."""
        if not np.isfinite(self.data).all():
            raise VolumeError(f"volume {self.id!r} contains NaN or Inf values")

    def with_data(self, data: np.ndarray, spacing: Triple | None = None) -> "Volume":
        return Volume(data=data, spacing=spacing or self.spacing,
                      origin=self.origin, id=self.id)


@dataclass
class LabelMask:
    """Binary mask aligned with a :class:`Volume` (same shape and spacing)."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)
    id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise VolumeError(f"mask data must have 3 axes, got {self.data.ndim}")
        values = np.unique(self.data)
        if not np.isin(values, (0, 1)).all():
            raise VolumeError(f"mask values must be binary, found {values[:8]}")
        self.data = self.data.astype(np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def check_paired(self, volume: Volume) -> None:
        if self.data.shape != volume.data.shape:
            raise VolumeError(
                f"mask shape {self.data.shape} != volume shape {volume.data.shape}")
        if not np.allclose(self.spacing, volume.spacing, atol=1e-6):
            raise VolumeError(
                f"mask spacing {self.spacing} != volume spacing {volume.spacing}")


def foreground_mask(volume: Volume, method: str = "nonzero") -> np.ndarray:
    """Boolean foreground selector used for intensity statistics.

    ``nonzero`` is the CT convention (air/padding is exactly zero after many
    pipelines); ``above_median`` suits synthetic data where the background
    noise is centered but the objects are brighter.
    """
    if method == "nonzero":
        return volume.data != 0
    if method == "above_median":
        return volume.data > np.median(volume.data)
    raise ValueError(f"unknown foreground method {method!r}")
