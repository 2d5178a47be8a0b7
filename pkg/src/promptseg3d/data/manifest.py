"""Dataset manifests: JSON lists of {image_path, mask_path, split}."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

SPLITS = ("train", "val", "test")
SPLIT_RATIOS = (0.7, 0.1, 0.2)


@dataclass
class ManifestEntry:
    image_path: str
    mask_path: str | None
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")


def assign_splits(n: int, ratios=SPLIT_RATIOS) -> list[str]:
    """Deterministic 0.7/0.1/0.2 split assignment by case index.

    Largest-remainder apportionment; once n >= 3 every split is non-empty.
    """
    if n <= 0:
        return []
    counts = [int(n * r) for r in ratios]
    remainders = [n * r - c for r, c in zip(ratios, counts)]
    for _ in range(n - sum(counts)):
        i = max(range(len(ratios)), key=lambda j: (remainders[j], -j))
        counts[i] += 1
        remainders[i] = -1.0
    if n >= len(ratios):
        for i, c in enumerate(counts):
            if c == 0:
                donor = max(range(len(counts)), key=lambda j: counts[j])
                counts[donor] -= 1
                counts[i] += 1
    return [name for name, c in zip(SPLITS, counts) for _ in range(c)]


def save_manifest(entries: list[ManifestEntry], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [{"image_path": e.image_path, "mask_path": e.mask_path,
                "split": e.split} for e in entries]
    path.write_text(json.dumps(payload, indent=2))


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    payload = json.loads(path.read_text())
    if not isinstance(payload, list):
        raise ValueError(f"{path}: manifest must be a JSON list")
    entries = []
    for row in payload:
        entries.append(ManifestEntry(image_path=row["image_path"],
                                     mask_path=row.get("mask_path"),
                                     split=row["split"]))
    return entries


def entries_for_split(entries: list[ManifestEntry], split: str) -> list[ManifestEntry]:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return [e for e in entries if e.split == split]


def resolve_path(entry_path: str, manifest_path) -> Path:
    """Manifest paths are relative to the manifest file unless absolute."""
    p = Path(entry_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p
