"""HTTP inference service for interactive prompting.

Volumes are uploaded once, preprocessed with the checkpoint's spec, and held
in a bounded LRU cache. Slice renders are served as PNGs from the
preprocessed grid; segmentation requests carry point prompts in that same
voxel frame (identical to the source frame for volumes already at the target
spacing). Model forwards are serialized; a second segment request for a
volume whose inference is still running gets 409 and may retry.
"""

from __future__ import annotations

import io as stdio
import tempfile
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from PIL import Image

from .config import ModelConfig
from .data.io import load_volume, save_mask
from .data.preprocess import preprocess_case
from .data.volume import LabelMask, Volume
from .inference import WINDOW_POLICIES, infer_volume
from .models.network import PromptSegNetwork
from .prompts import prompts_from_json

GZIP_MAGIC = b"\x1f\x8b"


@dataclass
class StoredVolume:
    volume: Volume
    window_default: tuple[float, float]
    busy: threading.Lock = field(default_factory=threading.Lock)


class VolumeStore:
    """LRU cache of preprocessed volumes and their masks."""

    def __init__(self, max_volumes: int = 8):
        if max_volumes < 1:
            raise ValueError("max_volumes must be >= 1")
        self.max_volumes = max_volumes
        self._lock = threading.Lock()
        self._volumes: OrderedDict[str, StoredVolume] = OrderedDict()
        self._masks: dict[str, tuple[str, LabelMask]] = {}

    def put(self, stored: StoredVolume) -> str:
        volume_id = uuid.uuid4().hex[:12]
        with self._lock:
            self._volumes[volume_id] = stored
            while len(self._volumes) > self.max_volumes:
                evicted, _ = self._volumes.popitem(last=False)
                self._masks = {mid: (vid, m) for mid, (vid, m)
                               in self._masks.items() if vid != evicted}
        return volume_id

    def get(self, volume_id: str) -> StoredVolume:
        with self._lock:
            stored = self._volumes.get(volume_id)
            if stored is None:
                raise HTTPException(404, f"unknown volume {volume_id!r}")
            self._volumes.move_to_end(volume_id)
            return stored

    def put_mask(self, volume_id: str, mask: LabelMask) -> str:
        mask_id = uuid.uuid4().hex[:12]
        with self._lock:
            self._masks[mask_id] = (volume_id, mask)
        return mask_id

    def get_mask(self, mask_id: str) -> LabelMask:
        with self._lock:
            row = self._masks.get(mask_id)
        if row is None:
            raise HTTPException(404, f"unknown mask {mask_id!r}")
        return row[1]


def _slice_2d(data: np.ndarray, axis: int, index: int) -> np.ndarray:
    if axis not in (0, 1, 2):
        raise HTTPException(422, f"axis must be 0, 1 or 2, got {axis}")
    if not 0 <= index < data.shape[axis]:
        raise HTTPException(422, f"slice index {index} out of range "
                                 f"[0, {data.shape[axis]}) for axis {axis}")
    return np.take(data, index, axis=axis)


def _png_response(img: Image.Image) -> Response:
    buf = stdio.BytesIO()
    img.save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


def create_app(model: PromptSegNetwork, config: ModelConfig,
               max_volumes: int = 8) -> FastAPI:
    app = FastAPI(title="promptseg3d", docs_url=None, redoc_url=None)
    store = VolumeStore(max_volumes=max_volumes)
    model_lock = threading.Lock()
    model.eval()
    app.state.store = store

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/volumes")
    async def upload_volume(request: Request):
        body = await request.body()
        if not body:
            raise HTTPException(422, "empty upload body")
        suffix = ".nii.gz" if body[:2] == GZIP_MAGIC else ".nii"
        with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as tmp:
            tmp.write(body)
            tmp_path = Path(tmp.name)
        try:
            volume, _ = load_volume(tmp_path)
            volume, _ = preprocess_case(volume, None, config.data.preprocess)
        except Exception as exc:
            raise HTTPException(422, f"could not read volume: {exc}") from None
        finally:
            tmp_path.unlink(missing_ok=True)
        lo, hi = np.percentile(volume.data, (1.0, 99.0))
        if hi <= lo:
            hi = lo + 1.0
        stored = StoredVolume(volume=volume, window_default=(float(lo), float(hi)))
        volume_id = store.put(stored)
        return {"volume_id": volume_id,
                "shape": [int(n) for n in volume.shape],
                "spacing": [float(s) for s in volume.spacing]}

    @app.get("/volumes/{volume_id}/slices/{axis}/{index}")
    def volume_slice(volume_id: str, axis: int, index: int,
                     lo: float | None = None, hi: float | None = None):
        stored = store.get(volume_id)
        plane = _slice_2d(stored.volume.data, axis, index).astype(np.float32)
        w_lo = stored.window_default[0] if lo is None else lo
        w_hi = stored.window_default[1] if hi is None else hi
        if w_hi <= w_lo:
            raise HTTPException(422, f"window hi ({w_hi}) must exceed lo ({w_lo})")
        gray = np.clip((plane - w_lo) / (w_hi - w_lo), 0.0, 1.0)
        return _png_response(Image.fromarray((gray * 255).astype(np.uint8), "L"))

    @app.post("/volumes/{volume_id}/segment")
    def segment(volume_id: str, payload: dict):
        stored = store.get(volume_id)
        try:
            prompts = prompts_from_json(payload)
        except ValueError as exc:
            raise HTTPException(422, f"malformed prompts: {exc}") from None
        policy = payload.get("policy", "prompt_centered")
        if policy not in WINDOW_POLICIES:
            raise HTTPException(422, f"unknown policy {policy!r}")
        if not stored.busy.acquire(blocking=False):
            raise HTTPException(
                409, f"inference already running for volume {volume_id!r}")
        try:
            with model_lock:
                mask, _ = infer_volume(stored.volume, prompts, model, config,
                                       policy=policy)
        finally:
            stored.busy.release()
        mask_id = store.put_mask(volume_id, mask)
        return {"mask_id": mask_id, "dice": None}

    @app.get("/masks/{mask_id}/slices/{axis}/{index}")
    def mask_slice(mask_id: str, axis: int, index: int):
        mask = store.get_mask(mask_id)
        plane = _slice_2d(mask.data, axis, index)
        rgba = np.zeros(plane.shape + (4,), dtype=np.uint8)
        rgba[plane > 0] = (255, 64, 64, 255)  # binary alpha: on or fully off
        return _png_response(Image.fromarray(rgba, "RGBA"))

    @app.get("/masks/{mask_id}")
    def download_mask(mask_id: str):
        mask = store.get_mask(mask_id)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "mask.nii.gz"
            save_mask(mask, path)
            data = path.read_bytes()
        return Response(content=data, media_type="application/octet-stream",
                        headers={"Content-Disposition":
                                 f'attachment; filename="{mask_id}.nii.gz"'})

    return app


def serve(model: PromptSegNetwork, config: ModelConfig, host: str = "127.0.0.1",
          port: int = 8000, max_volumes: int = 8) -> None:
    import uvicorn
    uvicorn.run(create_app(model, config, max_volumes=max_volumes),
                host=host, port=port)
