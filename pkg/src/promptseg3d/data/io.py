"""Volume/mask file IO: NIfTI-1 (.nii/.nii.gz) and a raw+JSON fallback.

The NIfTI-1 codec is intentionally minimal: single-file images, the common
scalar dtypes, pixdim spacing, and an sform built from spacing+origin. Data
is kept in on-disk (i, j, k) index order so header spacing passes through
unchanged.

The fallback format is a little-endian C-order array in ``<stem>.raw`` with a
``<stem>.json`` sidecar holding ``{shape, spacing, origin, dtype}``.
"""

from __future__ import annotations

import gzip
import json
from pathlib import Path

import numpy as np

from .volume import LabelMask, Volume, VolumeError

_HDR_DTYPE = np.dtype([
    ("sizeof_hdr", "<i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "<i4"),
    ("session_error", "<i2"),
    ("regular", "u1"),
    ("dim_info", "u1"),
    ("dim", "<i2", (8,)),
    ("intent_p", "<f4", (3,)),
    ("intent_code", "<i2"),
    ("datatype", "<i2"),
    ("bitpix", "<i2"),
    ("slice_start", "<i2"),
    ("pixdim", "<f4", (8,)),
    ("vox_offset", "<f4"),
    ("scl_slope", "<f4"),
    ("scl_inter", "<f4"),
    ("slice_end", "<i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "<f4"),
    ("cal_min", "<f4"),
    ("slice_duration", "<f4"),
    ("toffset", "<f4"),
    ("glmax", "<i4"),
    ("glmin", "<i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "<i2"),
    ("sform_code", "<i2"),
    ("quatern", "<f4", (3,)),
    ("qoffset", "<f4", (3,)),
    ("srow_x", "<f4", (4,)),
    ("srow_y", "<f4", (4,)),
    ("srow_z", "<f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])
assert _HDR_DTYPE.itemsize == 348

_DTYPE_CODES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
    256: np.dtype(np.int8),
    512: np.dtype(np.uint16),
    768: np.dtype(np.uint32),
}
_CODE_FOR_DTYPE = {v: k for k, v in _DTYPE_CODES.items()}


def _is_nifti(path: Path) -> bool:
    name = path.name.lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def _read_bytes(path: Path) -> bytes:
    if path.name.lower().endswith(".gz"):
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _write_bytes(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.name.lower().endswith(".gz"):
        # empty filename (no FNAME field) + mtime=0 keeps writes byte-reproducible
        with open(path, "wb") as raw, gzip.GzipFile(
                filename="", fileobj=raw, mode="wb", mtime=0) as f:
            f.write(blob)
    else:
        path.write_bytes(blob)


def read_nifti(path) -> tuple[np.ndarray, tuple, tuple]:
    """Read a NIfTI-1 file, returning (data, spacing, origin)."""
    path = Path(path)
    blob = _read_bytes(path)
    if len(blob) < _HDR_DTYPE.itemsize:
        raise VolumeError(f"{path}: file shorter than a NIfTI-1 header")
    hdr = np.frombuffer(blob[:_HDR_DTYPE.itemsize], dtype=_HDR_DTYPE)[0]
    magic = bytes(hdr["magic"])[:3]
    if int(hdr["sizeof_hdr"]) != 348 or magic not in (b"n+1", b"ni1"):
        raise VolumeError(f"{path}: malformed NIfTI header "
                          f"(sizeof_hdr={int(hdr['sizeof_hdr'])}, magic={magic!r})")
    ndim = int(hdr["dim"][0])
    if not 1 <= ndim <= 7:
        raise VolumeError(f"{path}: invalid ndim {ndim}")
    shape = tuple(int(d) for d in hdr["dim"][1:1 + ndim])
    # trailing singleton dims (e.g. 4D with one frame) are squeezed to 3D
    while len(shape) > 3 and shape[-1] == 1:
        shape = shape[:-1]
    if len(shape) != 3:
        raise VolumeError(f"{path}: expected a 3D image, got shape {shape}")
    code = int(hdr["datatype"])
    if code not in _DTYPE_CODES:
        raise VolumeError(f"{path}: unsupported NIfTI datatype code {code}")
    dtype = _DTYPE_CODES[code].newbyteorder("<")
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in hdr["pixdim"][1:4])
    vox_offset = int(hdr["vox_offset"])
    if int(hdr["sform_code"]) > 0:
        origin = (float(hdr["srow_x"][3]), float(hdr["srow_y"][3]),
                  float(hdr["srow_z"][3]))
    else:
        origin = tuple(float(q) for q in hdr["qoffset"])
    n_vox = int(np.prod(shape))
    payload = blob[vox_offset:vox_offset + n_vox * dtype.itemsize]
    if len(payload) < n_vox * dtype.itemsize:
        raise VolumeError(f"{path}: truncated data section")
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    data = np.ascontiguousarray(data)
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope not in (0.0, 1.0) or inter != 0.0:
        slope = slope if slope != 0.0 else 1.0
        data = data.astype(np.float32) * slope + inter
    return data, spacing, origin


def write_nifti(path, data: np.ndarray, spacing, origin=(0.0, 0.0, 0.0)) -> None:
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise VolumeError(f"can only write 3D arrays, got ndim {data.ndim}")
    if data.dtype not in _CODE_FOR_DTYPE:
        data = data.astype(np.float32)
    data = data.astype(data.dtype.newbyteorder("<"), copy=False)
    sx, sy, sz = (float(s) for s in spacing)
    ox, oy, oz = (float(o) for o in origin)
    hdr = np.zeros((), dtype=_HDR_DTYPE)
    hdr["sizeof_hdr"] = 348
    hdr["dim"] = (3, data.shape[0], data.shape[1], data.shape[2], 1, 1, 1, 1)
    hdr["datatype"] = _CODE_FOR_DTYPE[np.dtype(data.dtype.name)]
    hdr["bitpix"] = data.dtype.itemsize * 8
    hdr["pixdim"] = (1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # millimeters
    hdr["descrip"] = b"promptseg3d"
    hdr["sform_code"] = 1
    hdr["qoffset"] = (ox, oy, oz)
    hdr["srow_x"] = (sx, 0.0, 0.0, ox)
    hdr["srow_y"] = (0.0, sy, 0.0, oy)
    hdr["srow_z"] = (0.0, 0.0, sz, oz)
    hdr["magic"] = b"n+1"
    blob = hdr.tobytes() + b"\x00\x00\x00\x00" + data.tobytes(order="F")
    _write_bytes(path, blob)


def _sidecar_path(raw_path: Path) -> Path:
    return raw_path.with_suffix(".json")


def read_raw(path) -> tuple[np.ndarray, tuple, tuple]:
    path = Path(path)
    raw_path = path.with_suffix(".raw") if path.suffix == ".json" else path
    sidecar = _sidecar_path(raw_path)
    if not sidecar.exists():
        raise VolumeError(f"{raw_path}: missing sidecar {sidecar.name}")
    meta = json.loads(sidecar.read_text())
    for key in ("shape", "spacing", "origin", "dtype"):
        if key not in meta:
            raise VolumeError(f"{raw_path}: sidecar missing {key!r}")
    dtype = np.dtype(meta["dtype"]).newbyteorder("<")
    data = np.fromfile(raw_path, dtype=dtype)
    expected = int(np.prod(meta["shape"]))
    if data.size != expected:
        raise VolumeError(f"{raw_path}: expected {expected} values, found {data.size}")
    return data.reshape(meta["shape"]), tuple(meta["spacing"]), tuple(meta["origin"])


def write_raw(path, data: np.ndarray, spacing, origin=(0.0, 0.0, 0.0)) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix(".raw")
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(data)
    if data.dtype not in (np.dtype(np.uint8), np.dtype(np.float32)):
        data = data.astype(np.float32)
    data = np.ascontiguousarray(data.astype(data.dtype.newbyteorder("<")))
    data.tofile(path)
    meta = {
        "shape": list(data.shape),
        "spacing": [float(s) for s in spacing],
        "origin": [float(o) for o in origin],
        "dtype": data.dtype.name,
    }
    _sidecar_path(path).write_text(json.dumps(meta, indent=2))


def load_volume(path, mask_path=None) -> tuple[Volume, LabelMask | None]:
    """Load a volume and, if given, its paired binary mask.

    Raises on missing files, malformed headers, non-binary mask values, and
    image/mask shape disagreement.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    reader = read_nifti if _is_nifti(path) else read_raw
    data, spacing, origin = reader(path)
    vol_id = path.name.split(".")[0]
    volume = Volume(data=np.ascontiguousarray(data, dtype=np.float32),
                    spacing=spacing, origin=origin, id=vol_id)
    if mask_path is None:
        return volume, None
    mask_path = Path(mask_path)
    if not mask_path.exists():
        raise FileNotFoundError(mask_path)
    reader = read_nifti if _is_nifti(mask_path) else read_raw
    mdata, mspacing, morigin = reader(mask_path)
    mask = LabelMask(data=mdata, spacing=mspacing, origin=morigin, id=volume.id)
    mask.check_paired(volume)
    return volume, mask


def save_volume(volume: Volume, path) -> None:
    path = Path(path)
    writer = write_nifti if _is_nifti(path) else write_raw
    writer(path, volume.data, volume.spacing, volume.origin)


def save_mask(mask: LabelMask, path) -> None:
    path = Path(path)
    writer = write_nifti if _is_nifti(path) else write_raw
    writer(path, mask.data.astype(np.uint8), mask.spacing, mask.origin)
