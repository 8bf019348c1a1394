"""On-disk formats: the OCTV slice container and binary PGM images.

OCTV layout::

    <dir>/meta.json
    <dir>/slice_00000.bin   little-endian uint16, row-major,
    <dir>/slice_00001.bin   rows = angle columns, columns = depth samples
    ...

``meta.json`` alone determines array shapes; readers never infer a shape
from a file size.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import FormatError, PixelRangeError, StackIOError, ValidationError

OCTV_FORMAT = "OCTV"
OCTV_VERSION = 1
_DTYPE = np.dtype("<u2")


@dataclass
class BScanPolar:
    """One catheter rotation: ``intensity[u, v]`` with ``u`` the angle column
    and ``v`` the depth row."""

    intensity: np.ndarray
    axial_position: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.intensity)
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError(f"B-scan must be a non-empty 2-D array, got shape {arr.shape}", field="intensity")
        if arr.dtype != np.uint16:
            raise FormatError(f"B-scan intensity must be uint16, got {arr.dtype}")
        self.intensity = arr

    @property
    def n_angles(self):
        return self.intensity.shape[0]

    @property
    def depth_samples(self):
        return self.intensity.shape[1]


@dataclass
class VolumeStack:
    """Pullback stack backed by one ``(slices, angles, depth)`` uint16 array."""

    data: np.ndarray
    pullback_step_d: float
    depth_resolution: float
    axial_positions: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValidationError(f"stack data must be 3-D, got shape {data.shape}", field="data")
        if data.shape[0] == 0:
            raise ValidationError("stack has no slices", field="slices")
        if data.dtype != np.uint16:
            raise FormatError(f"stack dtype must be uint16, got {data.dtype}")
        self.data = data
        if self.axial_positions is None:
            self.axial_positions = np.arange(data.shape[0]) * float(self.pullback_step_d)
        self.axial_positions = np.asarray(self.axial_positions, dtype=float)
        if self.axial_positions.shape != (data.shape[0],):
            raise ValidationError("axial_positions length must equal slice count", field="axial_positions")

    @classmethod
    def from_slices(cls, slices, pullback_step_d, depth_resolution, extra=None):
        slices = list(slices)
        if not slices:
            raise ValidationError("stack has no slices", field="slices")
        shape = slices[0].intensity.shape
        for i, s in enumerate(slices):
            if s.intensity.shape != shape:
                raise ValidationError(f"slice {i} has shape {s.intensity.shape}, expected {shape}", field="slices")
        data = np.stack([s.intensity for s in slices])
        pos = np.array([s.axial_position for s in slices], dtype=float)
        return cls(data, pullback_step_d, depth_resolution, pos, dict(extra or {}))

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, i):
        return BScanPolar(self.data[i], float(self.axial_positions[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def slices(self):
        return list(self)

    @property
    def shape(self):
        return self.data.shape


def _slice_name(i):
    return f"slice_{i:05d}.bin"


def write_meta(path, *, n_slices, n_angles, depth_samples, depth_resolution, pullback_step,
               axial_positions, extra=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": OCTV_FORMAT,
        "version": OCTV_VERSION,
        "dtype": "uint16",
        "byte_order": "little",
        "n_slices": int(n_slices),
        "n_angles": int(n_angles),
        "depth_samples": int(depth_samples),
        "depth_resolution": float(depth_resolution),
        "pullback_step": float(pullback_step),
        "axial_positions": [float(a) for a in axial_positions],
    }
    meta.update(extra or {})
    with open(path / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_slice(path, index, intensity):
    arr = np.ascontiguousarray(intensity, dtype=_DTYPE)
    with open(Path(path) / _slice_name(index), "wb") as fh:
        fh.write(arr.tobytes(order="C"))


def write_stack(stack: VolumeStack, path):
    """Write ``stack`` as an OCTV directory (overwrites existing slice files)."""
    path = Path(path)
    n, na, nd = stack.shape
    write_meta(
        path,
        n_slices=n,
        n_angles=na,
        depth_samples=nd,
        depth_resolution=stack.depth_resolution,
        pullback_step=stack.pullback_step_d,
        axial_positions=stack.axial_positions,
        extra=stack.extra,
    )
    for i in range(n):
        write_slice(path, i, stack.data[i])


_REQUIRED = {
    "n_slices": int,
    "n_angles": int,
    "depth_samples": int,
    "depth_resolution": (int, float),
    "pullback_step": (int, float),
}


def read_meta(path):
    path = Path(path)
    mfile = path / "meta.json"
    if not mfile.is_file():
        raise StackIOError(f"missing meta.json in {path}")
    try:
        meta = json.loads(mfile.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"meta.json is not valid JSON: {exc}") from exc
    if meta.get("format") != OCTV_FORMAT:
        raise FormatError(f"not an OCTV container (format={meta.get('format')!r})")
    for key, typ in _REQUIRED.items():
        if key not in meta:
            raise FormatError(f"meta.json lacks {key}", field=key)
        if not isinstance(meta[key], typ) or isinstance(meta[key], bool):
            raise FormatError(f"meta.json field {key} has wrong type", field=key)
    if meta.get("dtype", "uint16") != "uint16" or meta.get("byte_order", "little") != "little":
        raise FormatError(f"unsupported dtype {meta.get('dtype')!r}/{meta.get('byte_order')!r}; expected little-endian uint16")
    if meta["n_slices"] <= 0:
        raise ValidationError("meta.json declares an empty stack", field="n_slices")
    if meta["n_angles"] <= 0 or meta["depth_samples"] <= 0:
        raise FormatError("meta.json declares non-positive dimensions")
    return meta


def read_stack(path) -> VolumeStack:
    """Read an OCTV directory; every slice file must match the declared shape."""
    path = Path(path)
    meta = read_meta(path)
    n, na, nd = meta["n_slices"], meta["n_angles"], meta["depth_samples"]
    expected = na * nd * _DTYPE.itemsize
    data = np.empty((n, na, nd), dtype=np.uint16)
    for i in range(n):
        f = path / _slice_name(i)
        if not f.is_file():
            raise StackIOError(f"slice {i} missing: {f.name}", slice_index=i)
        size = os.path.getsize(f)
        if size != expected:
            raise StackIOError(
                f"slice {i} has {size} bytes, expected {expected} ({na}x{nd} uint16)", slice_index=i
            )
        data[i] = np.fromfile(f, dtype=_DTYPE).reshape(na, nd)
    known = {"format", "version", "dtype", "byte_order", "n_slices", "n_angles", "depth_samples",
             "depth_resolution", "pullback_step", "axial_positions"}
    extra = {k: v for k, v in meta.items() if k not in known}
    return VolumeStack(
        data,
        float(meta["pullback_step"]),
        float(meta["depth_resolution"]),
        meta.get("axial_positions"),
        extra,
    )


# -- PGM -------------------------------------------------------------------

def write_pgm(path, image, maxval=None):
    """Write a binary (P5) PGM. 16-bit samples are big-endian per the format."""
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise ValidationError(f"PGM image must be a non-empty 2-D array, got shape {img.shape}", field="image")
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if np.issubdtype(img.dtype, np.floating):
        if not np.all(np.isfinite(img)):
            raise PixelRangeError("PGM image contains non-finite values")
        img = np.rint(img)
    lo, hi = (int(img.min()), int(img.max()))
    if lo < 0:
        raise PixelRangeError(f"PGM values must be >= 0, got {lo}")
    if maxval is None:
        maxval = 255 if hi <= 255 else 65535
    if hi > maxval or maxval > 65535:
        raise PixelRangeError(f"value {hi} exceeds PGM maxval {maxval}")
    dt = ">u1" if maxval <= 255 else ">u2"
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img.astype(dt)).tobytes())


def read_pgm(path):
    """Read a binary PGM written by :func:`write_pgm` (comments allowed)."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated PGM header in {path}")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError(f"{path} is not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    dt = ">u1" if maxval <= 255 else ">u2"
    nbytes = w * h * np.dtype(dt).itemsize
    body = raw[pos:pos + nbytes]
    if len(body) != nbytes:
        raise FormatError(f"{path}: expected {nbytes} pixel bytes, found {len(body)}")
    img = np.frombuffer(body, dtype=dt).reshape(h, w)
    return img.astype(np.uint8 if maxval <= 255 else np.uint16)


def write_depth_pgm(path, depth):
    """Depth channel in samples as 16-bit PGM; values are rounded to integers."""
    depth = np.asarray(depth, dtype=float)
    if depth.size and np.nanmax(depth) > 65535:
        raise PixelRangeError(f"depth value {np.nanmax(depth):.0f} exceeds 65535 samples")
    write_pgm(path, depth, maxval=65535)


def write_mask_pgm(path, mask):
    write_pgm(path, np.asarray(mask, dtype=bool).astype(np.uint8) * 255, maxval=255)


def read_mask_pgm(path):
    img = read_pgm(path)
    return img > 127


def write_surface_map(surface, path_prefix):
    """Persist a SurfaceMap as ``<prefix>_depth.pgm`` (16-bit), ``_intensity.pgm``
    (8-bit, intensity >> 8) and ``_valid.pgm`` (0/255)."""
    prefix = str(path_prefix)
    write_depth_pgm(prefix + "_depth.pgm", surface.depth)
    inten = np.asarray(surface.intensity)
    if inten.dtype == np.uint16 or inten.max(initial=0) > 255:
        inten = (np.asarray(inten, dtype=np.uint32) >> 8).astype(np.uint8)
    write_pgm(prefix + "_intensity.pgm", inten, maxval=255)
    write_mask_pgm(prefix + "_valid.pgm", surface.valid)


def write_mask(mask, path):
    """Write a PatternMask (or bare boolean array) as 8-bit 0/255 PGM."""
    arr = getattr(mask, "mask", mask)
    write_mask_pgm(path, arr)


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
