"""Raster container and on-disk formats.

A raster is a (channels, height, width) float32 cube with an optional boolean
validity mask (True = usable pixel). Two byte layouts are supported:

* ``native`` : a 20-byte little-endian header (magic ``BDRS``, format version,
  dtype code, reserved, C, H, W) followed by the band-sequential payload.
* ``flat``   : a bare band-sequential float32 payload next to a JSON sidecar
  ``<file>.json`` holding ``channels``/``height``/``width``/``dtype``.

Masks travel as a companion native file ``<stem>.mask`` with dtype uint8 and a
single channel; nonzero means valid.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DegenerateChannelError, FormatError, IntegrityError

MAGIC = b"BDRS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBBHIII")
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("u1")}
_DTYPE_TO_CODE = {np.dtype("<f4"): 1, np.dtype("u1"): 2}


@dataclass
class Raster:
    """In-memory raster. ``values`` is (C, H, W) float32; ``mask`` is (H, W)
    bool or None meaning all pixels valid."""

    raster_id: str
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.values.ndim != 3:
            raise IntegrityError(
                f"raster {self.raster_id!r}: values must be (C, H, W), got ndim={self.values.ndim}"
            )
        if self.values.dtype != np.float32:
            self.values = self.values.astype(np.float32)
        if self.mask is not None:
            if self.mask.shape != self.values.shape[1:]:
                raise IntegrityError(
                    f"raster {self.raster_id!r}: mask shape {self.mask.shape} does not match "
                    f"spatial shape {self.values.shape[1:]}"
                )
            if self.mask.dtype != np.bool_:
                self.mask = self.mask.astype(bool)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def valid_mask(self) -> np.ndarray:
        """Mask as a concrete array even when stored as None."""
        if self.mask is None:
            return np.ones(self.values.shape[1:], dtype=bool)
        return self.mask


@dataclass
class NormalizationStats:
    """Per-channel mean and standard deviation computed over valid pixels of
    the training rasters."""

    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
        )


def _write_native(path: Path, array: np.ndarray) -> None:
    dtype = np.dtype("<f4") if array.dtype.kind == "f" else np.dtype("u1")
    code = _DTYPE_TO_CODE[dtype]
    c, h, w = array.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, code, 0, c, h, w))
        f.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def _read_native(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header ({len(raw)} bytes)")
    magic, version, code, _reserved, c, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    expected = c * h * w * dtype.itemsize
    payload = raw[_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(c, h, w).copy()


def _mask_path(path: Path) -> Path:
    return path.with_name(path.stem + ".mask" + path.suffix)


def save_raster(path, raster: Raster, format: str = "native") -> None:
    """Write a raster (and its mask companion, when present) to disk."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "native":
        _write_native(path, raster.values)
    elif format == "flat":
        with open(path, "wb") as f:
            f.write(np.ascontiguousarray(raster.values, dtype="<f4").tobytes())
        sidecar = {
            "channels": raster.channels,
            "height": raster.height,
            "width": raster.width,
            "dtype": "float32",
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar))
    else:
        raise FormatError(f"unknown raster format {format!r}")
    if raster.mask is not None:
        _write_native(_mask_path(path), raster.mask.astype(np.uint8)[None])


def load_raster(path, format: str = "native", raster_id: Optional[str] = None) -> Raster:
    """Read a raster; picks up ``<stem>.mask`` automatically when present."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    if format == "native":
        values = _read_native(path)
        if values.dtype != np.float32:
            values = values.astype(np.float32)
    elif format == "flat":
        sidecar_path = Path(str(path) + ".json")
        if not sidecar_path.exists():
            raise FormatError(f"{sidecar_path}: sidecar missing for flat raster")
        try:
            meta = json.loads(sidecar_path.read_text())
            c, h, w = int(meta["channels"]), int(meta["height"]), int(meta["width"])
        except (ValueError, KeyError, TypeError) as e:
            raise FormatError(f"{sidecar_path}: bad sidecar ({e})") from e
        if meta.get("dtype", "float32") != "float32":
            raise FormatError(f"{sidecar_path}: unsupported dtype {meta.get('dtype')!r}")
        raw = path.read_bytes()
        if len(raw) != c * h * w * 4:
            raise FormatError(
                f"{path}: payload is {len(raw)} bytes, sidecar promises {c * h * w * 4}"
            )
        values = np.frombuffer(raw, dtype="<f4").reshape(c, h, w).copy()
    else:
        raise FormatError(f"unknown raster format {format!r}")

    mask = None
    mp = _mask_path(path)
    if mp.exists():
        m = _read_native(mp)
        if m.shape[0] != 1 or m.shape[1:] != values.shape[1:]:
            raise IntegrityError(f"{mp}: mask shape {m.shape} does not match raster")
        mask = m[0] != 0
    return Raster(raster_id=raster_id or path.stem, values=values, mask=mask)


def compute_normalization(rasters: list[Raster]) -> NormalizationStats:
    """Per-channel mean/std over valid pixels pooled across ``rasters``.

    Accumulates in float64. A channel whose pooled variance is numerically
    zero cannot be standardized and is reported as an error rather than
    silently producing infinities."""
    if not rasters:
        raise IntegrityError("normalization requested over an empty raster list")
    channels = rasters[0].channels
    total = np.zeros(channels, dtype=np.float64)
    total_sq = np.zeros(channels, dtype=np.float64)
    count = 0
    for r in rasters:
        if r.channels != channels:
            raise IntegrityError(
                f"raster {r.raster_id!r} has {r.channels} channels, expected {channels}"
            )
        m = r.valid_mask()
        v = r.values[:, m].astype(np.float64)
        total += v.sum(axis=1)
        total_sq += (v * v).sum(axis=1)
        count += int(m.sum())
    if count == 0:
        raise IntegrityError("normalization requested but every pixel is masked out")
    mean = total / count
    var = total_sq / count - mean * mean
    var = np.maximum(var, 0.0)
    std = np.sqrt(var)
    bad = np.flatnonzero(std < 1e-12)
    if bad.size:
        raise DegenerateChannelError(
            f"channels {bad.tolist()} have zero variance over valid pixels"
        )
    return NormalizationStats(mean=mean, std=std)


def normalize_raster(raster: Raster, stats: NormalizationStats) -> Raster:
    """Standardize each channel; masked pixels are zeroed so downstream
    windows never see garbage through the mask."""
    if stats.mean.shape[0] != raster.channels:
        raise IntegrityError(
            f"stats cover {stats.mean.shape[0]} channels, raster has {raster.channels}"
        )
    mean = stats.mean.astype(np.float32)[:, None, None]
    std = stats.std.astype(np.float32)[:, None, None]
    values = (raster.values - mean) / std
    if raster.mask is not None:
        values = values * raster.mask[None].astype(np.float32)
    if not np.isfinite(values).all():
        raise IntegrityError(
            f"raster {raster.raster_id!r}: non-finite values after normalization"
        )
    return replace(raster, values=values)
