"""Model persistence and canonical state digests.

Checkpoints are torch archives holding a format version, the model kind and
spec, and the state dict. The digest hashes tensors by sorted name over
their raw little-endian bytes, so two runs agree on a digest exactly when
every parameter (and any extra state handed in) is bit-identical, regardless
of file-level metadata.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..errors import FormatError
from .adversary import (
    Discriminator,
    DiscriminatorSpec,
    GeneratorSpec,
    HardNegativeGenerator,
)
from .detector import Detector, DetectorSpec

CHECKPOINT_VERSION = 1

_KINDS = {
    "detector": (Detector, DetectorSpec),
    "generator": (HardNegativeGenerator, GeneratorSpec),
    "discriminator": (Discriminator, DiscriminatorSpec),
}


def _kind_of(model: nn.Module) -> str:
    for kind, (cls, _spec_cls) in _KINDS.items():
        if isinstance(model, cls):
            return kind
    raise FormatError(f"cannot checkpoint model of type {type(model).__name__}")


def save_model(path, model: nn.Module) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": _kind_of(model),
        "spec": dataclasses.asdict(model.spec),
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)


def load_model(path, dtype: torch.dtype = torch.float32) -> nn.Module:
    payload = load_payload(path)
    kind = payload.get("kind")
    if kind not in _KINDS:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    cls, spec_cls = _KINDS[kind]
    spec_dict = dict(payload["spec"])
    for f in dataclasses.fields(spec_cls):
        if isinstance(spec_dict.get(f.name), list):
            spec_dict[f.name] = tuple(spec_dict[f.name])
    model = cls(spec_cls(**spec_dict), dtype=dtype)
    model.load_state_dict({k: v.to(dtype) for k, v in payload["state_dict"].items()})
    return model


def save_payload(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_payload(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such checkpoint")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise FormatError(f"{path}: cannot load checkpoint ({e})") from e
    if not isinstance(payload, dict):
        raise FormatError(f"{path}: checkpoint is not a payload dict")
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version!r}")
    return payload


def state_digest(state: dict) -> str:
    """sha256 over the canonical serialization of a (possibly nested) state
    mapping of tensors, arrays and scalars, keyed by sorted flat path."""
    h = hashlib.sha256()
    for key, value in _flatten("", state):
        h.update(key.encode())
        h.update(b"\x00")
        h.update(value)
        h.update(b"\x01")
    return h.hexdigest()


def _flatten(prefix: str, obj) -> list[tuple[str, bytes]]:
    if isinstance(obj, dict):
        out = []
        for k in sorted(obj, key=str):
            out.extend(_flatten(f"{prefix}/{k}", obj[k]))
        return out
    if isinstance(obj, torch.Tensor):
        arr = obj.detach().cpu().contiguous().numpy()
        return [(prefix, _canonical_bytes(arr))]
    if isinstance(obj, np.ndarray):
        return [(prefix, _canonical_bytes(obj))]
    if isinstance(obj, (list, tuple)):
        out = []
        for i, v in enumerate(obj):
            out.extend(_flatten(f"{prefix}/{i}", v))
        return out
    return [(prefix, repr(obj).encode())]


def _canonical_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr.dtype.str.encode() + str(arr.shape).encode() + arr.tobytes()
