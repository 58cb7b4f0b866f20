"""Dataset directory layout.

::

    <dir>/manifest.json     roles, channels, file names
    <dir>/rasters/*.bin     native rasters (+ .mask companions)
    <dir>/truth/*.bin       optional dense uint8 truth, one per test raster
    <dir>/labels.txt        sparse label sidecar

Roles are train_pos / train_neg / test_pos / test_neg. Everything is loaded
eagerly; rasters at the scales this package targets fit in memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import FormatError, IntegrityError
from .labels import LabelSet, read_label_sidecar, write_label_sidecar
from .raster import Raster, _read_native, _write_native, load_raster, save_raster

MANIFEST_VERSION = 1
ROLES = ("train_pos", "train_neg", "test_pos", "test_neg")


@dataclass
class Dataset:
    channels: int
    train_pos: list[Raster] = field(default_factory=list)
    train_neg: list[Raster] = field(default_factory=list)
    test_pos: list[Raster] = field(default_factory=list)
    test_neg: list[Raster] = field(default_factory=list)
    labels: LabelSet = field(default_factory=LabelSet)
    truth: dict[str, np.ndarray] = field(default_factory=dict)

    def rasters_by_id(self) -> dict[str, Raster]:
        out = {}
        for role in ROLES:
            for r in getattr(self, role):
                if r.raster_id in out:
                    raise IntegrityError(f"duplicate raster id {r.raster_id!r}")
                out[r.raster_id] = r
        return out

    def validate(self) -> None:
        for role in ROLES:
            for r in getattr(self, role):
                if r.channels != self.channels:
                    raise IntegrityError(
                        f"raster {r.raster_id!r} has {r.channels} channels, "
                        f"manifest says {self.channels}"
                    )
        self.labels.validate_against(self.rasters_by_id())


def save_dataset(path, ds: Dataset) -> None:
    path = Path(path)
    (path / "rasters").mkdir(parents=True, exist_ok=True)
    if ds.truth:
        (path / "truth").mkdir(exist_ok=True)
    entries = []
    for role in ROLES:
        for r in getattr(ds, role):
            fname = f"{r.raster_id}.bin"
            save_raster(path / "rasters" / fname, r)
            entry = {"id": r.raster_id, "file": f"rasters/{fname}", "role": role}
            if r.raster_id in ds.truth:
                tname = f"truth/{r.raster_id}.bin"
                _write_native(path / tname, ds.truth[r.raster_id].astype(np.uint8)[None])
                entry["truth_file"] = tname
            entries.append(entry)
    write_label_sidecar(path / "labels.txt", ds.labels)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "channels": ds.channels,
        "rasters": entries,
        "labels_file": "labels.txt",
        "label_mode": "categorical" if ds.labels.pixel_labels else "binary",
    }
    if ds.labels.classes is not None:
        manifest["classes"] = ds.labels.classes
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(path) -> Dataset:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise FormatError(f"{mpath}: no manifest (is {path} a dataset directory?)")
    try:
        manifest = json.loads(mpath.read_text())
    except ValueError as e:
        raise FormatError(f"{mpath}: bad JSON ({e})") from e
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise FormatError(
            f"{mpath}: unsupported manifest version {manifest.get('format_version')!r}"
        )
    ds = Dataset(channels=int(manifest["channels"]))
    for entry in manifest["rasters"]:
        role = entry["role"]
        if role not in ROLES:
            raise FormatError(f"{mpath}: unknown role {role!r}")
        r = load_raster(path / entry["file"], raster_id=entry["id"])
        getattr(ds, role).append(r)
        if "truth_file" in entry:
            t = _read_native(path / entry["truth_file"])
            if t.shape[1:] != r.values.shape[1:]:
                raise IntegrityError(
                    f"truth for {r.raster_id!r} has shape {t.shape[1:]}, "
                    f"raster is {r.values.shape[1:]}"
                )
            ds.truth[r.raster_id] = t[0] != 0
    labels_file = manifest.get("labels_file")
    if labels_file and (path / labels_file).exists():
        mode = manifest.get("label_mode", "binary")
        ds.labels = read_label_sidecar(path / labels_file, mode=mode)
        ds.labels.negative_raster_ids = [r.raster_id for r in ds.train_neg]
        if "classes" in manifest:
            ds.labels.classes = list(manifest["classes"])
    ds.validate()
    return ds
