"""Hyperspectral classification benchmarks.

Loads the standard MATLAB cubes (corrected reflectance plus ground truth),
reindexes ground-truth classes to [0, K) with 0 reserved in the source files
for unlabeled pixels, and provides the fixed-size per-class train/test split.
Scenes are small, so patches near the border are handled by reflecting the
raster outward by the patch margin once up front.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import DataError, IntegrityError
from .labels import LabelSet
from .patches import MARGIN
from .raster import Raster

log = logging.getLogger(__name__)

BENCHMARKS = {
    "indian_pines": ("Indian_pines_corrected.mat", "Indian_pines_gt.mat"),
    "salinas": ("Salinas_corrected.mat", "Salinas_gt.mat"),
    "paviau": ("PaviaU.mat", "PaviaU_gt.mat"),
}


def _mat_payload(path: Path) -> np.ndarray:
    from scipy.io import loadmat

    try:
        mat = loadmat(path)
    except OSError as e:
        raise DataError(f"{path}: cannot read ({e})") from e
    arrays = {k: v for k, v in mat.items() if not k.startswith("__")}
    if not arrays:
        raise DataError(f"{path}: no data variables in mat file")
    # take the largest array; benchmark files hold exactly one payload
    key = max(arrays, key=lambda k: np.asarray(arrays[k]).size)
    return np.asarray(arrays[key])


def load_hsi_benchmark(name: str, root) -> tuple[Raster, LabelSet]:
    """Load one benchmark from directory ``root``. Returns the cube as a
    (C, H, W) raster and a categorical LabelSet with classes reindexed to
    start at 0 (source value 0 = unlabeled is dropped)."""
    if name not in BENCHMARKS:
        raise DataError(f"unknown benchmark {name!r}, expected one of {sorted(BENCHMARKS)}")
    root = Path(root)
    cube_file, gt_file = BENCHMARKS[name]
    cube_path, gt_path = root / cube_file, root / gt_file
    for p in (cube_path, gt_path):
        if not p.exists():
            raise DataError(f"{p}: benchmark file missing")
    cube = _mat_payload(cube_path)
    gt = _mat_payload(gt_path)
    if cube.ndim != 3:
        raise IntegrityError(f"{cube_path}: expected 3-d cube, got shape {cube.shape}")
    if gt.ndim != 2 or gt.shape != cube.shape[:2]:
        raise IntegrityError(
            f"{gt_path}: ground truth shape {gt.shape} does not match cube {cube.shape[:2]}"
        )
    values = np.ascontiguousarray(cube.transpose(2, 0, 1)).astype(np.float32)
    raster = Raster(raster_id=name, values=values)
    gt = gt.astype(np.int64)
    k = int(gt.max())
    if k < 1:
        raise IntegrityError(f"{gt_path}: ground truth has no labeled pixels")
    labeled = np.argwhere(gt > 0)
    pixel_labels = {(int(r), int(c)): int(gt[r, c]) - 1 for r, c in labeled}
    labels = LabelSet(
        pixel_labels={name: pixel_labels},
        classes=[f"class_{i}" for i in range(k)],
    )
    return raster, labels


def split_hsi_train_test(
    labels: LabelSet, per_class: int = 200, seed: int = 0
) -> tuple[dict, dict, dict]:
    """Per-class split: ``per_class`` training pixels drawn without
    replacement, the rest held out. A class with fewer labeled pixels than
    requested contributes everything to training; the deficit is returned and
    logged. Returns (train, test, deficits) where train/test map
    (raster_id, row, col) -> class."""
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[tuple[str, int, int]]] = {}
    for rid, labeled in sorted(labels.pixel_labels.items()):
        for (r, c), lab in sorted(labeled.items()):
            by_class.setdefault(lab, []).append((rid, r, c))
    train, test, deficits = {}, {}, {}
    for lab in sorted(by_class):
        coords = by_class[lab]
        if len(coords) <= per_class:
            for key in coords:
                train[key] = lab
            if len(coords) < per_class:
                deficits[lab] = per_class - len(coords)
                log.warning(
                    "class %d has %d labeled pixels, %d short of the requested %d; "
                    "using all of them for training",
                    lab,
                    len(coords),
                    per_class - len(coords),
                    per_class,
                )
            continue
        idx = rng.choice(len(coords), size=per_class, replace=False)
        chosen = set(int(i) for i in idx)
        for i, key in enumerate(coords):
            (train if i in chosen else test)[key] = lab
    return train, test, deficits


def reflect_pad_raster(raster: Raster, margin: int = MARGIN) -> Raster:
    """Reflect the raster outward so any original pixel, border included, has
    a full patch around it at shifted coordinates (+margin, +margin)."""
    values = np.pad(
        raster.values, ((0, 0), (margin, margin), (margin, margin)), mode="reflect"
    )
    mask = None
    if raster.mask is not None:
        mask = np.pad(raster.mask, ((margin, margin), (margin, margin)), mode="reflect")
    return Raster(raster_id=raster.raster_id + "-padded", values=values, mask=mask)
