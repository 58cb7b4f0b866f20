"""Patch extraction, window enumeration and mirror augmentation.

Every example the detector trains on is a PATCH_SIZE x PATCH_SIZE crop whose
label belongs to the center pixel, so a center must sit at least MARGIN pixels
from each raster edge. A training window of size (h, w) therefore contributes
exactly (h - 2*MARGIN) * (w - 2*MARGIN) candidate centers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from ..errors import OutOfBoundsError, WindowTooSmallError
from .raster import Raster

PATCH_SIZE = 25
MARGIN = PATCH_SIZE // 2


@dataclass
class Patch:
    """One training example. ``values`` is (C, 25, 25) float32; ``center`` is
    (raster_id, row, col) of the labeled pixel; ``provenance`` distinguishes
    crops of real rasters from synthesized hard negatives."""

    values: np.ndarray
    label: int
    center: tuple[str, int, int]
    provenance: str = "real"


def extract_patch(
    raster: Raster, center: tuple[int, int], label: int = 0, provenance: str = "real"
) -> Patch:
    r, c = center
    if not (MARGIN <= r < raster.height - MARGIN and MARGIN <= c < raster.width - MARGIN):
        raise OutOfBoundsError(
            f"raster {raster.raster_id!r}: patch center ({r}, {c}) closer than "
            f"{MARGIN} px to an edge of {raster.height}x{raster.width}"
        )
    values = raster.values[:, r - MARGIN : r + MARGIN + 1, c - MARGIN : c + MARGIN + 1]
    return Patch(
        values=np.ascontiguousarray(values),
        label=label,
        center=(raster.raster_id, r, c),
        provenance=provenance,
    )


def extract_patches(raster: Raster, centers: Sequence[tuple[int, int]]) -> np.ndarray:
    """Batched crop, (B, C, 25, 25) float32. Bounds-checked like extract_patch."""
    out = np.empty((len(centers), raster.channels, PATCH_SIZE, PATCH_SIZE), dtype=np.float32)
    h, w = raster.height, raster.width
    for i, (r, c) in enumerate(centers):
        if not (MARGIN <= r < h - MARGIN and MARGIN <= c < w - MARGIN):
            raise OutOfBoundsError(
                f"raster {raster.raster_id!r}: patch center ({r}, {c}) closer than "
                f"{MARGIN} px to an edge of {h}x{w}"
            )
        out[i] = raster.values[:, r - MARGIN : r + MARGIN + 1, c - MARGIN : c + MARGIN + 1]
    return out


def enumerate_window_examples(
    raster: Raster, origin: tuple[int, int], size: tuple[int, int]
) -> list[tuple[int, int]]:
    """All candidate centers inside the window at ``origin`` of ``size``,
    row-major. The window must fit in the raster and be at least one patch
    wide in both directions."""
    r0, c0 = origin
    h, w = size
    if h < PATCH_SIZE or w < PATCH_SIZE:
        raise WindowTooSmallError(
            f"window {h}x{w} smaller than a {PATCH_SIZE}x{PATCH_SIZE} patch"
        )
    if r0 < 0 or c0 < 0 or r0 + h > raster.height or c0 + w > raster.width:
        raise OutOfBoundsError(
            f"raster {raster.raster_id!r}: window at ({r0}, {c0}) of size {h}x{w} "
            f"exceeds {raster.height}x{raster.width}"
        )
    rows = range(r0 + MARGIN, r0 + h - MARGIN)
    cols = range(c0 + MARGIN, c0 + w - MARGIN)
    return [(r, c) for r in rows for c in cols]


# The two axis flips and the transpose generate the 8-element symmetry group
# of the square. Elements are canonicalized by their action on an index grid
# so closure does not depend on how a composition was reached.


def _apply_ops(arr: np.ndarray, ops: str) -> np.ndarray:
    for op in ops:
        if op == "h":
            arr = arr[..., :, ::-1]
        elif op == "v":
            arr = arr[..., ::-1, :]
        elif op == "d":
            arr = arr.swapaxes(-2, -1)
        else:
            raise ValueError(f"unknown mirror axis {op!r}")
    return arr


def mirror_orbit_tables(axes: Iterable[str] = ("h", "v", "d")) -> list[str]:
    """Closure of the selected reflections under composition, as op strings
    (identity first, then breadth-first by word length). Deterministic."""
    gens = []
    for a in axes:
        if a not in ("h", "v", "d"):
            raise ValueError(f"unknown mirror axis {a!r}")
        if a not in gens:
            gens.append(a)
    marker = np.arange(16, dtype=np.int64).reshape(1, 4, 4)
    seen = {}
    queue = [""]
    seen[_apply_ops(marker, "").tobytes()] = ""
    while queue:
        word = queue.pop(0)
        for g in gens:
            nxt = word + g
            key = np.ascontiguousarray(_apply_ops(marker, nxt)).tobytes()
            if key not in seen:
                seen[key] = nxt
                queue.append(nxt)
    return sorted(seen.values(), key=lambda s: (len(s), s))


def apply_mirror(values: np.ndarray, ops: str) -> np.ndarray:
    """Apply one orbit element (an op string from mirror_orbit_tables)."""
    return np.ascontiguousarray(_apply_ops(values, ops))


def mirror_augment(patch: Patch, axes: Iterable[str] = ("h", "v", "d")) -> list[Patch]:
    """All distinct reflections/compositions of ``patch``, identity included.
    The full axis set yields the 8-element orbit used for augmentation."""
    return [
        replace(patch, values=apply_mirror(patch.values, ops))
        for ops in mirror_orbit_tables(axes)
    ]
