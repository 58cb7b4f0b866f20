"""Sparse pixel labels and their text sidecar format.

The sidecar is line-oriented: ``raster_id row col label``, one record per
labeled pixel, ``#`` starts a comment. In binary mode every record carries
label 1 (a confirmed positive pixel); whole rasters known to contain no
positives are listed separately as negative rasters. In categorical mode the
label is a class index in [0, K).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import FormatError, LabelError
from .raster import Raster


@dataclass
class LabelSet:
    """Sparse ground truth for a set of rasters.

    ``positives`` maps raster_id -> list of (row, col) positive pixels
    (binary task). ``pixel_labels`` maps raster_id -> {(row, col): class}
    (categorical task). A LabelSet uses one of the two, not both."""

    positives: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    negative_raster_ids: list[str] = field(default_factory=list)
    pixel_labels: dict[str, dict[tuple[int, int], int]] = field(default_factory=dict)
    classes: Optional[list[str]] = None

    def positive_count(self) -> int:
        return sum(len(v) for v in self.positives.values())

    def validate_against(self, rasters: dict[str, Raster]) -> None:
        """Check every labeled coordinate lands on a valid pixel of a known
        raster. Raises LabelError on the first violation."""
        for rid, coords in self.positives.items():
            self._check_coords(rid, coords, rasters)
        for rid, labeled in self.pixel_labels.items():
            self._check_coords(rid, labeled.keys(), rasters)
            if self.classes is not None:
                k = len(self.classes)
                for (r, c), lab in labeled.items():
                    if not (0 <= lab < k):
                        raise LabelError(
                            f"raster {rid!r} pixel ({r}, {c}): label {lab} outside [0, {k})"
                        )

    @staticmethod
    def _check_coords(rid, coords, rasters: dict[str, Raster]) -> None:
        if rid not in rasters:
            raise LabelError(f"labels reference unknown raster {rid!r}")
        ras = rasters[rid]
        mask = ras.valid_mask()
        for r, c in coords:
            if not (0 <= r < ras.height and 0 <= c < ras.width):
                raise LabelError(
                    f"raster {rid!r}: label at ({r}, {c}) outside {ras.height}x{ras.width}"
                )
            if not mask[r, c]:
                raise LabelError(f"raster {rid!r}: label at ({r}, {c}) is on a masked pixel")


def write_label_sidecar(path, labels: LabelSet) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for rid in sorted(labels.positives):
        for r, c in labels.positives[rid]:
            lines.append(f"{rid} {r} {c} 1")
    for rid in sorted(labels.pixel_labels):
        for (r, c), lab in sorted(labels.pixel_labels[rid].items()):
            lines.append(f"{rid} {r} {c} {lab}")
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def read_label_sidecar(path, mode: str = "binary") -> LabelSet:
    """Parse a sidecar. ``mode`` is ``binary`` (labels must all be 1) or
    ``categorical`` (labels are class indices)."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such label sidecar")
    if mode not in ("binary", "categorical"):
        raise LabelError(f"unknown sidecar mode {mode!r}")
    out = LabelSet()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        rid, r_s, c_s, lab_s = parts
        try:
            r, c, lab = int(r_s), int(c_s), int(lab_s)
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: non-integer field ({e})") from e
        if r < 0 or c < 0:
            raise LabelError(f"{path}:{lineno}: negative coordinate")
        if mode == "binary":
            if lab != 1:
                raise LabelError(
                    f"{path}:{lineno}: binary sidecar carries label {lab}, expected 1"
                )
            out.positives.setdefault(rid, []).append((r, c))
        else:
            if lab < 0:
                raise LabelError(f"{path}:{lineno}: negative class index {lab}")
            bucket = out.pixel_labels.setdefault(rid, {})
            if (r, c) in bucket:
                raise LabelError(f"{path}:{lineno}: duplicate label for pixel ({r}, {c})")
            bucket[(r, c)] = lab
    return out
