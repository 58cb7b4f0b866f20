"""Full-raster scoring by sliding a fixed window over the scene.

Windows are scored in valid mode (no padding), so each window of side W
contributes a (W - 24) x (W - 24) block of scores centered on its interior.
With stride W - 24 those blocks tile the raster exactly; the outermost
12-pixel border of the scene has no fully supported receptive field and
stays NaN, as do masked pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .data.patches import MARGIN, PATCH_SIZE
from .data.raster import Raster, load_raster, save_raster
from .errors import ShapeError, WindowTooSmallError


@dataclass
class ScoreMap:
    """Per-pixel detector scores for one raster.

    ``scores`` is (H, W) float32; NaN marks pixels with no defined score
    (border, masked, or never covered). ``evaluable`` selects the rest.
    """

    raster_id: str
    scores: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float32)
        if self.scores.ndim != 2:
            raise ShapeError(f"score map must be 2d, got {self.scores.shape}")

    @property
    def evaluable(self) -> np.ndarray:
        return np.isfinite(self.scores)

    def score_at(self, row: int, col: int) -> float:
        return float(self.scores[row, col])


def _origins(extent: int, window: int, stride: int) -> list[int]:
    """Window origins covering [0, extent) with the last one clamped so the
    final window stays in bounds."""
    out = list(range(0, extent - window + 1, stride))
    last = extent - window
    if out[-1] != last:
        out.append(last)
    return out


def sliding_window_infer(
    detector,
    raster: Raster,
    window: int | tuple[int, int] = (600, 600),
    category: int = 0,
) -> ScoreMap:
    """Score every fully supported pixel of ``raster``.

    ``raster`` must already be normalized. Windows overlap by 24 pixels so
    their valid interiors abut; where clamping makes interiors overlap the
    first writer wins (the values agree anyway: valid-mode scoring is
    translation invariant). A window larger than the raster shrinks to fit.
    """
    if isinstance(window, int):
        window = (window, window)
    if min(window) < PATCH_SIZE:
        raise WindowTooSmallError(f"window {window} is below {PATCH_SIZE}x{PATCH_SIZE}")
    c, h, w = raster.values.shape
    if min(h, w) < PATCH_SIZE:
        raise WindowTooSmallError(
            f"raster {raster.raster_id} is {h}x{w}; need at least {PATCH_SIZE} per side"
        )
    win_h = min(window[0], h)
    win_w = min(window[1], w)
    stride_h = win_h - 2 * MARGIN
    stride_w = win_w - 2 * MARGIN
    scores = np.full((h, w), np.nan, dtype=np.float32)
    tensor = torch.from_numpy(raster.values)
    with torch.no_grad():
        for top in _origins(h, win_h, stride_h):
            for left in _origins(w, win_w, stride_w):
                block = tensor[None, :, top : top + win_h, left : left + win_w]
                out = detector.forward_test(block, padded=False)[0, category].cpu().numpy()
                dest = scores[
                    top + MARGIN : top + win_h - MARGIN,
                    left + MARGIN : left + win_w - MARGIN,
                ]
                hole = np.isnan(dest)
                dest[hole] = out[hole]
    if raster.mask is not None:
        scores[~raster.mask] = np.nan
    return ScoreMap(raster_id=raster.raster_id, scores=scores)


def threshold_detections(score_map: ScoreMap, threshold: float) -> list[tuple[int, int]]:
    """Evaluable pixels with score >= threshold, row-major order."""
    with np.errstate(invalid="ignore"):
        hits = np.asarray(score_map.scores >= threshold)
    rows, cols = np.nonzero(hits)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def save_score_map(score_map: ScoreMap, path: Path | str) -> Path:
    raster = Raster(raster_id=score_map.raster_id, values=score_map.scores[None])
    save_raster(path, raster)
    return Path(path)


def load_score_map(path: Path | str) -> ScoreMap:
    raster = load_raster(path)
    if raster.values.shape[0] != 1:
        raise ShapeError(
            f"score map file must have one channel, got {raster.values.shape[0]}"
        )
    return ScoreMap(raster_id=raster.raster_id, scores=raster.values[0])
