"""Detection metrics and feature export.

Two curve flavors share one representation: the classic ROC over labeled
pixels, and the detection-rate vs. detections-per-raster curve used when
negatives are unlabeled ocean rather than a labeled class. Both sweep the
distinct score values as thresholds (detection means score >= threshold)
and integrate AUC by the trapezoid rule, which equals the Mann-Whitney
pair statistic including the tie correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import torch

from .data.labels import LabelSet
from .errors import FormatError, ShapeError, UndefinedMetricError
from .inference import ScoreMap

NDPI_TARGETS = (0.25, 0.5, 0.75)
_EXPORT_CHUNK = 512


@dataclass
class EvalCurve:
    """Threshold sweep in descending-threshold order.

    ``detection_rate`` and ``ndpi`` are non-increasing in threshold, so
    along the stored arrays (descending thresholds) they never decrease.
    ``ndpi_at`` maps detection-rate targets to the smallest NDPI reaching
    them, linearly interpolated between adjacent points (NaN if the curve
    never gets there).
    """

    thresholds: np.ndarray
    detection_rate: np.ndarray
    ndpi: np.ndarray
    fpr: np.ndarray
    auc: float
    ndpi_at: dict[float, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.detection_rate = np.asarray(self.detection_rate, dtype=np.float64)
        self.ndpi = np.asarray(self.ndpi, dtype=np.float64)
        self.fpr = np.asarray(self.fpr, dtype=np.float64)
        n = self.thresholds.shape[0]
        for name in ("detection_rate", "ndpi", "fpr"):
            if getattr(self, name).shape[0] != n:
                raise ShapeError(f"curve column {name} length mismatch")

    @property
    def points(self) -> list[tuple[float, float, float, float]]:
        return [
            (float(t), float(d), float(n), float(f))
            for t, d, n, f in zip(self.thresholds, self.detection_rate, self.ndpi, self.fpr)
        ]


def _ndpi_targets(dr: np.ndarray, ndpi: np.ndarray) -> dict[float, float]:
    out = {}
    for target in NDPI_TARGETS:
        i = int(np.searchsorted(dr, target, side="left"))
        if i >= dr.shape[0]:
            out[target] = math.nan
        elif i == 0 or dr[i] == target:
            out[target] = float(ndpi[i])
        else:
            span = dr[i] - dr[i - 1]
            frac = (target - dr[i - 1]) / span
            out[target] = float(ndpi[i - 1] + frac * (ndpi[i] - ndpi[i - 1]))
    return out


def _sweep(
    scores: np.ndarray,
    is_positive: np.ndarray,
    positive_total: int,
    negative_total: int,
    raster_count: int,
) -> EvalCurve:
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = is_positive[order]
    boundary = np.empty(s.shape[0], dtype=bool)
    boundary[:-1] = s[:-1] != s[1:]
    boundary[-1] = True
    cum_pos = np.cumsum(p)[boundary]
    cum_det = np.arange(1, s.shape[0] + 1)[boundary]
    dr = cum_pos / positive_total
    ndpi = cum_det / raster_count
    fpr = (cum_det - cum_pos) / negative_total
    auc = float(np.trapezoid(np.concatenate([[0.0], dr]), np.concatenate([[0.0], fpr])))
    return EvalCurve(
        thresholds=s[boundary],
        detection_rate=dr,
        ndpi=ndpi,
        fpr=fpr,
        auc=auc,
        ndpi_at=_ndpi_targets(dr, ndpi),
    )


def roc_curve(scores: np.ndarray, labels: np.ndarray) -> EvalCurve:
    """Classic ROC over per-pixel scores with binary labels.

    NDPI here is simply the detection count (one pooled collection). AUC
    equals the fraction of (positive, negative) pairs ranked correctly,
    ties counting half.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"scores {scores.shape} vs labels {labels.shape}")
    is_pos = labels != 0
    pos = int(is_pos.sum())
    neg = int(scores.shape[0] - pos)
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("ROC needs both classes among labeled pixels")
    return _sweep(scores, is_pos.astype(np.int64), pos, neg, raster_count=1)


def roc_variation_curve(
    score_maps: Iterable[ScoreMap], labels: LabelSet
) -> EvalCurve:
    """Detection rate over labeled positives vs. detections per raster.

    Detections count every evaluable over-threshold pixel, labeled or not;
    NDPI divides by the number of rasters. The fpr column (and the AUC
    built on it) treats all evaluable non-positive pixels as negatives.
    """
    maps = list(score_maps)
    if not maps:
        raise UndefinedMetricError("no score maps given")
    seen = set()
    flat_scores = []
    flat_pos = []
    positive_total = 0
    for m in maps:
        if m.raster_id in seen:
            raise UndefinedMetricError(f"duplicate score map for raster {m.raster_id}")
        seen.add(m.raster_id)
        coords = labels.positives.get(m.raster_id, [])
        positive_total += len(coords)
        ev = m.evaluable
        pos_mask = np.zeros(m.scores.shape, dtype=bool)
        if coords:
            arr = np.asarray(coords, dtype=np.int64)
            pos_mask[arr[:, 0], arr[:, 1]] = True
        flat_scores.append(m.scores[ev].astype(np.float64))
        flat_pos.append(pos_mask[ev])
    if positive_total == 0:
        raise UndefinedMetricError("no labeled positive pixels on the given rasters")
    scores = np.concatenate(flat_scores)
    is_pos = np.concatenate(flat_pos)
    negative_total = int(scores.shape[0] - is_pos.sum())
    if negative_total == 0:
        raise UndefinedMetricError("every evaluable pixel is a labeled positive")
    return _sweep(scores, is_pos.astype(np.int64), positive_total, negative_total, len(maps))


def hsi_accuracy(splits: Sequence[tuple[np.ndarray, np.ndarray]]) -> dict:
    """Overall accuracy (percent) per split, with mean and population
    standard deviation across splits."""
    if not splits:
        raise UndefinedMetricError("no evaluation splits")
    accs = []
    for pred, truth in splits:
        pred = np.asarray(pred).ravel()
        truth = np.asarray(truth).ravel()
        if pred.shape != truth.shape:
            raise ShapeError(f"predictions {pred.shape} vs labels {truth.shape}")
        if pred.shape[0] == 0:
            raise UndefinedMetricError("empty test set in split")
        accs.append(float((pred == truth).mean() * 100.0))
    arr = np.asarray(accs)
    return {"accuracies": accs, "mean": float(arr.mean()), "std": float(arr.std())}


def export_features(
    detector,
    groups: Mapping[str, np.ndarray],
    per_group: int = 500,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, list[str]]:
    """Layer-8 post-activation vectors for a random sample of each patch
    group, tagged with the group name. Groups are processed in sorted-name
    order; a group smaller than ``per_group`` is taken whole."""
    if rng is None:
        rng = np.random.default_rng(0)
    feats = []
    tags: list[str] = []
    for name in sorted(groups):
        patches = np.asarray(groups[name], dtype=np.float32)
        if patches.ndim != 4:
            raise ShapeError(f"group {name} must be (N, C, 25, 25), got {patches.shape}")
        n = patches.shape[0]
        take = min(per_group, n)
        idx = rng.choice(n, size=take, replace=False)
        chosen = patches[idx]
        with torch.no_grad():
            for lo in range(0, take, _EXPORT_CHUNK):
                _, f = detector.forward_train(
                    torch.from_numpy(chosen[lo : lo + _EXPORT_CHUNK]),
                    return_features=True,
                )
                feats.append(f.cpu().numpy())
        tags.extend([name] * take)
    return np.concatenate(feats).astype(np.float32), tags


def write_curve(curve: EvalCurve, path: Path | str) -> Path:
    path = Path(path)
    lines = [f"# auc {curve.auc!r}"]
    for target in sorted(curve.ndpi_at):
        lines.append(f"# ndpi@dr={target} {curve.ndpi_at[target]!r}")
    lines.append("# columns: threshold detection_rate ndpi fpr")
    for t, d, n, f in curve.points:
        lines.append(f"{t!r} {d!r} {n!r} {f!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_curve(path: Path | str) -> EvalCurve:
    auc = None
    ndpi_at = {}
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("auc "):
                auc = float(body.split()[1])
            elif body.startswith("ndpi@dr="):
                key, value = body.split()
                ndpi_at[float(key.split("=", 1)[1])] = float(value)
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"curve row needs 4 columns, got {len(parts)}: {line!r}")
        rows.append([float(x) for x in parts])
    if auc is None:
        raise FormatError(f"{path}: missing auc summary line")
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    return EvalCurve(
        thresholds=arr[:, 0],
        detection_rate=arr[:, 1],
        ndpi=arr[:, 2],
        fpr=arr[:, 3],
        auc=auc,
        ndpi_at=ndpi_at,
    )


def write_features(
    features: np.ndarray, tags: Sequence[str], path: Path | str
) -> Path:
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] != len(tags):
        raise ShapeError(
            f"features {features.shape} do not match {len(tags)} provenance tags"
        )
    path = Path(path)
    lines = ["# columns: provenance feature..."]
    for tag, row in zip(tags, features):
        if any(ch.isspace() for ch in tag):
            raise FormatError(f"provenance tag may not contain whitespace: {tag!r}")
        lines.append(tag + " " + " ".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_features(path: Path | str) -> tuple[np.ndarray, list[str]]:
    rows = []
    tags = []
    width = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise FormatError(f"{path}: ragged feature row")
        tags.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    return np.asarray(rows, dtype=np.float32), tags
