"""Cascaded online hard example mining.

Exhaustively mining a whole negative raster every iteration is intractable,
so the cascade first samples a fixed number of windows uniformly from the
negative raster (stage one: the random sampler), scores every candidate
center inside those windows with the current detector (cheap, because the
detector is fully convolutional and one test-mode pass scores a whole
window), then ranks candidates by loss and draws the batch negatives
uniformly from the top of the ranking (stage two: the hard sampler). This
honors "select the high loss examples randomly" without inventing a
temperature: keep the top (multiplier x needed), sample needed without
replacement.

Positives are scarce; when fewer distinct positives exist than a batch
needs, all of them are used and the deficit is filled by resampling with
mirror augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .data.patches import (
    MARGIN,
    Patch,
    enumerate_window_examples,
    extract_patches,
    mirror_orbit_tables,
    apply_mirror,
)
from .data.raster import Raster
from .errors import CannotComposeBatchError, ConfigError, UnsatisfiableConfigError
from .losses import detector_loss

_SCORE_CHUNK = 1024


@dataclass
class SamplerConfig:
    window_size: tuple[int, int] = (37, 37)
    window_count: int = 100
    batch_size: int = 256
    pos_neg_ratio: tuple[int, int] = (1, 3)
    hard_pool_multiplier: int = 2

    def validate(self) -> None:
        h, w = self.window_size
        if h < 25 or w < 25:
            raise ConfigError(f"window {h}x{w} smaller than the 25x25 receptive field")
        if self.window_count < 1 or self.batch_size < 1:
            raise ConfigError("window_count and batch_size must be positive")
        p, n = self.pos_neg_ratio
        if p < 1 or n < 1:
            raise ConfigError(f"ratio parts must be positive, got {p}:{n}")
        if self.batch_size % (p + n):
            raise ConfigError(
                f"batch_size {self.batch_size} not divisible by ratio total {p + n}"
            )
        if self.hard_pool_multiplier < 1:
            raise ConfigError("hard_pool_multiplier must be at least 1")

    @property
    def positives_per_batch(self) -> int:
        p, n = self.pos_neg_ratio
        return self.batch_size * p // (p + n)

    @property
    def negatives_per_batch(self) -> int:
        return self.batch_size - self.positives_per_batch


@dataclass
class CandidatePool:
    """Scored candidates for one iteration: all usable positive centers of
    one positive raster plus the negative centers enumerated from sampled
    windows of one negative raster (and, in stage 3, generated patches).

    ``size`` counts candidates as enumerated (positives plus window area
    law); overlapping windows contribute duplicates that are deduplicated
    before scoring, tracked in ``dedup_dropped``."""

    positive_raster: Raster
    negative_raster: Raster
    positive_centers: list[tuple[int, int]]
    negative_centers: list[tuple[int, int]]
    windows: list[tuple[int, int]]
    window_size: tuple[int, int]
    enumerated_negative_count: int
    dedup_dropped: int
    margin_dropped: int = 0
    generated: list[Patch] = field(default_factory=list)
    center_window: Optional[np.ndarray] = None  # (n, 3): window idx, local r, c
    positive_losses: Optional[np.ndarray] = None
    negative_losses: Optional[np.ndarray] = None
    generated_losses: Optional[np.ndarray] = None
    clamp_events: int = 0

    def size(self) -> int:
        return len(self.positive_centers) + self.enumerated_negative_count

    def unique_negatives(self) -> int:
        return len(self.negative_centers) + len(self.generated)

    @property
    def scored(self) -> bool:
        return self.negative_losses is not None


@dataclass
class PatchBatch:
    values: np.ndarray  # (B, C, 25, 25) float32
    labels: np.ndarray  # (B,) float32
    provenance: list[str]  # per example: positive | real | generated
    centers: list[tuple[str, int, int]]

    def __len__(self) -> int:
        return self.values.shape[0]

    def generated_fraction(self) -> float:
        neg = sum(1 for p in self.provenance if p != "positive")
        if neg == 0:
            return 0.0
        return sum(1 for p in self.provenance if p == "generated") / neg


def sample_negative_windows(
    raster: Raster, config: SamplerConfig, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """window_count origins drawn independently and uniformly from all
    positions where the window lies inside the raster and contains only
    valid pixels. Overlap is permitted."""
    config.validate()
    h, w = config.window_size
    if raster.mask is None:
        nr, nc = raster.height - h + 1, raster.width - w + 1
        if nr < 1 or nc < 1:
            raise UnsatisfiableConfigError(
                f"raster {raster.raster_id!r} ({raster.height}x{raster.width}) "
                f"cannot host a {h}x{w} window"
            )
        flat = rng.integers(0, nr * nc, size=config.window_count)
        return [(int(i // nc), int(i % nc)) for i in flat]
    ok = _valid_window_origins(raster.valid_mask(), h, w)
    if ok.shape[0] == 0:
        raise UnsatisfiableConfigError(
            f"raster {raster.raster_id!r}: no fully valid {h}x{w} window origin"
        )
    idx = rng.integers(0, ok.shape[0], size=config.window_count)
    return [(int(r), int(c)) for r, c in ok[idx]]


def _valid_window_origins(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    hh, ww = mask.shape
    if hh < h or ww < w:
        return np.empty((0, 2), dtype=np.int64)
    integral = np.zeros((hh + 1, ww + 1), dtype=np.int64)
    integral[1:, 1:] = mask.astype(np.int64).cumsum(0).cumsum(1)
    sums = (
        integral[h:, w:]
        - integral[:-h, w:]
        - integral[h:, :-w]
        + integral[:-h, :-w]
    )
    return np.argwhere(sums == h * w)


def build_candidate_pool(
    positive_raster: Raster,
    positive_centers: list[tuple[int, int]],
    negative_raster: Raster,
    windows: list[tuple[int, int]],
    config: SamplerConfig,
) -> CandidatePool:
    """Enumerate window candidates, deduplicate overlapping centers, and drop
    positive centers too close to an edge to host a patch."""
    h, w = config.window_size
    enumerated = 0
    seen: dict[tuple[int, int], int] = {}
    center_window = []
    for wi, origin in enumerate(windows):
        centers = enumerate_window_examples(negative_raster, origin, (h, w))
        enumerated += len(centers)
        for r, c in centers:
            if (r, c) not in seen:
                seen[(r, c)] = len(seen)
                center_window.append((wi, r - origin[0], c - origin[1]))
    usable = []
    margin_dropped = 0
    for r, c in positive_centers:
        if (
            MARGIN <= r < positive_raster.height - MARGIN
            and MARGIN <= c < positive_raster.width - MARGIN
        ):
            usable.append((r, c))
        else:
            margin_dropped += 1
    return CandidatePool(
        positive_raster=positive_raster,
        negative_raster=negative_raster,
        positive_centers=usable,
        negative_centers=list(seen),
        windows=list(windows),
        window_size=(h, w),
        enumerated_negative_count=enumerated,
        dedup_dropped=enumerated - len(seen),
        margin_dropped=margin_dropped,
        center_window=np.asarray(center_window, dtype=np.int64).reshape(-1, 3),
    )


def merge_generated_negatives(pool: CandidatePool, generated: list[Patch]) -> CandidatePool:
    """Append generated patches to the negative side of the pool. Scoring
    and selection treat them exactly like real candidates; only the
    provenance tag differs. Values are clipped to the range observed on the
    pool's negative raster: a hard negative is supposed to imitate that
    raster, and out-of-range values would hand the detector unbounded
    losses instead of plausible impostors."""
    lo = float(pool.negative_raster.values.min())
    hi = float(pool.negative_raster.values.max())
    for p in generated:
        if p.provenance != "generated":
            raise ConfigError(
                f"merged patch has provenance {p.provenance!r}, expected 'generated'"
            )
        np.clip(p.values, lo, hi, out=p.values)
    pool.generated.extend(generated)
    pool.generated_losses = None
    return pool


def _forward_scores(detector, values: np.ndarray) -> np.ndarray:
    """Train-mode scores for (B, C, 25, 25) patch values, chunked."""
    out = []
    with torch.no_grad():
        for lo in range(0, values.shape[0], _SCORE_CHUNK):
            chunk = torch.from_numpy(values[lo : lo + _SCORE_CHUNK])
            out.append(detector.forward_train(chunk).cpu().numpy())
    return np.concatenate(out) if out else np.empty(0, dtype=np.float32)


def score_candidates(pool: CandidatePool, detector) -> CandidatePool:
    """Attach a detector loss to every candidate. Real negatives are scored
    through test-mode passes over their windows (one pass per window batch,
    every center read from the dense map); positives and generated patches
    go through the train-mode path. Dropout stays off: scoring measures the
    current model."""
    h, w = pool.window_size
    events = 0
    if pool.negative_centers:
        wins = np.stack(
            [
                pool.negative_raster.values[:, r0 : r0 + h, c0 : c0 + w]
                for r0, c0 in pool.windows
            ]
        )
        with torch.no_grad():
            maps = detector.forward_test(torch.from_numpy(wins), padded=False)
        maps = maps[:, 0].cpu().numpy()  # (n_windows, h-24, w-24)
        cw = pool.center_window
        scores = maps[cw[:, 0], cw[:, 1] - MARGIN, cw[:, 2] - MARGIN]
        lv = detector_loss(scores.astype(np.float64), 0.0)
        pool.negative_losses = lv.per_example
        events += lv.clamp_events
    else:
        pool.negative_losses = np.empty(0)
    if pool.positive_centers:
        vals = extract_patches(pool.positive_raster, pool.positive_centers)
        lv = detector_loss(_forward_scores(detector, vals).astype(np.float64), 1.0)
        pool.positive_losses = lv.per_example
        events += lv.clamp_events
    else:
        pool.positive_losses = np.empty(0)
    if pool.generated:
        vals = np.stack([p.values for p in pool.generated])
        lv = detector_loss(_forward_scores(detector, vals).astype(np.float64), 0.0)
        pool.generated_losses = lv.per_example
        events += lv.clamp_events
    else:
        pool.generated_losses = np.empty(0)
    pool.clamp_events = events
    return pool


def _fill_positives(
    pool: CandidatePool, need: int, rng: np.random.Generator
) -> tuple[np.ndarray, list[tuple[str, int, int]]]:
    centers = pool.positive_centers
    if not centers:
        raise CannotComposeBatchError(
            "no usable positive centers; cannot honor the batch ratio"
        )
    rid = pool.positive_raster.raster_id
    if len(centers) >= need:
        idx = rng.choice(len(centers), size=need, replace=False)
        chosen = [centers[int(i)] for i in idx]
        return extract_patches(pool.positive_raster, chosen), [
            (rid, r, c) for r, c in chosen
        ]
    base = extract_patches(pool.positive_raster, centers)
    orbit = mirror_orbit_tables(("h", "v", "d"))
    vals = [base]
    meta = [(rid, r, c) for r, c in centers]
    extra_idx = rng.integers(0, len(centers), size=need - len(centers))
    extra_ops = rng.integers(0, len(orbit), size=need - len(centers))
    vals.append(
        np.stack(
            [
                apply_mirror(base[int(i)], orbit[int(k)])
                for i, k in zip(extra_idx, extra_ops)
            ]
        )
    )
    meta.extend((rid, centers[int(i)][0], centers[int(i)][1]) for i in extra_idx)
    return np.concatenate(vals), meta


def select_hard_batch(
    pool: CandidatePool,
    config: SamplerConfig,
    rng: np.random.Generator,
    augment_negatives: bool = False,
) -> PatchBatch:
    """Compose one batch at the configured ratio: hardest-negative sampling
    over real and generated candidates jointly, positives all-or-sampled."""
    config.validate()
    if not pool.scored:
        raise ConfigError("pool must be scored before hard selection")
    need_neg = config.negatives_per_batch
    losses = np.concatenate([pool.negative_losses, pool.generated_losses])
    if losses.shape[0] < need_neg:
        raise CannotComposeBatchError(
            f"{losses.shape[0]} unique negatives cannot fill {need_neg} batch slots"
        )
    order = np.argsort(-losses, kind="stable")
    top = order[: min(config.hard_pool_multiplier * need_neg, order.shape[0])]
    pick = top[rng.choice(top.shape[0], size=need_neg, replace=False)]
    return _assemble(pool, config, rng, pick, augment_negatives)


def select_uniform_batch(
    pool: CandidatePool,
    config: SamplerConfig,
    rng: np.random.Generator,
    augment_negatives: bool = False,
) -> PatchBatch:
    """Mining disabled: negatives drawn uniformly from the pool, no ranking.
    The pool does not need to be scored."""
    config.validate()
    need_neg = config.negatives_per_batch
    total = pool.unique_negatives()
    if total < need_neg:
        raise CannotComposeBatchError(
            f"{total} unique negatives cannot fill {need_neg} batch slots"
        )
    pick = rng.choice(total, size=need_neg, replace=False)
    return _assemble(pool, config, rng, pick, augment_negatives)


def _assemble(
    pool: CandidatePool,
    config: SamplerConfig,
    rng: np.random.Generator,
    neg_indices: np.ndarray,
    augment_negatives: bool = False,
) -> PatchBatch:
    n_real = len(pool.negative_centers)
    real_sel = [int(i) for i in neg_indices if i < n_real]
    gen_sel = [int(i) - n_real for i in neg_indices if i >= n_real]
    pos_vals, pos_meta = _fill_positives(pool, config.positives_per_batch, rng)
    parts = [pos_vals]
    meta = list(pos_meta)
    provenance = ["positive"] * len(pos_meta)
    nrid = pool.negative_raster.raster_id
    if real_sel:
        chosen = [pool.negative_centers[i] for i in real_sel]
        parts.append(extract_patches(pool.negative_raster, chosen))
        meta.extend((nrid, r, c) for r, c in chosen)
        provenance.extend(["real"] * len(chosen))
    if gen_sel:
        parts.append(np.stack([pool.generated[i].values for i in gen_sel]))
        meta.extend(pool.generated[i].center for i in gen_sel)
        provenance.extend(["generated"] * len(gen_sel))
    values = np.concatenate(parts)
    if augment_negatives and values.shape[0] > len(pos_meta):
        orbit = mirror_orbit_tables(("h", "v", "d"))
        ops = rng.integers(0, len(orbit), size=values.shape[0] - len(pos_meta))
        for j, k in enumerate(ops, start=len(pos_meta)):
            values[j] = apply_mirror(values[j], orbit[int(k)])
    labels = np.zeros(values.shape[0], dtype=np.float32)
    labels[: len(pos_meta)] = 1.0
    return PatchBatch(values=values, labels=labels, provenance=provenance, centers=meta)
