"""Synthetic bloom scenes with controlled spectral confounds.

Each scene is a summer/winter raster pair over the same sensor. Channels are
split into three groups, each tied to one failure mode of a detector trained
on sparse labels:

* a seasonal group carrying an independent smooth shift field on every
  raster, positive or negative. It predicts nothing and merely adds
  structured background variation.
* a transfer group elevated on coherent patches that cover a minority of
  every summer (positive) scene and none of any winter scene. No real
  negative example covers this direction, so a detector trained purely on
  real data is free to lean on it and false-alarms over those patches;
  only generated negatives can teach otherwise.
* a signature group, active at full amplitude on the bloom structures and
  again (scaled by ``hard_amp_frac``) on sparse hard confuser blobs
  scattered over every raster. A confuser blob co-elevates the seasonal
  group by the full seasonal amplitude — a spectral tell that separates it
  from a true bloom — but the blobs occupy a small area fraction, so
  uniform negative sampling rarely presents them while loss-ranked mining
  finds them every iteration.

Blooms are thin elongated band curves (random smooth walks, dilated to a
width of a few pixels) painted into summer scenes; sparse point labels are
sampled from band pixels and the dense band mask is kept as evaluation
truth.

All randomness flows through one numpy Generator per scene, drawn in a fixed
order, so a (config, seed) pair reproduces byte-identical rasters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from ..errors import ConfigError
from .dataset import Dataset
from .labels import LabelSet
from .patches import MARGIN
from .raster import Raster


@dataclass
class SynthConfig:
    size: int = 128
    channels: int = 8
    num_bands: int = 3
    band_width: tuple[int, int] = (2, 5)
    band_steps: int = 320
    band_curvature: float = 0.22
    labels_per_raster: int = 80
    label_noise: float = 0.02
    noise_sigma: float = 1.0
    season_amp: float = 3.0
    unseen_amp: float = 3.0
    signature_amp: float = 3.0
    hard_area_frac: float = 0.02
    hard_amp_frac: float = 0.9
    unseen_area_frac: float = 0.25
    field_cells: int = 4
    mask_blob_radius: int = 0
    id_prefix: str = "scene"

    def validate(self) -> None:
        if self.channels < 3:
            raise ConfigError(
                f"need at least 3 channels to separate the spectral groups, got {self.channels}"
            )
        if self.size < 2 * MARGIN + 1:
            raise ConfigError(f"raster size {self.size} leaves no interior for labels")
        if self.num_bands < 0 or self.labels_per_raster < 0:
            raise ConfigError("band and label counts must be nonnegative")
        if not (1 <= self.band_width[0] <= self.band_width[1]):
            raise ConfigError(f"bad band width range {self.band_width}")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be positive")
        if not (0.0 <= self.hard_area_frac < 1.0):
            raise ConfigError("hard_area_frac must be in [0, 1)")
        if not (0.0 <= self.unseen_area_frac < 1.0):
            raise ConfigError("unseen_area_frac must be in [0, 1)")
        if not (0.0 <= self.label_noise < 1.0):
            raise ConfigError("label_noise must be in [0, 1)")


def channel_groups(channels: int) -> tuple[list[int], list[int], list[int]]:
    """Partition channel indices into (seasonal, transfer, signature) groups."""
    n1 = max(1, channels // 4)
    n2 = max(1, channels // 4)
    if n1 + n2 >= channels:
        n1 = n2 = 1
    return (
        list(range(0, n1)),
        list(range(n1, n1 + n2)),
        list(range(n1 + n2, channels)),
    )


def _smooth_field(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Smooth random field in (0, 1): coarse gaussian grid, bilinear upsample,
    tanh squashed. Large coherent patches, mean near one half."""
    coarse = rng.standard_normal((cells, cells))
    z = ndimage.zoom(coarse, size / cells, order=1, grid_mode=True, mode="nearest")
    return (0.5 + 0.5 * np.tanh(z)).astype(np.float32)


def _band_mask(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Union of dilated random smooth walks."""
    size = cfg.size
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(cfg.num_bands):
        width = int(rng.integers(cfg.band_width[0], cfg.band_width[1] + 1))
        radius = max(1, width) / 2.0
        rr = int(rng.integers(MARGIN, size - MARGIN))
        cc = int(rng.integers(MARGIN, size - MARGIN))
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        r, c = float(rr), float(cc)
        d = int(np.ceil(radius))
        dy, dx = np.mgrid[-d : d + 1, -d : d + 1]
        disk = (dy * dy + dx * dx) <= radius * radius
        offs = np.argwhere(disk) - d
        for _step in range(cfg.band_steps):
            theta += float(rng.normal(0.0, cfg.band_curvature))
            r += np.sin(theta)
            c += np.cos(theta)
            if not (1 <= r < size - 1 and 1 <= c < size - 1):
                # bounce back toward the interior
                r = float(np.clip(r, 1, size - 2))
                c = float(np.clip(c, 1, size - 2))
                theta += np.pi / 2.0
            pts = offs + np.array([int(round(r)), int(round(c))])
            ok = (
                (pts[:, 0] >= 0)
                & (pts[:, 0] < size)
                & (pts[:, 1] >= 0)
                & (pts[:, 1] < size)
            )
            mask[pts[ok, 0], pts[ok, 1]] = True
    return mask


def _ellipse_mask(
    rng: np.random.Generator,
    size: int,
    area_frac: float,
    axes: tuple[float, float],
) -> np.ndarray:
    """Union of random ellipses until the requested area fraction is covered."""
    mask = np.zeros((size, size), dtype=bool)
    target = area_frac * size * size
    yy, xx = np.mgrid[0:size, 0:size]
    guard = 0
    while mask.sum() < target and guard < 1000:
        guard += 1
        cy = float(rng.uniform(0, size))
        cx = float(rng.uniform(0, size))
        ay = float(rng.uniform(axes[0], axes[1]))
        ax = float(rng.uniform(axes[0], axes[1]))
        mask |= ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
    return mask


def _hard_blob_mask(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Small signature-group blobs covering ``hard_area_frac`` of the scene."""
    return _ellipse_mask(rng, cfg.size, cfg.hard_area_frac, (3.0, 9.0))


def _valid_mask(rng: np.random.Generator, cfg: SynthConfig) -> Optional[np.ndarray]:
    if cfg.mask_blob_radius <= 0:
        return None
    size = cfg.size
    cy = float(rng.uniform(0, size))
    cx = float(rng.uniform(0, size))
    yy, xx = np.mgrid[0:size, 0:size]
    land = (yy - cy) ** 2 + (xx - cx) ** 2 <= cfg.mask_blob_radius**2
    return ~land


def _scene_parts(rng: np.random.Generator, config: SynthConfig) -> dict[str, object]:
    """All stochastic scene ingredients, drawn in the fixed format order:
    fields, band, blobs, validity masks."""
    size = config.size
    season_pos = _smooth_field(rng, size, config.field_cells)
    season_neg = _smooth_field(rng, size, config.field_cells)
    unseen_patches = _ellipse_mask(rng, size, config.unseen_area_frac, (8.0, 20.0))
    band = _band_mask(rng, config)
    blobs_pos = _hard_blob_mask(rng, config) & ~band
    blobs_neg = _hard_blob_mask(rng, config)
    return {
        "season_pos": season_pos,
        "season_neg": season_neg,
        "unseen_patches": unseen_patches,
        "band": band,
        "blobs_pos": blobs_pos,
        "blobs_neg": blobs_neg,
        "pos_mask": _valid_mask(rng, config),
        "neg_mask": _valid_mask(rng, config),
    }


def scene_parts(config: SynthConfig, seed: int) -> dict[str, object]:
    """The intermediate masks and fields behind ``generate_scene_with_truth``
    for the same (config, seed), for diagnostics and tests."""
    config.validate()
    return _scene_parts(np.random.default_rng(seed), config)


def generate_scene_with_truth(
    config: SynthConfig, seed: int
) -> tuple[Raster, Raster, LabelSet, np.ndarray]:
    """One summer (positive) and one winter (negative) raster plus sparse
    labels and the dense band mask of the positive raster.

    Both rasters carry their own seasonal shift field and their own sprinkle
    of hard confuser blobs (signature elevation at ``hard_amp_frac`` of the
    bloom's, plus the seasonal-group tell, kept off the band on the positive
    raster); only the positive raster carries the transfer-group patches and
    the band signature."""
    config.validate()
    rng = np.random.default_rng(seed)
    size, channels = config.size, config.channels
    g_season, g_unseen, g_sig = channel_groups(channels)

    parts = _scene_parts(rng, config)
    band = parts["band"]
    pos_mask = parts["pos_mask"]
    neg_mask = parts["neg_mask"]

    pos = np.zeros((channels, size, size), dtype=np.float32)
    neg = np.zeros((channels, size, size), dtype=np.float32)
    blob_amp = config.signature_amp * config.hard_amp_frac
    for ch in g_season:
        pos[ch] += config.season_amp * (parts["season_pos"] + parts["blobs_pos"])
        neg[ch] += config.season_amp * (parts["season_neg"] + parts["blobs_neg"])
    for ch in g_unseen:
        pos[ch] += config.unseen_amp * parts["unseen_patches"]
    for ch in g_sig:
        pos[ch] += config.signature_amp * band + blob_amp * parts["blobs_pos"]
        neg[ch] += blob_amp * parts["blobs_neg"]
    pos += rng.normal(0.0, config.noise_sigma, pos.shape).astype(np.float32)
    neg += rng.normal(0.0, config.noise_sigma, neg.shape).astype(np.float32)

    pos_id = f"{config.id_prefix}-{seed}-pos"
    neg_id = f"{config.id_prefix}-{seed}-neg"
    pos_raster = Raster(raster_id=pos_id, values=pos, mask=pos_mask)
    neg_raster = Raster(raster_id=neg_id, values=neg, mask=neg_mask)

    interior = np.zeros((size, size), dtype=bool)
    interior[MARGIN : size - MARGIN, MARGIN : size - MARGIN] = True
    eligible = band & interior
    if pos_mask is not None:
        eligible &= pos_mask
    coords = np.argwhere(eligible)
    labels = LabelSet(negative_raster_ids=[neg_id])
    if coords.shape[0] and config.labels_per_raster:
        take = min(config.labels_per_raster, coords.shape[0])
        idx = rng.choice(coords.shape[0], size=take, replace=False)
        picked = [(int(r), int(c)) for r, c in coords[np.sort(idx)]]
        # a small share of mislabeled off-band points, as in real survey data
        n_noise = int(round(config.label_noise * take))
        off_band = np.argwhere(interior & ~band & (pos_mask if pos_mask is not None else True))
        if n_noise and off_band.shape[0]:
            j = rng.choice(off_band.shape[0], size=min(n_noise, off_band.shape[0]), replace=False)
            picked += [(int(r), int(c)) for r, c in off_band[np.sort(j)]]
        labels.positives[pos_id] = sorted(picked)
    return pos_raster, neg_raster, labels, band


def generate_synthetic_scene(config: SynthConfig, seed: int) -> tuple[Raster, Raster, LabelSet]:
    pos, neg, labels, _band = generate_scene_with_truth(config, seed)
    return pos, neg, labels


def build_synthetic_dataset(
    config: SynthConfig,
    seed: int,
    n_train_pos: int = 2,
    n_train_neg: int = 2,
    n_test_pos: int = 2,
    n_test_neg: int = 1,
    test_hard_frac: float | None = None,
) -> Dataset:
    """A full train/test dataset from independent scenes. Test positives keep
    their dense band mask as truth so threshold-free evaluation is possible.

    ``test_hard_frac``, when given, replaces ``hard_area_frac`` on test
    scenes only, so rare-at-training-time structures can be made common at
    evaluation time."""
    config.validate()
    test_config = config
    if test_hard_frac is not None:
        test_config = replace(config, hard_area_frac=test_hard_frac)
        test_config.validate()
    ss = np.random.SeedSequence(seed)
    ds = Dataset(channels=config.channels)

    def next_seed():
        return int(ss.spawn(1)[0].generate_state(1)[0])

    for i in range(n_train_pos):
        cfg = replace_prefix(config, f"{config.id_prefix}-trp{i}")
        pos, _neg, lab, _band = generate_scene_with_truth(cfg, next_seed())
        ds.train_pos.append(pos)
        _merge_labels(ds.labels, lab, keep_negatives=False)
    for i in range(n_train_neg):
        cfg = replace_prefix(config, f"{config.id_prefix}-trn{i}")
        _pos, neg, lab, _band = generate_scene_with_truth(cfg, next_seed())
        ds.train_neg.append(neg)
        ds.labels.negative_raster_ids.append(neg.raster_id)
    for i in range(n_test_pos):
        cfg = replace_prefix(test_config, f"{config.id_prefix}-tep{i}")
        pos, _neg, lab, band = generate_scene_with_truth(cfg, next_seed())
        ds.test_pos.append(pos)
        ds.truth[pos.raster_id] = band
        _merge_labels(ds.labels, lab, keep_negatives=False)
    for i in range(n_test_neg):
        cfg = replace_prefix(test_config, f"{config.id_prefix}-ten{i}")
        _pos, neg, lab, _band = generate_scene_with_truth(cfg, next_seed())
        ds.test_neg.append(neg)
    ds.validate()
    return ds


def replace_prefix(config: SynthConfig, prefix: str) -> SynthConfig:
    return replace(config, id_prefix=prefix)


def _merge_labels(into: LabelSet, src: LabelSet, keep_negatives: bool) -> None:
    for rid, coords in src.positives.items():
        into.positives.setdefault(rid, []).extend(coords)
    if keep_negatives:
        into.negative_raster_ids.extend(src.negative_raster_ids)
