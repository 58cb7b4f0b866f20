"""Multi-class training on hyperspectral scenes.

The detector keeps its architecture but emits one sigmoid per category.
Training follows the same three stages as detection, with the generator
acting as a hard example generator: its target for each source example is
the adversarial category (the non-true category on which the detector
currently suffers the largest loss for that example), while the retraining
stage feeds generated examples back with their source's true label.

Mining here operates over the labeled-pixel pool directly (no windows: the
negatives of the detection task are replaced by a flat pool of labeled
pixels): each iteration scores a uniformly drawn candidate multiple of the
batch size and hard-selects from the top of the loss ranking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from ..config import RunConfig
from ..data.hsi import reflect_pad_raster, split_hsi_train_test
from ..data.labels import LabelSet
from ..data.patches import MARGIN, PATCH_SIZE, extract_patches
from ..data.raster import Raster, compute_normalization, normalize_raster
from ..errors import CannotComposeBatchError, DataError, DivergenceError
from ..losses import (
    detector_loss,
    discriminator_loss,
    hsi_detector_loss,
    hsi_per_category_losses,
    heg_adversarial_label,
)
from ..models.adversary import build_discriminator, build_generator
from ..models.detector import build_detector
from ..sampling import _SCORE_CHUNK
from .schedule import StageSchedule
from .sgd import init_velocity, module_sgd_step
from .state import stream_seed


@dataclass
class HsiSplitResult:
    split_seed: int
    accuracy: float
    train_size: int
    test_size: int


def _scores_chunked(detector, values: np.ndarray) -> np.ndarray:
    out = []
    with torch.no_grad():
        for lo in range(0, values.shape[0], _SCORE_CHUNK):
            out.append(
                detector.forward_train(torch.from_numpy(values[lo : lo + _SCORE_CHUNK]))
                .cpu()
                .numpy()
            )
    return np.concatenate(out)


def _hsi_schedule(config: RunConfig, base_lr: float) -> StageSchedule:
    sched = StageSchedule(
        stage="hsi",
        iterations=config.stage_iterations(),
        base_lr=base_lr,
        lr_drop_every=config.drop_every(),
        lr_drop_factor=config.lr_drop_factor,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    sched.validate()
    return sched


def _select_batch_indices(
    losses: np.ndarray, batch: int, multiplier: int, rng: np.random.Generator
) -> np.ndarray:
    order = np.argsort(-losses, kind="stable")
    top = order[: min(multiplier * batch, order.shape[0])]
    return top[rng.choice(top.shape[0], size=batch, replace=False)]


def _draw(
    pool_values: np.ndarray,
    pool_labels: np.ndarray,
    batch: int,
    config: RunConfig,
    detector,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    n = pool_values.shape[0]
    if config.ohem:
        take = min(n, config.hsi_candidate_multiple * batch)
        cand = rng.choice(n, size=take, replace=False)
        scores = _scores_chunked(detector, pool_values[cand])
        losses = hsi_detector_loss(scores, pool_labels[cand]).per_example
        pick = cand[_select_batch_indices(losses, batch, config.hard_pool_multiplier, rng)]
    else:
        pick = rng.choice(n, size=batch, replace=False)
    return pool_values[pick], pool_labels[pick]


def train_hsi_split(
    raster: Raster,
    train_pixels: dict[tuple[str, int, int], int],
    num_classes: int,
    config: RunConfig,
    seed: int,
    telemetry=None,
):
    """Full three-stage run on one split; returns the trained detector and
    the normalization stats used."""
    stats = compute_normalization([raster])
    normalized = normalize_raster(raster, stats)
    padded = reflect_pad_raster(normalized)
    coords = [(r + MARGIN, c + MARGIN) for (_rid, r, c) in sorted(train_pixels)]
    labels = np.asarray([train_pixels[k] for k in sorted(train_pixels)], dtype=np.int64)
    if not coords:
        raise CannotComposeBatchError("empty training pixel set")
    values = extract_patches(padded, coords)
    batch = min(config.batch_size, values.shape[0])

    detector = build_detector(
        config.detector_spec(raster.channels, output_units=num_classes),
        stream_seed(seed, "detector"),
    )
    rng = np.random.default_rng(stream_seed(seed, "sampling"))
    dropout_gen = torch.Generator().manual_seed(stream_seed(seed, "dropout"))
    vel = init_velocity(detector)
    sched = _hsi_schedule(config, config.lr_detector)

    def det_step(x_np, y_np, t, stage):
        scores = detector.forward_train(
            torch.from_numpy(x_np), dropout_generator=dropout_gen
        )
        lv = hsi_detector_loss(scores, torch.from_numpy(y_np))
        if not np.isfinite(lv.scalar):
            raise DivergenceError(f"{stage} iteration {t}: non-finite loss")
        lv.tensor.backward()
        module_sgd_step(detector, vel, sched.lr(t), sched.momentum, sched.weight_decay)
        if telemetry is not None:
            telemetry.write(
                {"stage": stage, "iteration": t, "lr": sched.lr(t), "loss": lv.scalar}
            )
        return lv.scalar

    # stage 1: detector with mining over the labeled pool
    for t in range(sched.iterations):
        x, y = _draw(values, labels, batch, config, detector, rng)
        det_step(x, y, t, "hsi-stage1")

    # stage 2: discriminator and hard example generator
    generator = build_generator(
        config.generator_spec(raster.channels), stream_seed(seed, "generator")
    )
    discriminator = build_discriminator(
        config.discriminator_spec(raster.channels), stream_seed(seed, "discriminator")
    )
    g_vel = init_velocity(generator)
    d_vel = init_velocity(discriminator)
    g_sched = _hsi_schedule(config, config.lr_hng)
    d_sched = _hsi_schedule(config, config.lr_discriminator)
    detector.requires_grad_(False)
    for t in range(g_sched.iterations):
        idx = rng.integers(0, values.shape[0], size=batch)
        real = torch.from_numpy(values[idx])
        true = labels[idx]
        generated = generator(real)

        d_real = discriminator(real)
        d_fake = discriminator(generated.detach())
        lv_d = discriminator_loss(d_real, d_fake)
        if not np.isfinite(lv_d.scalar):
            raise DivergenceError(f"hsi-stage2 iteration {t}: non-finite d loss")
        lv_d.tensor.backward()
        module_sgd_step(discriminator, d_vel, d_sched.lr(t), d_sched.momentum, d_sched.weight_decay)

        with torch.no_grad():
            cat_losses = hsi_per_category_losses(detector.forward_train(real))
        adv = np.asarray(
            [heg_adversarial_label(cat_losses[i], int(true[i])) for i in range(batch)],
            dtype=np.int64,
        )
        discriminator.requires_grad_(False)
        det_scores = detector.forward_train(generated)
        lv_cls = hsi_detector_loss(det_scores, torch.from_numpy(adv))
        lv_disc = detector_loss(discriminator(generated), 1.0)
        total = lv_cls.tensor + lv_disc.tensor
        if not np.isfinite(float(total.detach())):
            raise DivergenceError(f"hsi-stage2 iteration {t}: non-finite heg loss")
        total.backward()
        discriminator.requires_grad_(True)
        module_sgd_step(generator, g_vel, g_sched.lr(t), g_sched.momentum, g_sched.weight_decay)
        if telemetry is not None:
            telemetry.write(
                {
                    "stage": "hsi-stage2",
                    "iteration": t,
                    "d_loss": lv_d.scalar,
                    "heg_loss": float(total.detach()),
                }
            )
    detector.requires_grad_(True)

    # stage 3: detector over real plus generated hard examples (true labels)
    vel = init_velocity(detector)
    generator.requires_grad_(False)
    for t in range(sched.iterations):
        gen_idx = rng.integers(0, values.shape[0], size=batch)
        with torch.no_grad():
            gen_vals = generator(torch.from_numpy(values[gen_idx])).cpu().numpy()
        pool_vals = np.concatenate([values, gen_vals])
        pool_labs = np.concatenate([labels, labels[gen_idx]])
        x, y = _draw(pool_vals, pool_labs, batch, config, detector, rng)
        det_step(x, y, t, "hsi-stage3")
    generator.requires_grad_(True)
    return detector, stats


def predict_hsi(
    detector, raster: Raster, stats, pixels: list[tuple[str, int, int]]
) -> np.ndarray:
    normalized = normalize_raster(raster, stats)
    padded = reflect_pad_raster(normalized)
    coords = [(r + MARGIN, c + MARGIN) for (_rid, r, c) in pixels]
    values = extract_patches(padded, coords)
    scores = _scores_chunked(detector, values)
    return scores.argmax(axis=1)


def run_hsi(
    raster: Raster, labels: LabelSet, config: RunConfig, telemetry=None
) -> dict:
    """Repeated-split evaluation: train on per-class samples, test on the
    rest, report accuracy mean and standard deviation over splits."""
    if not labels.pixel_labels:
        raise DataError("hsi mode needs per-pixel category labels")
    num_classes = len(labels.classes) if labels.classes else (
        max(l for m in labels.pixel_labels.values() for l in m.values()) + 1
    )
    results = []
    for split in range(config.hsi_splits):
        split_seed = int(
            np.random.SeedSequence(entropy=(config.seed, 1000 + split)).generate_state(1)[0]
        )
        train, test, deficits = split_hsi_train_test(
            labels, per_class=config.hsi_per_class, seed=split_seed
        )
        if not test:
            raise DataError("split left no test pixels; lower hsi_per_class")
        detector, stats = train_hsi_split(
            raster, train, num_classes, config, split_seed, telemetry=telemetry
        )
        keys = sorted(test)
        preds = predict_hsi(detector, raster, stats, keys)
        truth = np.asarray([test[k] for k in keys], dtype=np.int64)
        acc = float((preds == truth).mean() * 100.0)
        results.append(
            HsiSplitResult(
                split_seed=split_seed,
                accuracy=acc,
                train_size=len(train),
                test_size=len(test),
            )
        )
        if telemetry is not None:
            telemetry.write({"stage": "hsi-eval", "split": split, "accuracy": acc})
    accs = np.asarray([r.accuracy for r in results])
    return {
        "accuracies": [r.accuracy for r in results],
        "mean": float(accs.mean()),
        "std": float(accs.std()),
        "splits": results,
    }
