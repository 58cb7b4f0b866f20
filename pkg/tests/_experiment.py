"""Shared desk-scale experiment harness for the ordering acceptance tests.

One synthetic dataset is generated once; each variant (plain single-stage,
single-stage with hard mining, full three-stage) trains at reduced width
with several seeds and is scored by dense-truth ROC AUC over the test
rasters. Results are cached per session because three of the acceptance
checks read the same runs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from bloomdet.config import RunConfig
from bloomdet.data.dataset import Dataset
from bloomdet.data.raster import normalize_raster
from bloomdet.data.synth import build_synthetic_dataset
from bloomdet.evaluation import roc_curve
from bloomdet.inference import sliding_window_infer
from bloomdet.training.stages import RunIO, train

DATASET_SEED = 1234
TRAIN_SEEDS = (0, 1, 2, 3, 4)


class ListTelemetry:
    def __init__(self):
        self.rows = []

    def write(self, record: dict) -> None:
        self.rows.append(dict(record))


def desk_config(mode: str, ohem: bool, seed: int, **overrides) -> RunConfig:
    base = dict(
        mode=mode,
        seed=seed,
        ohem=ohem,
        bank_width=12,
        trunk_width=24,
        hng_base_width=8,
        disc_width=8,
        detector_init_std=0.1,
        detector_residual_init_std=0.05,
        hng_init_std=0.1,
        hng_output_init_std=1.0,
        disc_init_std=0.15,
        lr_discriminator=1e-3,
        batch_size=64,
        window_count=24,
        stage3_generated_per_iter=64,
        iterations=300 if mode == "rtd-single" else 150,
        lr_drop_every=120 if mode == "rtd-single" else 60,
        infer_window=128,
        synth_size=128,
        synth_bands=2,
        synth_band_steps=80,
        synth_label_noise=0.0,
        synth_hard_frac=0.004,
        synth_test_hard_frac=0.04,
        synth_hard_amp_frac=0.7,
    )
    base.update(overrides)
    cfg = RunConfig(**base)
    cfg.validate()
    return cfg


def desk_dataset(config: RunConfig | None = None) -> Dataset:
    cfg = config or desk_config("rtd-single", True, 0)
    return build_synthetic_dataset(
        cfg.synth_config(),
        seed=DATASET_SEED,
        n_train_pos=cfg.synth_train_pos,
        n_train_neg=cfg.synth_train_neg,
        n_test_pos=cfg.synth_test_pos,
        n_test_neg=cfg.synth_test_neg,
        test_hard_frac=(None if cfg.synth_test_hard_frac < 0 else cfg.synth_test_hard_frac),
    )


def dense_truth_auc(state, data: Dataset, window: int) -> float:
    """Classic AUC over evaluable test pixels, positives from the dense
    synthetic truth masks. Pixels in a ring around the truth (within the
    detector's receptive radius) see the band inside their context window
    and are excluded rather than counted as negatives."""
    from scipy import ndimage

    scores, labels = [], []
    for raster in data.test_pos + data.test_neg:
        normalized = normalize_raster(raster, state.norm_stats)
        score_map = sliding_window_infer(state.detector, normalized, window=window)
        ev = score_map.evaluable
        truth = data.truth.get(raster.raster_id)
        if truth is not None:
            halo = ndimage.binary_dilation(truth, np.ones((3, 3), bool), iterations=12)
            ev = ev & (truth | ~halo)
            flat_truth = truth[ev]
        else:
            flat_truth = np.zeros(int(ev.sum()), dtype=bool)
        scores.append(score_map.scores[ev].astype(np.float64))
        labels.append(flat_truth)
    return roc_curve(np.concatenate(scores), np.concatenate(labels)).auc


@dataclass
class VariantResult:
    variant: str
    seed: int
    auc: float
    telemetry: list


def run_variant(data: Dataset, variant: str, seed: int, **overrides) -> VariantResult:
    mode = "rtd-3stage" if variant == "3stage" else "rtd-single"
    ohem = variant != "plain"
    cfg = desk_config(mode, ohem, seed, **overrides)
    telemetry = ListTelemetry()
    state = train(data, cfg, io=RunIO(telemetry=telemetry))
    auc = dense_truth_auc(state, data, cfg.infer_window)
    return VariantResult(variant=variant, seed=seed, auc=auc, telemetry=telemetry.rows)


def run_ordering_experiment(
    data: Dataset, seeds=TRAIN_SEEDS, variants=("plain", "ohem", "3stage"), **overrides
) -> dict[str, list[VariantResult]]:
    return {
        v: [run_variant(data, v, seed, **overrides) for seed in seeds] for v in variants
    }
