"""Run configuration: one flat mapping that covers every command.

Configs load from YAML (a flat key: value mapping), can be overridden on the
command line with ``--set key=value``, and reject unknown keys outright so a
typo cannot silently fall back to a default. Defaults follow the published
training protocol: batch 256 at a 1:3 positive:negative ratio, 100 windows
of 37x37 per iteration, SGD momentum 0.9 with weight decay 5e-4, base
learning rates 0.01 (detector, generator) and 1e-4 (discriminator), schedule
1250 iterations per stage with a 10x drop every 500 (three-stage) or 2500
iterations with a drop every 1000 (single-stage).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .data.synth import SynthConfig
from .errors import ConfigError
from .models.adversary import DiscriminatorSpec, GeneratorSpec
from .models.detector import DetectorSpec
from .sampling import SamplerConfig

OUTPUT_ROOT_ENV = "BLOOMDET_OUT"

MODES = ("rtd-single", "rtd-3stage", "hsi")


@dataclass
class RunConfig:
    # run identity
    mode: str = "rtd-3stage"
    seed: int = 0
    data_dir: str = ""
    out_dir: str = "run"
    # sampler
    window_height: int = 37
    window_width: int = 37
    window_count: int = 100
    batch_size: int = 256
    pos_ratio: int = 1
    neg_ratio: int = 3
    hard_pool_multiplier: int = 2
    ohem: bool = True
    # schedule (0 means: use the mode default)
    iterations: int = 0
    stage1_iterations: int = 0
    stage2_iterations: int = 0
    stage3_iterations: int = 0
    stage2_lr_drop_every: int = 0
    lr_detector: float = 0.01
    lr_hng: float = 0.01
    lr_discriminator: float = 0.0001
    lr_drop_every: int = 0
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 0.0005
    # model widths and initialization
    bank_width: int = 100
    trunk_width: int = 200
    hng_base_width: int = 32
    disc_width: int = 32
    dropout_rate: float = 0.5
    detector_init_std: float = 0.01
    detector_residual_init_std: float = 0.005
    hng_init_std: float = 0.02
    hng_output_init_std: float = 50.0
    disc_init_std: float = 0.01
    # training plumbing
    stage3_generated_per_iter: int = 256
    checkpoint_every: int = 250
    augment_negatives: bool = False
    # hsi
    hsi_benchmark: str = "indian_pines"
    hsi_per_class: int = 200
    hsi_splits: int = 5
    hsi_candidate_multiple: int = 8
    # inference / evaluation
    infer_window: int = 600
    infer_threshold: float = 0.5
    # synthetic data generation
    synth_size: int = 128
    synth_channels: int = 8
    synth_bands: int = 3
    synth_band_steps: int = 320
    synth_band_width_min: int = 2
    synth_band_width_max: int = 5
    synth_labels: int = 80
    synth_label_noise: float = 0.02
    synth_noise: float = 1.0
    synth_season_amp: float = 3.0
    synth_unseen_amp: float = 3.0
    synth_signature_amp: float = 3.0
    synth_hard_frac: float = 0.02
    synth_test_hard_frac: float = -1.0
    synth_hard_amp_frac: float = 0.9
    synth_unseen_frac: float = 0.25
    synth_field_cells: int = 4
    synth_mask_radius: int = 0
    synth_train_pos: int = 2
    synth_train_neg: int = 2
    synth_test_pos: int = 2
    synth_test_neg: int = 1

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in (
            "window_count",
            "batch_size",
            "hard_pool_multiplier",
            "checkpoint_every",
            "stage3_generated_per_iter",
            "bank_width",
            "trunk_width",
            "hng_base_width",
            "disc_width",
            "hsi_per_class",
            "hsi_splits",
            "infer_window",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.iterations < 0 or self.lr_drop_every < 0:
            raise ConfigError("iterations and lr_drop_every cannot be negative")
        if (
            self.stage1_iterations < 0
            or self.stage2_iterations < 0
            or self.stage3_iterations < 0
            or self.stage2_lr_drop_every < 0
        ):
            raise ConfigError("per-stage schedule overrides cannot be negative")
        if not 0.0 <= self.infer_threshold <= 1.0:
            raise ConfigError("infer_threshold must be in [0, 1]")
        self.sampler_config().validate()

    # mode-dependent schedule defaults
    def stage_iterations(self, stage: str = "") -> int:
        per_stage = {
            "stage1": self.stage1_iterations,
            "stage2": self.stage2_iterations,
            "stage3": self.stage3_iterations,
        }.get(stage, 0)
        if per_stage:
            return per_stage
        if self.iterations:
            return self.iterations
        return 2500 if self.mode == "rtd-single" else 1250

    def drop_every(self, stage: str = "") -> int:
        if stage == "stage2" and self.stage2_lr_drop_every:
            return self.stage2_lr_drop_every
        if self.lr_drop_every:
            return self.lr_drop_every
        return 1000 if self.mode == "rtd-single" else 500

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            window_size=(self.window_height, self.window_width),
            window_count=self.window_count,
            batch_size=self.batch_size,
            pos_neg_ratio=(self.pos_ratio, self.neg_ratio),
            hard_pool_multiplier=self.hard_pool_multiplier,
        )

    def detector_spec(self, channels: int, output_units: int = 1) -> DetectorSpec:
        return DetectorSpec(
            in_channels=channels,
            bank_width=self.bank_width,
            trunk_widths=(self.trunk_width,) * 7,
            dropout_rate=self.dropout_rate,
            output_units=output_units,
            init_std=self.detector_init_std,
            residual_init_std=self.detector_residual_init_std,
        )

    def generator_spec(self, channels: int) -> GeneratorSpec:
        return GeneratorSpec(
            channels=channels,
            base_width=self.hng_base_width,
            init_std=self.hng_init_std,
            output_init_std=self.hng_output_init_std,
        )

    def discriminator_spec(self, channels: int) -> DiscriminatorSpec:
        w = self.disc_width
        return DiscriminatorSpec(
            channels=channels,
            widths=(w, 2 * w, 4 * w, 8 * w),
            init_std=self.disc_init_std,
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            size=self.synth_size,
            channels=self.synth_channels,
            num_bands=self.synth_bands,
            band_steps=self.synth_band_steps,
            band_width=(self.synth_band_width_min, self.synth_band_width_max),
            labels_per_raster=self.synth_labels,
            label_noise=self.synth_label_noise,
            noise_sigma=self.synth_noise,
            season_amp=self.synth_season_amp,
            unseen_amp=self.synth_unseen_amp,
            signature_amp=self.synth_signature_amp,
            hard_area_frac=self.synth_hard_frac,
            hard_amp_frac=self.synth_hard_amp_frac,
            unseen_area_frac=self.synth_unseen_frac,
            field_cells=self.synth_field_cells,
            mask_blob_radius=self.synth_mask_radius,
        )

    def resolved_out_dir(self) -> Path:
        out = Path(self.out_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            return Path(root) / out
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value) -> object:
    """Coerce a raw YAML/CLI value to the field's declared type."""
    target = _FIELDS[name].type
    if target in ("int", int):
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        try:
            return int(value)
        except ValueError as e:
            raise ConfigError(f"{name}: expected an integer, got {value!r}") from e
    if target in ("float", float):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        try:
            return float(value)
        except ValueError as e:
            raise ConfigError(f"{name}: expected a number, got {value!r}") from e
    if target in ("bool", bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    return str(value)


def config_from_mapping(mapping: dict) -> RunConfig:
    unknown = sorted(set(mapping) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig()
    for name, value in mapping.items():
        setattr(cfg, name, _coerce(name, value))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: bad YAML ({e})") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a flat mapping")
    return config_from_mapping(raw)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``key=value`` strings on top of a config, with type coercion."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, value.strip()))
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Serialize a config as flat YAML with one documented key per line."""
    docs = {
        "mode": "rtd-single, rtd-3stage, or hsi",
        "seed": "master seed; fixes data order, init, sampling and dropout",
        "data_dir": "dataset directory (manifest.json layout)",
        "out_dir": f"output directory; relative paths resolve under ${OUTPUT_ROOT_ENV} when set",
        "window_height": "negative sampling window height",
        "window_width": "negative sampling window width",
        "window_count": "windows sampled per iteration",
        "batch_size": "examples per SGD step",
        "pos_ratio": "positive share of the batch ratio",
        "neg_ratio": "negative share of the batch ratio",
        "hard_pool_multiplier": "hard pool = multiplier x needed negatives",
        "ohem": "rank negatives by loss before sampling",
        "iterations": "0 = mode default (1250 per stage, 2500 single-stage)",
        "stage1_iterations": "pretraining stage length, 0 = same as iterations",
        "stage2_iterations": "adversary stage length, 0 = same as iterations",
        "stage3_iterations": "joint stage length, 0 = same as iterations",
        "stage2_lr_drop_every": "adversary stage drop interval, 0 = same as lr_drop_every",
        "lr_detector": "detector base learning rate",
        "lr_hng": "generator base learning rate",
        "lr_discriminator": "discriminator base learning rate",
        "lr_drop_every": "0 = mode default (500 three-stage, 1000 single-stage)",
        "lr_drop_factor": "learning rate divisor at each drop",
        "momentum": "classic momentum coefficient",
        "weight_decay": "L2 coefficient folded into the gradient",
        "bank_width": "channels per filter-bank branch",
        "trunk_width": "channels of trunk layers 2-8",
        "hng_base_width": "generator encoder base width",
        "disc_width": "discriminator first-layer width",
        "dropout_rate": "dropout after layers 7 and 8 during training",
        "detector_init_std": "gaussian init std of non-residual detector layers",
        "detector_residual_init_std": "gaussian init std of identity-skip layers",
        "hng_init_std": "generator init std (all but the output layer)",
        "hng_output_init_std": "generator output layer init std",
        "disc_init_std": "discriminator init std",
        "stage3_generated_per_iter": "generated negatives added to the stage-3 pool",
        "checkpoint_every": "iterations between checkpoints",
        "augment_negatives": "also mirror-augment negatives (off: positives only)",
        "hsi_benchmark": "indian_pines, salinas, or paviau",
        "hsi_per_class": "training pixels per class",
        "hsi_splits": "independent splits for the accuracy mean/std",
        "hsi_candidate_multiple": "candidates scored per batch slot in hsi mining",
        "infer_window": "sliding inference window edge",
        "infer_threshold": "detection threshold for thresholded outputs",
        "synth_size": "synthetic raster edge length",
        "synth_channels": "synthetic channel count",
        "synth_bands": "bloom band curves per positive raster",
        "synth_band_steps": "walk steps per band curve (controls band length)",
        "synth_band_width_min": "narrowest band width in pixels",
        "synth_band_width_max": "widest band width in pixels",
        "synth_labels": "sparse positive labels per positive raster",
        "synth_label_noise": "fraction of extra mislabeled off-band positives",
        "synth_noise": "per-channel noise sigma",
        "synth_season_amp": "seasonal shift amplitude (all scenes)",
        "synth_unseen_amp": "transfer patch amplitude (absent from negatives)",
        "synth_signature_amp": "bloom signature amplitude on band pixels",
        "synth_hard_frac": "area fraction of hard signature blobs per raster",
        "synth_test_hard_frac": "hard blob fraction on test scenes, negative = same as training",
        "synth_hard_amp_frac": "hard blob amplitude as a fraction of signature",
        "synth_unseen_frac": "area fraction of transfer patches on positive rasters",
        "synth_field_cells": "coarse grid cells of the smooth shift fields",
        "synth_mask_radius": "radius of a masked-out disk, 0 disables",
        "synth_train_pos": "training positive rasters",
        "synth_train_neg": "training negative rasters",
        "synth_test_pos": "test positive rasters",
        "synth_test_neg": "test negative rasters",
    }
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        rendered = yaml.safe_dump({f.name: value}, default_flow_style=True).strip()
        rendered = rendered[1:-1].strip() if rendered.startswith("{") else rendered
        comment = docs.get(f.name, "")
        lines.append(f"{rendered}  # {comment}" if comment else rendered)
    return "\n".join(lines) + "\n"
