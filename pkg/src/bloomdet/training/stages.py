"""The training stages.

Stage 1 trains the detector alone with cascaded online hard example mining:
every iteration pairs one positive raster with one negative raster (round
robin), samples negative windows, scores all candidates with the current
detector, and takes an SGD step on the hard-mined 1:3 batch.

Stage 2 freezes the detector and trains the generator/discriminator pair on
real negative patches, discriminator first and generator second within each
iteration.

Stage 3 freezes the generator and retrains the detector with the negative
pool widened by generated hard negatives; mining treats both provenances
identically, and the per-batch generated fraction is logged so the expected
decay (the generator's negatives stop being hard as the detector absorbs
them) is observable.

The single-stage mode is stage 1 with the longer schedule and optional
mining, covering the plain and mining-only baselines.

All stochastic choices flow through the state's two generators in a fixed
per-iteration order, so any (data, config, seed) triple yields a bit-exact
trajectory, resumable from any checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..config import RunConfig
from ..data.dataset import Dataset
from ..data.patches import MARGIN, Patch, extract_patches
from ..data.raster import Raster, compute_normalization, normalize_raster
from ..errors import CannotComposeBatchError, DataError, DivergenceError
from ..losses import detector_loss, discriminator_loss, hng_loss
from ..models.adversary import build_discriminator, build_generator
from ..sampling import (
    CandidatePool,
    build_candidate_pool,
    merge_generated_negatives,
    sample_negative_windows,
    score_candidates,
    select_hard_batch,
    select_uniform_batch,
)
from .schedule import StageSchedule
from .sgd import init_velocity, module_sgd_step
from .state import TelemetryWriter, TrainState, fresh_state, save_state, stream_seed

THREE_STAGES = ("stage1", "stage2", "stage3")


@dataclass
class RunIO:
    """Where a run writes its artifacts; all fields optional so the stages
    can run purely in memory under tests."""

    out_dir: Optional[Path] = None
    telemetry: Optional[TelemetryWriter] = None
    stop_budget: Optional[list] = None  # single-element mutable budget, or None

    def emit(self, record: dict) -> None:
        if self.telemetry is not None:
            self.telemetry.write(record)

    def checkpoint(self, state: TrainState, label: str, durable: bool) -> None:
        if self.out_dir is None:
            return
        ckpt = Path(self.out_dir) / "checkpoints"
        if durable:
            save_state(ckpt / f"{label}.pt", state)
        save_state(ckpt / "latest.pt", state)

    def consume_budget(self) -> bool:
        """True while iterations may continue."""
        if self.stop_budget is None:
            return True
        if self.stop_budget[0] <= 0:
            return False
        self.stop_budget[0] -= 1
        return True


@dataclass
class PreparedData:
    channels: int
    stats: object
    pos_rasters: list[Raster]
    pos_centers: list[list[tuple[int, int]]]
    neg_rasters: list[Raster]
    neg_interiors: list[np.ndarray]  # valid patch centers per negative raster


def prepare_training_data(data: Dataset, config: RunConfig) -> PreparedData:
    if not data.train_pos or not data.train_neg:
        raise DataError(
            "training needs at least one positive and one negative raster"
        )
    stats = compute_normalization(data.train_pos + data.train_neg)
    pos_rasters, pos_centers = [], []
    for r in data.train_pos:
        centers = data.labels.positives.get(r.raster_id, [])
        pos_rasters.append(normalize_raster(r, stats))
        pos_centers.append(list(centers))
    if not any(pos_centers):
        raise CannotComposeBatchError("no positive labels on any training raster")
    neg_rasters, neg_interiors = [], []
    for r in data.train_neg:
        rn = normalize_raster(r, stats)
        interior = np.zeros((r.height, r.width), dtype=bool)
        interior[MARGIN : r.height - MARGIN, MARGIN : r.width - MARGIN] = True
        interior &= rn.valid_mask()
        coords = np.argwhere(interior)
        if coords.shape[0] == 0:
            raise DataError(
                f"negative raster {r.raster_id!r} has no usable patch centers"
            )
        neg_rasters.append(rn)
        neg_interiors.append(coords)
    return PreparedData(
        channels=data.channels,
        stats=stats,
        pos_rasters=pos_rasters,
        pos_centers=pos_centers,
        neg_rasters=neg_rasters,
        neg_interiors=neg_interiors,
    )


def _schedule(config: RunConfig, stage: str) -> StageSchedule:
    base = {
        "stage1": config.lr_detector,
        "stage3": config.lr_detector,
        "single": config.lr_detector,
        "stage2": config.lr_hng,
    }[stage]
    sched = StageSchedule(
        stage=stage,
        iterations=config.stage_iterations(stage),
        base_lr=base,
        lr_drop_every=config.drop_every(stage),
        lr_drop_factor=config.lr_drop_factor,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    sched.validate()
    return sched


def _quantiles(losses: np.ndarray) -> dict:
    if losses.size == 0:
        return {"neg_loss_q50": None, "neg_loss_q90": None, "neg_loss_max": None}
    return {
        "neg_loss_q50": float(np.quantile(losses, 0.5)),
        "neg_loss_q90": float(np.quantile(losses, 0.9)),
        "neg_loss_max": float(losses.max()),
    }


def _diverged(state: TrainState, io: RunIO, stage: str, t: int, what: str):
    io.checkpoint(state, f"{stage}-diverged-{t:05d}", durable=True)
    return DivergenceError(f"{stage} iteration {t}: non-finite {what}")


def _build_pool(
    prep: PreparedData, config: RunConfig, state: TrainState, t: int
) -> CandidatePool:
    pos_idx = t % len(prep.pos_rasters)
    neg_idx = t % len(prep.neg_rasters)
    sampler = config.sampler_config()
    windows = sample_negative_windows(
        prep.neg_rasters[neg_idx], sampler, state.sample_rng
    )
    return build_candidate_pool(
        prep.pos_rasters[pos_idx],
        prep.pos_centers[pos_idx],
        prep.neg_rasters[neg_idx],
        windows,
        sampler,
    )


def _generated_patches(
    prep: PreparedData, config: RunConfig, state: TrainState, t: int
) -> list[Patch]:
    neg_idx = t % len(prep.neg_rasters)
    raster = prep.neg_rasters[neg_idx]
    coords = prep.neg_interiors[neg_idx]
    take = config.stage3_generated_per_iter
    idx = state.sample_rng.integers(0, coords.shape[0], size=take)
    centers = [(int(r), int(c)) for r, c in coords[idx]]
    reals = extract_patches(raster, centers)
    with torch.no_grad():
        outs = state.generator(torch.from_numpy(reals)).cpu().numpy()
    return [
        Patch(
            values=outs[i],
            label=0,
            center=(raster.raster_id, centers[i][0], centers[i][1]),
            provenance="generated",
        )
        for i in range(take)
    ]


def _detector_iteration(
    state: TrainState,
    prep: PreparedData,
    config: RunConfig,
    sched: StageSchedule,
    io: RunIO,
    stage: str,
    t: int,
    with_generated: bool,
) -> None:
    pool = _build_pool(prep, config, state, t)
    if with_generated:
        merge_generated_negatives(pool, _generated_patches(prep, config, state, t))
    sampler = config.sampler_config()
    if config.ohem:
        score_candidates(pool, state.detector)
        batch = select_hard_batch(
            pool, sampler, state.sample_rng, augment_negatives=config.augment_negatives
        )
    else:
        batch = select_uniform_batch(
            pool, sampler, state.sample_rng, augment_negatives=config.augment_negatives
        )
    x = torch.from_numpy(batch.values)
    y = torch.from_numpy(batch.labels)
    logits = state.detector.forward_train(
        x, dropout_generator=state.dropout_gen, squash=False
    )
    lv = detector_loss(logits, y, from_logits=True)
    if not np.isfinite(lv.scalar):
        raise _diverged(state, io, stage, t, "loss")
    lv.tensor.backward()
    module_sgd_step(
        state.detector,
        state.velocities["detector"],
        sched.lr(t),
        sched.momentum,
        sched.weight_decay,
    )
    record = {
        "stage": stage,
        "iteration": t,
        "lr": sched.lr(t),
        "loss": lv.scalar,
        "pool_enumerated": pool.enumerated_negative_count,
        "pool_unique": pool.unique_negatives(),
        "dedup_dropped": pool.dedup_dropped,
        "margin_dropped": pool.margin_dropped,
        "clamp_events": pool.clamp_events + lv.clamp_events,
        "generated_fraction": batch.generated_fraction() if with_generated else 0.0,
    }
    record.update(
        _quantiles(
            np.concatenate([pool.negative_losses, pool.generated_losses])
            if pool.scored
            else np.empty(0)
        )
    )
    io.emit(record)


def _run_detector_stage(
    state: TrainState,
    data: Dataset,
    config: RunConfig,
    io: RunIO,
    stage: str,
    with_generated: bool,
) -> TrainState:
    prep = prepare_training_data(data, config)
    sched = _schedule(config, stage)
    if "detector" not in state.velocities or state.iteration == 0:
        state.velocities["detector"] = init_velocity(state.detector)
    if with_generated and state.generator is None:
        raise DataError("stage 3 requires a trained generator in the state")
    if with_generated:
        state.generator.requires_grad_(False)
    try:
        for t in range(state.iteration, sched.iterations):
            if not io.consume_budget():
                io.checkpoint(state, f"{stage}-stopped-{t:05d}", durable=False)
                return state
            _detector_iteration(state, prep, config, sched, io, stage, t, with_generated)
            state.iteration = t + 1
            if state.iteration % config.checkpoint_every == 0:
                io.checkpoint(state, f"{stage}-{state.iteration:05d}", durable=True)
    finally:
        if with_generated:
            state.generator.requires_grad_(True)
    state.completed_stages.append(stage)
    io.checkpoint(state, f"{stage}-final", durable=True)
    return state


def run_stage1(
    data: Dataset,
    config: RunConfig,
    seed: Optional[int] = None,
    *,
    state: Optional[TrainState] = None,
    io: Optional[RunIO] = None,
) -> TrainState:
    """Detector training with mining, from scratch or resumed."""
    io = io or RunIO()
    if state is None:
        cfg = config if seed is None else _with_seed(config, seed)
        prep_stats = prepare_training_data(data, cfg)
        state = fresh_state(cfg, prep_stats.channels, prep_stats.stats)
        state.stage = "stage1"
    return _run_detector_stage(state, data, state.config, io, "stage1", with_generated=False)


def run_single_stage(
    data: Dataset,
    config: RunConfig,
    seed: Optional[int] = None,
    *,
    state: Optional[TrainState] = None,
    io: Optional[RunIO] = None,
) -> TrainState:
    """Detector-only training on the long schedule; mining on or off per
    config. The baseline regimes."""
    io = io or RunIO()
    if state is None:
        cfg = config if seed is None else _with_seed(config, seed)
        prep_stats = prepare_training_data(data, cfg)
        state = fresh_state(cfg, prep_stats.channels, prep_stats.stats)
        state.stage = "single"
    return _run_detector_stage(state, data, state.config, io, "single", with_generated=False)


def run_stage2(
    state: TrainState,
    data: Dataset,
    config: Optional[RunConfig] = None,
    *,
    io: Optional[RunIO] = None,
) -> TrainState:
    """Adversary training: per iteration, one discriminator step on real
    versus generated patches, then one generator step against the frozen
    detector and the just-updated discriminator. These steps keep the
    probability-space losses: the clamp bounds the adversarial gradients,
    so a generator excursion far off the data manifold cannot feed
    unbounded steps back into either network."""
    io = io or RunIO()
    config = config or state.config
    prep = prepare_training_data(data, config)
    if state.generator is None:
        state.generator = build_generator(
            config.generator_spec(prep.channels), stream_seed(config.seed, "generator")
        )
        state.discriminator = build_discriminator(
            config.discriminator_spec(prep.channels),
            stream_seed(config.seed, "discriminator"),
        )
        state.velocities["generator"] = init_velocity(state.generator)
        state.velocities["discriminator"] = init_velocity(state.discriminator)
    d_sched = StageSchedule(
        stage="stage2-d",
        iterations=config.stage_iterations("stage2"),
        base_lr=config.lr_discriminator,
        lr_drop_every=config.drop_every("stage2"),
        lr_drop_factor=config.lr_drop_factor,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    g_sched = _schedule(config, "stage2")
    batch = config.batch_size
    state.detector.requires_grad_(False)
    try:
        for t in range(state.iteration, g_sched.iterations):
            if not io.consume_budget():
                io.checkpoint(state, f"stage2-stopped-{t:05d}", durable=False)
                return state
            neg_idx = t % len(prep.neg_rasters)
            raster = prep.neg_rasters[neg_idx]
            coords = prep.neg_interiors[neg_idx]
            idx = state.sample_rng.integers(0, coords.shape[0], size=batch)
            centers = [(int(r), int(c)) for r, c in coords[idx]]
            real = torch.from_numpy(extract_patches(raster, centers))

            generated = state.generator(real)

            d_real = state.discriminator(real)
            d_fake = state.discriminator(generated.detach())
            lv_d = discriminator_loss(d_real, d_fake)
            if not np.isfinite(lv_d.scalar):
                raise _diverged(state, io, "stage2", t, "discriminator loss")
            lv_d.tensor.backward()
            module_sgd_step(
                state.discriminator,
                state.velocities["discriminator"],
                d_sched.lr(t),
                d_sched.momentum,
                d_sched.weight_decay,
            )

            state.discriminator.requires_grad_(False)
            d_fake_for_g = state.discriminator(generated)
            det_scores = state.detector.forward_train(generated)
            lv_g = hng_loss(det_scores, d_fake_for_g)
            if not np.isfinite(lv_g.scalar):
                raise _diverged(state, io, "stage2", t, "generator loss")
            lv_g.tensor.backward()
            state.discriminator.requires_grad_(True)
            module_sgd_step(
                state.generator,
                state.velocities["generator"],
                g_sched.lr(t),
                g_sched.momentum,
                g_sched.weight_decay,
            )

            io.emit(
                {
                    "stage": "stage2",
                    "iteration": t,
                    "lr": g_sched.lr(t),
                    "lr_discriminator": d_sched.lr(t),
                    "d_loss": lv_d.scalar,
                    "hng_loss": lv_g.scalar,
                    "clamp_events": lv_d.clamp_events + lv_g.clamp_events,
                }
            )
            state.iteration = t + 1
            if state.iteration % config.checkpoint_every == 0:
                io.checkpoint(state, f"stage2-{state.iteration:05d}", durable=True)
    finally:
        state.detector.requires_grad_(True)
    state.completed_stages.append("stage2")
    io.checkpoint(state, "stage2-final", durable=True)
    return state


def run_stage3(
    state: TrainState,
    data: Dataset,
    config: Optional[RunConfig] = None,
    *,
    io: Optional[RunIO] = None,
) -> TrainState:
    """Detector retraining over the union pool of real and generated
    negatives, generator frozen; fresh detector velocity."""
    io = io or RunIO()
    config = config or state.config
    return _run_detector_stage(state, data, config, io, "stage3", with_generated=True)


def advance_stage(state: TrainState, config: RunConfig) -> Optional[str]:
    """The next stage this run still has to execute, updating the cursor
    when the recorded stage is already complete. None when done."""
    sequence = THREE_STAGES if config.mode == "rtd-3stage" else ("single",)
    for stage in sequence:
        if stage in state.completed_stages:
            continue
        if state.stage == stage and state.iteration >= config.stage_iterations(stage):
            state.completed_stages.append(stage)
            continue
        if state.stage != stage:
            state.stage = stage
            state.iteration = 0
        return stage
    return None


def train(
    data: Dataset,
    config: RunConfig,
    *,
    state: Optional[TrainState] = None,
    io: Optional[RunIO] = None,
) -> TrainState:
    """Run (or resume) the full protocol selected by config.mode."""
    io = io or RunIO()
    if state is None:
        prep = prepare_training_data(data, config)
        state = fresh_state(config, prep.channels, prep.stats)
        state.stage = "single" if config.mode == "rtd-single" else "stage1"
    runners = {
        "stage1": lambda: run_stage1(data, config, state=state, io=io),
        "stage2": lambda: run_stage2(state, data, config, io=io),
        "stage3": lambda: run_stage3(state, data, config, io=io),
        "single": lambda: run_single_stage(data, config, state=state, io=io),
    }
    while True:
        stage = advance_stage(state, config)
        if stage is None:
            return state
        runners[stage]()
        if stage not in state.completed_stages:
            return state  # stopped mid-stage by the budget


def _with_seed(config: RunConfig, seed: int) -> RunConfig:
    import dataclasses

    return dataclasses.replace(config, seed=seed)
