"""Training state, checkpointing and telemetry.

A TrainState carries everything the loops need to continue bit-exactly:
model parameters, per-network velocity buffers, the stage cursor, and the
serialized states of both random streams (one numpy generator for every
sampling decision, one torch generator for dropout masks). Checkpoints
round-trip all of it, so an interrupted run resumed from its latest
checkpoint walks the identical trajectory as an uninterrupted one.

Telemetry is line-oriented JSON with sorted keys: one record per iteration,
deterministic bytes for a deterministic run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..config import RunConfig, config_from_mapping
from ..data.raster import NormalizationStats
from ..errors import FormatError
from ..models.adversary import (
    Discriminator,
    DiscriminatorSpec,
    GeneratorSpec,
    HardNegativeGenerator,
)
from ..models.checkpoint import load_payload, save_payload, state_digest
from ..models.detector import Detector, DetectorSpec

STATE_KIND = "train_state"

# stable stream tags; changing them changes every seeded run
_STREAM_TAGS = {"detector": 1, "generator": 2, "discriminator": 3, "sampling": 4, "dropout": 5}


def stream_seed(master_seed: int, purpose: str) -> int:
    ss = np.random.SeedSequence(entropy=(master_seed, _STREAM_TAGS[purpose]))
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF)


@dataclass
class TrainState:
    config: RunConfig
    channels: int
    output_units: int
    detector: Detector
    norm_stats: NormalizationStats
    generator: Optional[HardNegativeGenerator] = None
    discriminator: Optional[Discriminator] = None
    velocities: dict[str, dict[str, torch.Tensor]] = field(default_factory=dict)
    stage: str = "stage1"
    iteration: int = 0
    completed_stages: list[str] = field(default_factory=list)
    sample_rng: np.random.Generator = None
    dropout_gen: torch.Generator = None

    def digest(self) -> str:
        """Canonical identity of the run state: parameters, velocities, the
        stage cursor, and both rng states."""
        payload = {
            "detector": self.detector.state_dict(),
            "generator": self.generator.state_dict() if self.generator else {},
            "discriminator": self.discriminator.state_dict() if self.discriminator else {},
            "velocities": self.velocities,
            "stage": self.stage,
            "iteration": self.iteration,
            "completed": list(self.completed_stages),
            "sample_rng": json.dumps(self.sample_rng.bit_generator.state, sort_keys=True),
            "dropout": self.dropout_gen.get_state(),
        }
        return state_digest(payload)


def fresh_state(
    config: RunConfig,
    channels: int,
    norm_stats: NormalizationStats,
    output_units: int = 1,
) -> TrainState:
    from ..models.detector import build_detector

    det = build_detector(
        config.detector_spec(channels, output_units), stream_seed(config.seed, "detector")
    )
    rng = np.random.default_rng(stream_seed(config.seed, "sampling"))
    dg = torch.Generator().manual_seed(stream_seed(config.seed, "dropout"))
    return TrainState(
        config=config,
        channels=channels,
        output_units=output_units,
        detector=det,
        norm_stats=norm_stats,
        sample_rng=rng,
        dropout_gen=dg,
    )


def save_state(path, state: TrainState) -> None:
    payload = {
        "format_version": 1,
        "kind": STATE_KIND,
        "config": dataclasses.asdict(state.config),
        "channels": state.channels,
        "output_units": state.output_units,
        "stage": state.stage,
        "iteration": state.iteration,
        "completed_stages": list(state.completed_stages),
        "detector_spec": dataclasses.asdict(state.detector.spec),
        "detector_state": state.detector.state_dict(),
        "velocities": state.velocities,
        "sample_rng_state": state.sample_rng.bit_generator.state,
        "dropout_gen_state": state.dropout_gen.get_state(),
        "norm_mean": state.norm_stats.mean,
        "norm_std": state.norm_stats.std,
    }
    if state.generator is not None:
        payload["generator_spec"] = dataclasses.asdict(state.generator.spec)
        payload["generator_state"] = state.generator.state_dict()
    if state.discriminator is not None:
        payload["discriminator_spec"] = dataclasses.asdict(state.discriminator.spec)
        payload["discriminator_state"] = state.discriminator.state_dict()
    save_payload(path, payload)


def load_state(path) -> TrainState:
    payload = load_payload(path)
    if payload.get("kind") != STATE_KIND:
        raise FormatError(f"{path}: not a training state checkpoint")
    config = config_from_mapping(payload["config"])
    det_spec_d = dict(payload["detector_spec"])
    for k, v in det_spec_d.items():
        if isinstance(v, list):
            det_spec_d[k] = tuple(v)
    det = Detector(DetectorSpec(**det_spec_d))
    det.load_state_dict(payload["detector_state"])
    rng = np.random.default_rng(0)
    rng.bit_generator.state = payload["sample_rng_state"]
    dg = torch.Generator()
    dg.set_state(payload["dropout_gen_state"])
    state = TrainState(
        config=config,
        channels=int(payload["channels"]),
        output_units=int(payload["output_units"]),
        detector=det,
        norm_stats=NormalizationStats(
            mean=np.asarray(payload["norm_mean"]), std=np.asarray(payload["norm_std"])
        ),
        velocities=payload["velocities"],
        stage=payload["stage"],
        iteration=int(payload["iteration"]),
        completed_stages=list(payload["completed_stages"]),
        sample_rng=rng,
        dropout_gen=dg,
    )
    if "generator_state" in payload:
        gen = HardNegativeGenerator(GeneratorSpec(**payload["generator_spec"]))
        gen.load_state_dict(payload["generator_state"])
        state.generator = gen
    if "discriminator_state" in payload:
        spec_d = dict(payload["discriminator_spec"])
        if isinstance(spec_d.get("widths"), list):
            spec_d["widths"] = tuple(spec_d["widths"])
        disc = Discriminator(DiscriminatorSpec(**spec_d))
        disc.load_state_dict(payload["discriminator_state"])
        state.discriminator = disc
    return state


class TelemetryWriter:
    """Appends one JSON record per line; sorted keys, explicit flush."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_telemetry(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no telemetry file")
    records = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            records.append(json.loads(line))
    return records
