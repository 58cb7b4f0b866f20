"""Command-line surface: synth, train, infer, eval, export-features.

Every command reads one flat config (YAML file, then ``--set key=value``
overrides, then convenience flags), validates it, and exits 0 on success.
Failures exit with the code of their error family: 2 for configuration,
3 for data, 4 for numerical divergence, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, apply_overrides, dump_config, load_config
from .data.dataset import load_dataset, save_dataset
from .data.hsi import load_hsi_benchmark
from .data.patches import MARGIN, extract_patch
from .data.raster import normalize_raster
from .data.synth import build_synthetic_dataset
from .errors import BloomdetError, ConfigError, DataError
from .evaluation import export_features, roc_variation_curve, write_curve, write_features
from .inference import save_score_map, sliding_window_infer, threshold_detections
from .training.hsi import run_hsi
from .training.stages import RunIO, train
from .training.state import TelemetryWriter, load_state, stream_seed


def _build_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, args.set or [])
    for flag, key in (("data_dir", "data_dir"), ("out_dir", "out_dir"),
                      ("seed", "seed"), ("mode", "mode")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "workers", 1) != 1:
        raise ConfigError("only --workers 1 is supported")
    cfg.validate()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(cfg: RunConfig, args: argparse.Namespace) -> Path:
    if getattr(args, "checkpoint", None):
        path = Path(args.checkpoint)
    else:
        path = cfg.resolved_out_dir() / "checkpoints" / "latest.pt"
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    return path


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    data = build_synthetic_dataset(
        cfg.synth_config(),
        seed=cfg.seed,
        n_train_pos=cfg.synth_train_pos,
        n_train_neg=cfg.synth_train_neg,
        n_test_pos=cfg.synth_test_pos,
        n_test_neg=cfg.synth_test_neg,
        test_hard_frac=(None if cfg.synth_test_hard_frac < 0 else cfg.synth_test_hard_frac),
    )
    dest = Path(cfg.data_dir) if cfg.data_dir else _out_dir(cfg) / "dataset"
    save_dataset(dest, data)
    print(f"wrote synthetic dataset ({data.channels} channels) to {dest}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    out = _out_dir(cfg)
    (out / "config.yaml").write_text(dump_config(cfg))
    budget = [args.stop_after] if args.stop_after is not None else None
    with TelemetryWriter(out / "telemetry.jsonl") as telemetry:
        if cfg.mode == "hsi":
            if not cfg.data_dir:
                raise ConfigError("hsi mode needs data_dir pointing at the benchmark files")
            raster, labels = load_hsi_benchmark(cfg.hsi_benchmark, cfg.data_dir)
            results = run_hsi(raster, labels, cfg, telemetry=telemetry)
            (out / "hsi_results.json").write_text(json.dumps(
                {k: results[k] for k in ("accuracies", "mean", "std")}, indent=2))
            print(f"accuracy {results['mean']:.2f} +/- {results['std']:.2f} "
                  f"over {len(results['accuracies'])} splits")
            return 0
        if not cfg.data_dir:
            raise ConfigError("training needs data_dir")
        data = load_dataset(cfg.data_dir)
        state = None
        if args.resume:
            state = load_state(out / "checkpoints" / "latest.pt")
        io = RunIO(out_dir=out, telemetry=telemetry, stop_budget=budget)
        state = train(data, cfg, state=state, io=io)
    remaining = "stopped" if budget and budget[0] <= 0 and state.iteration else "done"
    print(f"{remaining}: stage={state.stage} iteration={state.iteration} "
          f"completed={state.completed_stages}")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if not cfg.data_dir:
        raise ConfigError("inference needs data_dir")
    state = load_state(_checkpoint_path(cfg, args))
    data = load_dataset(cfg.data_dir)
    out = _out_dir(cfg) / "scores"
    out.mkdir(parents=True, exist_ok=True)
    window = cfg.infer_window
    print(f"sliding window {window}x{window}, stride {window - 24}")
    for raster in data.test_pos + data.test_neg:
        normalized = normalize_raster(raster, state.norm_stats)
        score_map = sliding_window_infer(state.detector, normalized, window=window)
        path = save_score_map(score_map, out / f"{raster.raster_id}.bdrs")
        hits = len(threshold_detections(score_map, cfg.infer_threshold))
        print(f"{raster.raster_id}: {path.name}, "
              f"{hits} detections at threshold {cfg.infer_threshold}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .inference import load_score_map

    cfg = _build_config(args)
    if not cfg.data_dir:
        raise ConfigError("evaluation needs data_dir")
    data = load_dataset(cfg.data_dir)
    scores_dir = Path(args.scores) if args.scores else cfg.resolved_out_dir() / "scores"
    if not scores_dir.is_dir():
        raise DataError(f"score directory not found: {scores_dir}")
    maps = [load_score_map(p) for p in sorted(scores_dir.glob("*.bdrs"))]
    if not maps:
        raise DataError(f"no score maps in {scores_dir}")
    curve = roc_variation_curve(maps, data.labels)
    out = _out_dir(cfg)
    path = write_curve(curve, out / "variation_curve.txt")
    ndpi = " ".join(f"ndpi@dr={t}={curve.ndpi_at[t]:.3f}" for t in sorted(curve.ndpi_at))
    print(f"auc {curve.auc:.6f} {ndpi}")
    print(f"curve written to {path}")
    return 0


def cmd_export_features(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if not cfg.data_dir:
        raise ConfigError("feature export needs data_dir")
    state = load_state(_checkpoint_path(cfg, args))
    data = load_dataset(cfg.data_dir)
    rng = np.random.default_rng(stream_seed(cfg.seed, "sampling"))
    groups: dict[str, np.ndarray] = {}

    pos = []
    for raster in data.train_pos:
        normalized = normalize_raster(raster, state.norm_stats)
        for center in data.labels.positives.get(raster.raster_id, []):
            pos.append(extract_patch(normalized, center).values)
    if not pos:
        raise DataError("no labeled positives to export")
    groups["positive"] = np.stack(pos)

    neg = []
    per_raster = max(1, args.per_group // max(1, len(data.train_neg)) + 1)
    for raster in data.train_neg:
        normalized = normalize_raster(raster, state.norm_stats)
        interior = np.zeros((raster.height, raster.width), dtype=bool)
        interior[MARGIN : raster.height - MARGIN, MARGIN : raster.width - MARGIN] = True
        interior &= normalized.valid_mask()
        coords = np.argwhere(interior)
        take = min(per_raster, coords.shape[0])
        for i in rng.choice(coords.shape[0], size=take, replace=False):
            r, c = coords[i]
            neg.append(extract_patch(normalized, (int(r), int(c))).values)
    if not neg:
        raise DataError("no negative rasters to export from")
    groups["real-negative"] = np.stack(neg)

    if state.generator is not None:
        src = groups["real-negative"]
        take = min(args.per_group, src.shape[0])
        idx = rng.choice(src.shape[0], size=take, replace=False)
        with torch.no_grad():
            groups["generated-negative"] = (
                state.generator(torch.from_numpy(src[idx])).cpu().numpy()
            )

    features, tags = export_features(
        state.detector, groups, per_group=args.per_group, rng=rng
    )
    out = _out_dir(cfg)
    path = write_features(features, tags, out / "features.txt")
    print(f"wrote {features.shape[0]} x {features.shape[1]} features "
          f"({len(groups)} groups) to {path}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--data-dir", dest="data_dir", help="dataset directory")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, default=1,
                   help="worker count (only 1 is supported)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bloomdet",
        description="Sparse detection in large multispectral rasters",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a detector")
    _add_common(p)
    p.add_argument("--mode", choices=("rtd-single", "rtd-3stage", "hsi"))
    p.add_argument("--resume", action="store_true",
                   help="continue from checkpoints/latest.pt")
    p.add_argument("--stop-after", type=int, default=None, metavar="N",
                   help="stop after N iterations (for interruption tests)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="score test rasters with a trained detector")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default: out dir latest)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate score maps against labels")
    _add_common(p)
    p.add_argument("--scores", help="directory of score maps (default: out dir)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-features", help="dump layer-8 features with provenance")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default: out dir latest)")
    p.add_argument("--per-group", dest="per_group", type=int, default=500)
    p.set_defaults(func=cmd_export_features)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BloomdetError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
