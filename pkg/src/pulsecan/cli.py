"""Command-line pipeline: generate / pretrain / finetune / score / evaluate.

Each command reads an optional flat key=value config file, applies command
line overrides (flags win), writes its resolved config next to its outputs,
and is deterministic for a given seed.  Exit codes: 0 success, 1 usage
error, 2 data/format error, 3 numeric abort.
"""

import os
import sys

# Pin BLAS pools before numpy loads so repeated runs reduce identically;
# --threads only controls our own per-video scoring pool.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


GENERATE_DEFAULTS = {
    "n_identities": 40, "clips_per_identity": 4, "real_fraction": 0.5,
    "duration": 6.0, "fps": 15, "frame_side": 64,
    "pulse_amplitude": 0.015, "noise_std": 0.5,
    "drift_amplitude": 0.0, "drift_frequency": 0.1,
    "background_pulse": 0, "seed": 0,
}
TRAIN_DEFAULTS = {
    "learning_rate_pretrain": 1e-3, "learning_rate_finetune": 1e-2,
    "epochs_pretrain": 15, "epochs_finetune": 10,
    "batch_size": 32, "seed": 0, "early_stop_patience": 3,
    "dev_fraction": 0.7, "split_seed": 0, "input_side": 36,
}
EVALUATE_DEFAULTS = {
    "threshold": 0.5, "window": 15, "dev_fraction": 0.7, "split_seed": 0,
    "subset": "eval", "seed": 0,
}
SCORE_DEFAULTS = {"seed": 0}


def _coerce(key, raw, defaults):
    kind = type(defaults[key])
    try:
        if kind is bool:
            return raw not in ("0", "false", "False", "")
        return kind(raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def resolve_config(defaults, config_path, overrides):
    """defaults < config file < command-line overrides."""
    from .containers import read_kv_config

    resolved = dict(defaults)
    if config_path:
        for key, value in read_kv_config(config_path).items():
            if key not in resolved:
                raise UsageError(f"unknown config key {key!r}")
            resolved[key] = _coerce(key, value, defaults)
    for key, value in overrides.items():
        if value is not None:
            resolved[key] = _coerce(key, str(value), defaults)
    return resolved


def _write_resolved(out_dir, command, resolved, extra=None):
    from .containers import write_kv_config

    mapping = dict(resolved)
    if extra:
        mapping.update(extra)
    write_kv_config(Path(out_dir) / f"{command}_config.txt", mapping)


def _load_dataset(data_dir):
    from .containers import load_bboxes_for, load_sequence, read_manifest

    data_dir = Path(data_dir)
    entries = read_manifest(data_dir / "manifest.csv")
    clips = [load_sequence(data_dir, e) for e in entries]
    bboxes = [load_bboxes_for(data_dir, e) for e in entries]
    return clips, bboxes


def _split(clips, bboxes, dev_fraction, split_seed):
    from .synthetic import split_by_identity

    indexed = list(range(len(clips)))
    # Split on clip indices so bboxes travel with their clip.
    class _Tagged:
        def __init__(self, i):
            self.i = i
            self.identity_id = clips[i].identity_id

    dev, ev = split_by_identity([_Tagged(i) for i in indexed],
                                dev_fraction, split_seed)
    dev_idx = [t.i for t in dev]
    ev_idx = [t.i for t in ev]
    return ([clips[i] for i in dev_idx], [bboxes[i] for i in dev_idx],
            [clips[i] for i in ev_idx], [bboxes[i] for i in ev_idx])


def cmd_generate(args):
    from .containers import (ManifestEntry, write_container, write_manifest,
                             write_pulse_sidecar)
    from .synthetic import DatasetParams, generate_dataset

    cfg = resolve_config(GENERATE_DEFAULTS, args.config, {
        k: getattr(args, k, None) for k in GENERATE_DEFAULTS})
    out = Path(args.out)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    params = DatasetParams(
        n_identities=cfg["n_identities"],
        clips_per_identity=cfg["clips_per_identity"],
        real_fraction=cfg["real_fraction"],
        duration=cfg["duration"], fps=cfg["fps"],
        frame_side=cfg["frame_side"],
        pulse_amplitude=cfg["pulse_amplitude"],
        noise_std=cfg["noise_std"],
        drift_amplitude=cfg["drift_amplitude"],
        drift_frequency=cfg["drift_frequency"],
        background_pulse=bool(cfg["background_pulse"]),
    )
    clips = generate_dataset(params, cfg["seed"])
    entries = []
    for i, clip in enumerate(clips):
        rel = f"clips/clip_{i:04d}.dfv"
        write_container(out / rel, clip.frames, clip.fps)
        write_pulse_sidecar(out / (rel + ".pulse.csv"), clip.pulse_truth)
        entries.append(ManifestEntry(rel, clip.identity_id, clip.label))
    write_manifest(out / "manifest.csv", entries)
    _write_resolved(out, "generate", cfg)
    print(f"wrote {len(clips)} clips to {out}")
    return EXIT_OK


def _train_config(cfg):
    from .training import TrainConfig

    return TrainConfig(
        learning_rate_pretrain=cfg["learning_rate_pretrain"],
        learning_rate_finetune=cfg["learning_rate_finetune"],
        epochs_pretrain=cfg["epochs_pretrain"],
        epochs_finetune=cfg["epochs_finetune"],
        batch_size=cfg["batch_size"], seed=cfg["seed"],
        early_stop_patience=cfg["early_stop_patience"],
    )


def cmd_pretrain(args):
    from .model import CanConfig, save_weights
    from .training import build_sample_bank, pretrain_hr

    cfg = resolve_config(TRAIN_DEFAULTS, args.config, {
        k: getattr(args, k, None) for k in TRAIN_DEFAULTS})
    clips, bboxes = _load_dataset(args.data)
    dev_clips, dev_bboxes, _, _ = _split(clips, bboxes, cfg["dev_fraction"],
                                         cfg["split_seed"])
    can_config = CanConfig(input_side=cfg["input_side"], head="regression")
    bank = build_sample_bank(dev_clips, can_config.input_side, dev_bboxes)
    weights, log = pretrain_hr(_train_config(cfg), dev_clips, can_config, bank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(weights, out / "pretrained.dfw")
    log.write_csv(out / "train_log_pretrain.csv")
    _write_resolved(out, "pretrain", cfg, {"data": args.data})
    print(f"pretrained weights -> {out / 'pretrained.dfw'}")
    return EXIT_OK


def cmd_finetune(args):
    from .model import load_weights, save_weights
    from .training import build_sample_bank, finetune_detector

    cfg = resolve_config(TRAIN_DEFAULTS, args.config, {
        k: getattr(args, k, None) for k in TRAIN_DEFAULTS})
    pretrained = load_weights(args.weights)
    clips, bboxes = _load_dataset(args.data)
    dev_clips, dev_bboxes, _, _ = _split(clips, bboxes, cfg["dev_fraction"],
                                         cfg["split_seed"])
    bank = build_sample_bank(dev_clips, pretrained.config.input_side, dev_bboxes)
    weights, log = finetune_detector(_train_config(cfg), pretrained, dev_clips, bank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(weights, out / "detector.dfw")
    log.write_csv(out / "train_log_finetune.csv")
    _write_resolved(out, "finetune", cfg,
                    {"data": args.data, "weights": args.weights})
    print(f"detector weights -> {out / 'detector.dfw'}")
    return EXIT_OK


def cmd_score(args):
    from .containers import read_container
    from .evaluation import export_timeline, score_video
    from .model import load_weights
    from .preprocessing import FrameSequence

    cfg = resolve_config(SCORE_DEFAULTS, args.config, {
        k: getattr(args, k, None) for k in SCORE_DEFAULTS})
    weights = load_weights(args.weights)
    frames, fps = read_container(args.video)
    seq = FrameSequence(frames, fps, identity_id="unknown")
    timeline = score_video(weights, seq, None, weights.config.input_side,
                           video_id=Path(args.video).stem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_timeline(timeline, out / "timeline.csv")
    _write_resolved(out, "score", cfg,
                    {"weights": args.weights, "video": args.video})
    print(f"timeline ({timeline.scores.size} frames) -> {out / 'timeline.csv'}")
    return EXIT_OK


def cmd_evaluate(args):
    from .containers import write_kv_config
    from .evaluation import evaluate_split, export_roc, export_timeline
    from .model import load_weights

    cfg = resolve_config(EVALUATE_DEFAULTS, args.config, {
        k: getattr(args, k, None) for k in EVALUATE_DEFAULTS})
    weights = load_weights(args.weights)
    clips, bboxes = _load_dataset(args.data)
    if cfg["subset"] == "all":
        subset_clips, subset_bboxes = clips, bboxes
    else:
        dev_c, dev_b, ev_c, ev_b = _split(clips, bboxes, cfg["dev_fraction"],
                                          cfg["split_seed"])
        if cfg["subset"] == "dev":
            subset_clips, subset_bboxes = dev_c, dev_b
        elif cfg["subset"] == "eval":
            subset_clips, subset_bboxes = ev_c, ev_b
        else:
            raise UsageError(f"subset must be dev/eval/all, got {cfg['subset']!r}")
    executor = None
    if args.threads > 1:
        executor = ThreadPoolExecutor(max_workers=args.threads)
    try:
        report, timelines = evaluate_split(
            weights, subset_clips, threshold=cfg["threshold"],
            window=cfg["window"], bboxes_per_clip=subset_bboxes,
            split=f"{cfg['subset']} (identity-disjoint, dev_fraction="
                  f"{cfg['dev_fraction']}, split_seed={cfg['split_seed']})",
            executor=executor)
    finally:
        if executor is not None:
            executor.shutdown()
    out = Path(args.out)
    (out / "timelines").mkdir(parents=True, exist_ok=True)
    write_kv_config(out / "report.txt", report.as_mapping())
    frame_scores = [s for t in timelines for s in t.scores]
    frame_labels = [1 if c.label == "real" else 0
                    for t, c in zip(timelines, subset_clips)
                    for _ in t.scores]
    export_roc(frame_scores, frame_labels, out / "roc.csv")
    for t in timelines:
        export_timeline(t, out / "timelines" / (t.video_id.replace("/", "_") + ".csv"))
    _write_resolved(out, "evaluate", cfg,
                    {"weights": args.weights, "data": args.data,
                     "threads": args.threads})
    print(f"AUC={report.auc:.4f} accuracy={report.accuracy:.4f} "
          f"video AUC={report.video_auc:.4f} -> {out / 'report.txt'}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="pulsecan",
                     description="pulse-based fake-video detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, defaults):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1)
        for key, value in defaults.items():
            p.add_argument(f"--{key}", type=str, default=None,
                           help=f"default: {value}")

    p = sub.add_parser("generate", help="render a synthetic dataset")
    common(p, GENERATE_DEFAULTS)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="pulse pretraining on the dev split")
    p.add_argument("--data", required=True, help="dataset directory")
    common(p, TRAIN_DEFAULTS)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="freeze trunk, train detector head")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True, help="pretrained weight file")
    common(p, TRAIN_DEFAULTS)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("score", help="score one frame container")
    p.add_argument("--weights", required=True)
    p.add_argument("--video", required=True, help="frame container path")
    common(p, SCORE_DEFAULTS)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="frame-level metrics over a split")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    common(p, EVALUATE_DEFAULTS)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    from .containers import FileFormatError
    from .model import WeightFileError
    from .preprocessing import PreprocessError
    from .tensor_ops import NumericError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileFormatError, WeightFileError, PreprocessError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
