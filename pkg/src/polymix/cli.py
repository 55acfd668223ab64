"""Command-line surface for the pipeline.

Batch tool, no interactive mode. Subcommands cover the full path from raw
audio to evaluation reports:

    ingest        manifest + audio -> normalized, segmented corpus
    analyze-bpm   fill missing bpm fields through tempo estimation
    synthesize    generate labeled polyphonic mixtures under a strategy
    features      pooled embedding stacks for every mixture
    train         fit the classifier head, write a checkpoint
    evaluate      metrics report (JSON + CSV + figures)
    sweep         threshold/accuracy curve (CSV + figure)
    validate      re-check every synthesis invariant on an output manifest

Exit codes: 0 success, 1 usage error, 2 data error. Logs go to stderr; data
only to declared output paths.

Option precedence: command-line flag, then the [command] section of the
--config file (INI key=value), then the built-in default.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import audio_io, beat, dsp, features, metrics, model, report, synth
from .corpus import (
    CANONICAL_SAMPLE_RATE,
    ClipRecord,
    DEFAULT_BPM_BIN_WIDTH,
    DEFAULT_SILENCE_THRESHOLD_DB,
    DEFAULT_SILENCE_WINDOW_MS,
    SEGMENT_SECONDS,
    load_manifest,
    segment,
    trim_silence,
    write_manifest,
)
from .errors import NoPeriodicityError, PolymixError

log = logging.getLogger("polymix")


class _Parser(argparse.ArgumentParser):
    # Spec'd exit codes: usage errors are 1, not argparse's default 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _section(config: Optional[configparser.ConfigParser], name: str):
    if config is not None and config.has_section(name):
        return config[name]
    return None


def _resolve(args: argparse.Namespace, section, name: str, default, cast=str):
    """flag > config-file key > default. Flags parse with default None so an
    unset flag is distinguishable from any real value."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if section is not None:
        for key in (name, name.replace("-", "_")):
            if key in section:
                if cast is bool:
                    return section.getboolean(key)
                return cast(section[key])
    return default


def _global_opts(args, config):
    sec = _section(config, "global")
    seed = _resolve(args, sec, "seed", 0, int)
    sample_rate = _resolve(args, sec, "sample-rate", CANONICAL_SAMPLE_RATE, int)
    threads = _resolve(args, sec, "threads", 1, int)
    return seed, sample_rate, threads


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args, config) -> int:
    sec = _section(config, "ingest")
    _, sample_rate, _ = _global_opts(args, config)
    threshold_db = _resolve(args, sec, "silence-db", DEFAULT_SILENCE_THRESHOLD_DB, float)
    window_ms = _resolve(args, sec, "silence-window-ms", DEFAULT_SILENCE_WINDOW_MS, float)
    seg_seconds = _resolve(args, sec, "segment-seconds", SEGMENT_SECONDS, float)

    index = load_manifest(args.manifest)
    out_dir = Path(args.out)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    records: list[ClipRecord] = []
    n_dropped = 0
    for rec in index.records:
        clip = audio_io.read_wav(index.resolve_path(rec), target_sr=sample_rate)
        trimmed = trim_silence(clip, threshold_db=threshold_db, window_ms=window_ms)
        pieces = segment(trimmed, seg_seconds=seg_seconds)
        if not pieces:
            n_dropped += 1
            log.warning("%s: no non-silent %gs segment, dropped", rec.id, seg_seconds)
            continue
        for i, piece in enumerate(pieces):
            seg_id = f"{rec.id}-s{i:03d}"
            rel = f"audio/{seg_id}.wav"
            audio_io.write_wav(out_dir / rel, piece)
            records.append(dataclasses.replace(
                rec, id=seg_id, path=rel, duration_s=piece.duration_seconds))
    write_manifest(records, out_dir / "manifest.jsonl")
    log.info("ingested %d clips -> %d segments (%d dropped) in %s",
             len(index), len(records), n_dropped, out_dir)
    return 0


def cmd_analyze_bpm(args, config) -> int:
    index = load_manifest(args.manifest)
    out_records = []
    n_set, n_failed = 0, 0
    for rec in index.records:
        if rec.bpm is not None and not args.force:
            out_records.append(rec)
            continue
        clip = audio_io.read_wav(index.resolve_path(rec),
                                 target_sr=CANONICAL_SAMPLE_RATE)
        try:
            env = dsp.onset_envelope_from_clip(clip)
            bpm = beat.estimate_tempo(env)
        except (NoPeriodicityError, PolymixError) as exc:
            n_failed += 1
            log.warning("%s: tempo estimation failed (%s), bpm left unset", rec.id, exc)
            out_records.append(dataclasses.replace(rec, bpm=None))
            continue
        n_set += 1
        out_records.append(dataclasses.replace(rec, bpm=round(bpm, 3)))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_manifest(out_records, args.out)
    log.info("bpm set on %d records (%d failures) -> %s", n_set, n_failed, args.out)
    return 0


def cmd_synthesize(args, config) -> int:
    sec = _section(config, "synthesize")
    seed, _, threads = _global_opts(args, config)
    strategy = synth.Strategy(_resolve(args, sec, "strategy", "random"))
    total = _resolve(args, sec, "total", 100, int)
    bin_width = _resolve(args, sec, "bpm-bin-width", DEFAULT_BPM_BIN_WIDTH, float)

    index = load_manifest(args.manifest, bpm_bin_width=bin_width)
    cfg = synth.SynthConfig(
        total_samples=total,
        strategy=strategy,
        output_dir=Path(args.out),
        master_seed=seed,
        bpm_bin_width=bin_width,
        threads=threads,
    )
    manifest = synth.synthesize_dataset(index, cfg)
    log.info("synthesized %d %s mixtures -> %s", total, strategy.value, manifest)
    return 0


def cmd_features(args, config) -> int:
    _, _, threads = _global_opts(args, config)
    index_path = features.export_features(args.mixtures, args.out, threads=threads)
    log.info("features -> %s", index_path)
    return 0


def cmd_train(args, config) -> int:
    sec = _section(config, "train")
    seed, _, _ = _global_opts(args, config)
    cfg = model.TrainConfig(
        batch_size=_resolve(args, sec, "batch-size", 16, int),
        epochs=_resolve(args, sec, "epochs", 10, int),
        learning_rate=_resolve(args, sec, "learning-rate", 1e-4, float),
        weight_decay=_resolve(args, sec, "weight-decay", 0.01, float),
        seed=seed,
    )
    hidden = _resolve(args, sec, "hidden", 256, int)

    dataset = features.load_training_set(args.features)
    stack0 = dataset[0][0]
    head = model.HeadModel.init(stack0.n_layers, stack0.dim, hidden=hidden, seed=seed)
    result = model.train(head, dataset, cfg)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_checkpoint(out_dir / "model.ckpt", result.model, cfg)
    with open(out_dir / "loss.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(result.epoch_losses, start=1):
            fh.write(f"{i},{loss:.10g}\n")
    report.plot_loss_curve(result.epoch_losses, out_dir / "loss.png")
    log.info("trained %d samples, final loss %.5f -> %s",
             len(dataset), result.epoch_losses[-1], out_dir / "model.ckpt")
    return 0


def _score_dataset(checkpoint: str, features_manifest: str):
    head, _ = model.load_checkpoint(checkpoint)
    dataset = features.load_training_set(features_manifest)
    logits = np.stack([model.forward(head, stack) for stack, _ in dataset])
    scores = 1.0 / (1.0 + np.exp(-logits))
    labels = np.stack([y for _, y in dataset])
    return metrics.EvalBatch(scores, labels)


def cmd_evaluate(args, config) -> int:
    sec = _section(config, "evaluate")
    threshold = _resolve(args, sec, "threshold", 0.5, float)
    batch = _score_dataset(args.checkpoint, args.features)
    rep = metrics.evaluate_batch(batch, threshold=threshold)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    metrics.write_threshold_csv(rep.threshold_curve, out_dir / "threshold_curve.csv")
    report.plot_threshold_curve(rep.threshold_curve, out_dir / "threshold_curve.png")
    report.plot_per_label_accuracy(rep.per_label_accuracy,
                                   out_dir / "per_label_accuracy.png")
    log.info("accuracy %.4f | roc_auc %.4f | f1 %.4f -> %s",
             rep.accuracy, rep.roc_auc, rep.f1, out_dir / "report.json")
    return 0


def cmd_sweep(args, config) -> int:
    sec = _section(config, "sweep")
    grid_text = _resolve(args, sec, "grid", None)
    if grid_text:
        grid = [float(x) for x in grid_text.split(",") if x.strip()]
    else:
        grid = list(metrics.DEFAULT_THRESHOLD_GRID)
    batch = _score_dataset(args.checkpoint, args.features)
    curve = metrics.threshold_sweep(batch, grid)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_threshold_csv(curve, out_dir / "sweep.csv")
    report.plot_threshold_curve(curve, out_dir / "sweep.png")
    best_t, best_a = max(curve, key=lambda p: p[1])
    log.info("best threshold %.3f (accuracy %.4f) -> %s",
             best_t, best_a, out_dir / "sweep.csv")
    return 0


def cmd_validate(args, config) -> int:
    sec = _section(config, "validate")
    bin_width = _resolve(args, sec, "bpm-bin-width", DEFAULT_BPM_BIN_WIDTH, float)
    index = load_manifest(args.manifest, bpm_bin_width=bin_width)
    violations = synth.validate_output(args.mixtures, index,
                                       check_audio=not args.skip_audio)
    if violations:
        for v in violations:
            log.error("%s: %s: %s", v.sample_id, v.kind, v.detail)
        log.error("%d violations", len(violations))
        return 2
    log.info("0 violations")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="INI file with [command] sections of key=value options")
    common.add_argument("--seed", type=int, help="master RNG seed (default 0)")
    common.add_argument("--sample-rate", type=int,
                        help=f"working sample rate (default {CANONICAL_SAMPLE_RATE})")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")
    common.add_argument("--log-level", default=None,
                        choices=["debug", "info", "warning", "error"],
                        help="stderr log level (default info)")

    parser = _Parser(prog="polymix",
                     description="Culturally constrained polyphonic mixture "
                                 "synthesis and multi-label instrument "
                                 "classification tools.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common],
                       help="normalize, silence-trim and segment a raw corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--silence-db", type=float)
    p.add_argument("--silence-window-ms", type=float)
    p.add_argument("--segment-seconds", type=float)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze-bpm", parents=[common],
                       help="estimate tempo for records missing a bpm")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true",
                   help="re-estimate even when bpm is already set")
    p.set_defaults(func=cmd_analyze_bpm)

    p = sub.add_parser("synthesize", parents=[common],
                       help="generate labeled polyphonic mixtures")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy",
                   choices=[s.value for s in synth.Strategy])
    p.add_argument("--total", type=int)
    p.add_argument("--bpm-bin-width", type=float)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("features", parents=[common],
                       help="extract embedding stacks for each mixture")
    p.add_argument("--mixtures", required=True,
                   help="mixture manifest written by synthesize")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common],
                       help="train the classifier head")
    p.add_argument("--features", required=True,
                   help="features.jsonl written by the features command")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hidden", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="metrics report for a checkpoint on a feature set")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common],
                       help="threshold/accuracy curve for a checkpoint")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="comma-separated thresholds in (0,1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", parents=[common],
                       help="re-check synthesis invariants on an output manifest")
    p.add_argument("--mixtures", required=True,
                   help="mixture manifest written by synthesize")
    p.add_argument("--manifest", required=True,
                   help="source corpus manifest the mixtures were drawn from")
    p.add_argument("--bpm-bin-width", type=float)
    p.add_argument("--skip-audio", action="store_true",
                   help="skip reading audio files (metadata checks only)")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0

    config = None
    if getattr(args, "config", None):
        config = configparser.ConfigParser()
        read = config.read(args.config)
        if not read:
            log.error("config file %s not readable", args.config)
            return 2

    level = _resolve(args, _section(config, "global"), "log-level", "info")
    logging.basicConfig(level=getattr(logging, level.upper()),
                        stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args, config)
    except (PolymixError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
