"""Command-line entry point: polymix <command> [options].

Every command writes a JSON config snapshot next to its outputs. Passing that
snapshot back with ``polymix --config SNAPSHOT`` replays the run with the
same arguments, which regenerates the outputs bit for bit.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, audio, dataset, features, mixing
from .dataset import INSTRUMENTS, FeatureStore, TrackRecord
from .errors import PolymixError

log = logging.getLogger("polymix")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

# argument names holding filesystem paths; snapshots store them absolute
PATH_ARGS = {"out", "root", "inp", "store", "extra", "tracks", "checkpoint", "preds",
             "baseline", "log_json"}


class JsonLogFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname, "logger": record.name,
                           "message": record.getMessage()}, sort_keys=True)


def _setup_logging(verbose: bool, json_path: str | None):
    root = logging.getLogger()
    root.handlers.clear()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(stream)
    if json_path:
        fh = logging.FileHandler(json_path, mode="w")
        fh.setFormatter(JsonLogFormatter())
        root.addHandler(fh)


def _csv_codes(text: str) -> list[str]:
    codes = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in codes if c not in INSTRUMENTS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown instrument codes {bad}")
    return codes


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _snapshot_path(out: str) -> Path:
    out = Path(out)
    return out / "config.json" if out.is_dir() else out.with_name(out.name + ".config.json")


def write_snapshot(args) -> Path:
    """Record the resolved arguments of this run next to its outputs."""
    values = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "config"):
            continue
        if key in PATH_ARGS and value is not None:
            value = ([os.path.abspath(v) for v in value] if isinstance(value, list)
                     else os.path.abspath(value))
        values[key] = value
    snap = {"polymix_version": __version__, "args": values}
    path = _snapshot_path(args.out)
    with open(path, "w") as fh:
        json.dump(snap, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _manifest_path(path: str) -> Path:
    p = Path(path)
    return p / "manifest.jsonl" if p.is_dir() else p


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args):
    records = dataset.ingest_irmas(args.root)
    problems = dataset.verify_manifest(records) if args.verify else []
    for p in problems:
        log.warning("ingest: %s", p)
    bad = {p.split(":", 1)[0] for p in problems}
    records = [r for r in records if r.clip_id not in bad]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    dataset.write_manifest(args.out, records)
    log.info("ingest: %d records written to %s", len(records), args.out)


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    codes = args.classes or list(INSTRUMENTS)
    records = dataset.synth_corpus({c: args.per_class for c in codes}, args.seed, out,
                                   seconds=args.seconds)
    dataset.write_manifest(out / "manifest.jsonl", records)
    log.info("synth: %d clips (%d classes) written to %s", len(records), len(codes), out)
    if args.polyphonic:
        # test tracks mix parents from a separate seed, never the training clips
        test_seed = args.seed + 10_000 if args.test_seed is None else args.test_seed
        if test_seed == args.seed:
            raise ValueError("--test-seed must differ from --seed")
        n_parents = max(2, -(-2 * args.polyphonic // len(codes)))
        parents = dataset.synth_corpus({c: n_parents for c in codes}, test_seed,
                                       out / "polyphonic" / "parents", seconds=args.seconds)
        tracks = mixing.make_test_tracks(mixing.load_sources(parents), args.polyphonic, test_seed)
        _write_mixed(out / "polyphonic", tracks)
        log.info("synth: %d polyphonic tracks written (test seed %d)", len(tracks), test_seed)


def _write_mixed(out: Path, mixed) -> list[TrackRecord]:
    out.mkdir(parents=True, exist_ok=True)
    tracks = []
    for k, rec in enumerate(mixed):
        codes = [INSTRUMENTS[i] for i in np.flatnonzero(rec.labels)]
        name = f"{'+'.join(codes)}_{k:05d}"
        path = out / f"{name}.wav"
        audio.write_wav(path, rec.clip)
        extra = {"sources": list(rec.sources), "strategy": str(getattr(rec.strategy, "value",
                                                                       rec.strategy))}
        extra.update(rec.info)
        tracks.append(TrackRecord(str(path), codes, name, extra))
    dataset.write_tracks(out / "manifest.jsonl", tracks)
    return tracks


def cmd_mix(args):
    records = dataset.load_manifest(_manifest_path(args.inp))
    out = Path(args.out)
    if args.strategy == "pitch_shift":
        sources = mixing.segment_sources(mixing.load_sources(records))
        mixed = mixing.pitch_shift_augment(sources, args.seed, args.count)
        summary = {"count": len(mixed)}
    else:
        mixed, summ = mixing.build_mixed_dataset(records, args.strategy, args.seed,
                                                 args.max_pairs, args.jobs)
        summary = {"pairs": summ.pairs, "skipped": [list(s) for s in summ.skipped]}
        for a, b, reason in summ.skipped:
            log.info("mix: skipped %s + %s (%s)", a, b, reason)
    _write_mixed(out, mixed)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    log.info("mix: %d records written to %s", len(mixed), out)


def cmd_cqt(args):
    tracks = dataset.load_tracks(_manifest_path(args.inp))
    clips, labels = [], []
    for t in tracks:
        clip = audio.standardize(t.load())
        for seg in audio.segment_clip(clip, 1.0):
            clips.append(seg)
            labels.append(t.labels)
    feats = features.extract_many(clips, args.jobs)
    store = FeatureStore(feats, np.array(labels, dtype=np.uint8).reshape(-1, len(INSTRUMENTS)))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    dataset.write_store(store, args.out)
    log.info("cqt: %d segments from %d tracks written to %s", store.count, len(tracks), args.out)


def _model_config(args):
    from .nn import ARCHITECTURES

    config = ARCHITECTURES[args.arch]
    changes = {}
    if args.depths:
        changes["depths"] = tuple(args.depths)
    if args.dense_units:
        changes["dense_units"] = args.dense_units
    return config.scaled(**changes) if changes else config


def cmd_train(args):
    from .nn import build_model
    from .nn.checkpoint import save_checkpoint
    from .traineval import Schedule, make_folds, train_fold

    store = dataset.read_store(args.store, expect_shape=(features.N_BINS, features.N_FRAMES))
    extra = None
    for path in args.extra or []:
        part = dataset.read_store(path, expect_shape=store.shape)
        extra = part if extra is None else extra.concat(part)
    folds = make_folds(store.labels, args.folds, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "folds.json", "w") as fh:
        json.dump(folds.tolist(), fh)
    schedule = Schedule(batch_size=args.batch_size, base_lr=args.lr, epoch_decay=args.decay,
                        max_epochs=args.epochs, seed=args.seed,
                        refresh_bn_stats=args.refresh_bn)
    config = _model_config(args)
    for k in args.fold if args.fold is not None else range(args.folds):
        model = build_model(config, seed=args.seed * 100 + k)
        schedule.seed = args.seed * 100 + k
        model, history = train_fold(model, store, folds, k, schedule, extra)
        save_checkpoint(out / f"fold{k}.pmxm", model,
                        extra={"fold": k, "schedule": schedule.to_json()})
        with open(out / f"history_fold{k}.json", "w") as fh:
            json.dump(history, fh, indent=1, sort_keys=True)
        log.info("train: fold %d done, best epoch %d", k, history[-1]["best_epoch"])


def cmd_predict(args):
    from .nn.checkpoint import load_checkpoint
    from .traineval import PredictionMatrix, write_predictions
    from .traineval.evaluation import track_segments

    models = [load_checkpoint(p)[0] for p in args.checkpoint]
    tracks = dataset.load_tracks(_manifest_path(args.tracks))
    scores = []
    for t in tracks:
        segs = track_segments(t.load())
        # several checkpoints (e.g. fold models) are averaged per segment
        per_model = [m.predict(segs).astype(np.float64) for m in models]
        scores.append(np.mean(per_model, axis=0).mean(axis=0))
    pm = PredictionMatrix(np.array(scores).reshape(-1, len(INSTRUMENTS)),
                          np.array([t.labels for t in tracks]).reshape(-1, len(INSTRUMENTS)))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_predictions(args.out, [t.clip_id for t in tracks], pm)
    log.info("predict: %d tracks scored with %d model(s)", len(tracks), len(models))


def cmd_evaluate(args):
    from .traineval import evaluate_predictions, f1_delta_table, read_predictions
    from .traineval.evaluation import combine_prediction_files

    if args.ensemble == "mean":
        _, pm = combine_prediction_files(args.preds)
        reports = {"ensemble": evaluate_predictions(pm, args.threshold)}
    else:
        reports = {p: evaluate_predictions(read_predictions(p)[1], args.threshold)
                   for p in args.preds}
    for name, report in reports.items():
        print(f"== {name}")
        print(report.table())
    if args.baseline:
        base = evaluate_predictions(read_predictions(args.baseline)[1], args.threshold)
        for name, report in reports.items():
            print(f"== per-class F1 change, {name} vs baseline")
            print(f1_delta_table(report, base, "run", "baseline"))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump({k: r.to_json() for k, r in reports.items()}, fh, indent=2, sort_keys=True)


def cmd_ensemble(args):
    from .traineval import write_predictions
    from .traineval.evaluation import combine_prediction_files

    ids, pm = combine_prediction_files(args.preds)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_predictions(args.out, ids, pm)
    log.info("ensemble: averaged %d prediction files into %s", len(args.preds), args.out)


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="polymix",
        description="Mixing-based augmentation and CNN training for instrument recognition.")
    p.add_argument("--config", metavar="SNAPSHOT",
                   help="replay a run from the config.json snapshot it wrote")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes for mixing and feature extraction (default 1); "
                        "outputs do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("--log-json", metavar="FILE", help="also write JSON-lines logs to FILE")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("ingest", help="build a manifest from an IRMAS-style training tree")
    s.add_argument("--root", required=True, help="directory holding <instrument>/*.wav")
    s.add_argument("--out", required=True, help="manifest to write (JSON lines)")
    s.add_argument("--verify", action="store_true",
                   help="decode every file, dropping unreadable ones (default off)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate the synthetic monophonic corpus")
    s.add_argument("--out", required=True, help="output directory (WAVs + manifest.jsonl)")
    s.add_argument("--per-class", type=int, default=60, help="clips per class (default 60)")
    s.add_argument("--seconds", type=float, default=3.0, help="clip length (default 3.0)")
    s.add_argument("--classes", type=_csv_codes, default=None,
                   help="comma-separated instrument codes (default all 11)")
    s.add_argument("--polyphonic", type=int, default=0,
                   help="also write this many two-instrument tracks to OUT/polyphonic")
    s.add_argument("--test-seed", type=int, default=None,
                   help="seed of the polyphonic tracks' parent clips (default seed + 10000)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mix", help="build a mixed training set from a monophonic manifest")
    s.add_argument("--in", dest="inp", required=True,
                   help="manifest file, or a directory containing manifest.jsonl")
    s.add_argument("--out", required=True, help="output directory (WAVs, manifest, summary)")
    s.add_argument("--strategy", required=True,
                   choices=["random", "genre", "tempo", "pitch", "pitch_shift"],
                   help="pairing strategy; pitch_shift writes single-label shifted copies")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--max-pairs", type=int, default=None,
                   help="cap on mixes per class pair (default: no cap)")
    s.add_argument("--count", type=int, default=None,
                   help="pitch_shift only: number of outputs (default one per segment)")
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("cqt", help="extract 96x87 CQT features into a store (.cqts)")
    s.add_argument("--in", dest="inp", required=True,
                   help="manifest (monophonic or mixed); tracks are cut into 1-s segments")
    s.add_argument("--out", required=True, help="feature store to write")
    s.set_defaults(func=cmd_cqt)

    s = sub.add_parser("train", help="k-fold training, one checkpoint per fold")
    s.add_argument("--store", required=True, help="monophonic feature store")
    s.add_argument("--extra", nargs="*", default=None,
                   help="augmentation stores, added to the training side of every fold")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--arch", choices=["initial", "proposed"], default="proposed",
                   help="architecture (default proposed)")
    s.add_argument("--folds", type=int, default=5, help="number of folds (default 5)")
    s.add_argument("--fold", type=int, nargs="*", default=None,
                   help="train only these validation folds (default all)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--epochs", type=int, default=100, help="maximum epochs (default 100)")
    s.add_argument("--lr", type=float, default=1e-4, help="base learning rate (default 1e-4)")
    s.add_argument("--decay", type=float, default=0.9,
                   help="per-epoch learning-rate factor (default 0.9)")
    s.add_argument("--batch-size", type=int, default=128, help="batch size (default 128)")
    s.add_argument("--depths", type=_csv_ints, default=None,
                   help="override block depths, e.g. 8,16,32,64")
    s.add_argument("--dense-units", type=int, default=None,
                   help="override the hidden dense width (default 1024)")
    s.add_argument("--refresh-bn", action="store_true",
                   help="after training, recompute BatchNorm statistics on the training "
                        "side with dropout off")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="score tracks; writes a predictions CSV")
    s.add_argument("--checkpoint", nargs="+", required=True,
                   help="checkpoint(s); several are averaged")
    s.add_argument("--tracks", required=True, help="track manifest (file or directory)")
    s.add_argument("--out", required=True,
                   help="CSV: track_id, score_<code> x11, label_<code> x11")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="metrics from predictions CSV files")
    s.add_argument("--preds", nargs="+", required=True, help="predictions CSV file(s)")
    s.add_argument("--ensemble", choices=["mean", "none"], default="none",
                   help="mean: one report for the averaged predictions (default none)")
    s.add_argument("--baseline", default=None,
                   help="predictions CSV to compare per-class F1 against")
    s.add_argument("--threshold", type=float, default=0.5, help="F1 threshold (default 0.5)")
    s.add_argument("--out", default=None, help="write the reports as JSON here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ensemble", help="average prediction files into one")
    s.add_argument("--preds", nargs="+", required=True, help="predictions CSV files")
    s.add_argument("--out", required=True, help="averaged predictions CSV")
    s.set_defaults(func=cmd_ensemble)
    return p


def _replay_args(parser, snapshot_path):
    with open(snapshot_path) as fh:
        values = json.load(fh)["args"]
    command = values["command"]
    sub = parser._subparsers._group_actions[0].choices[command]
    # options added after the snapshot was written fall back to their defaults
    defaults = {a.dest: a.default for a in sub._actions if a.dest != "help"}
    args = argparse.Namespace(**{**defaults, **values})
    args.func = sub.get_default("func")
    args.config = snapshot_path
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.config:
        try:
            args = _replay_args(parser, args.config)
        except (OSError, ValueError, KeyError) as exc:
            print(f"polymix: cannot read config snapshot: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        print("polymix: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.verbose, args.log_json)
    try:
        args.func(args)
        if getattr(args, "out", None):
            write_snapshot(args)
    except (PolymixError, OSError, ValueError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
