"""Command-line pipeline: synth / split / train / predict / evaluate /
bouts / stats.

Configuration is a flat ``key = value`` text file; any command-line flag
overrides the file. Every command is deterministic given its seeds, and
all CSV floats are written with shortest round-trip formatting so reruns
are byte-identical.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, metrics, postprocess, stats
from .dataio import (
    ActivityLabel,
    FoldPolicy,
    ManifestEntry,
    Recording,
    SplitSet,
    SynthSpec,
    parse_label,
)
from .errors import InvalidConfig, InvalidSpec, MissingColumn, PipelineError
from .model import (
    HarModelConfig,
    load_checkpoint,
    predict_probs,
    save_checkpoint,
)
from .postprocess import GaitGroup, SegmentPrediction
from .preprocess import Window, labeled_windows, resample_recording, window_stream
from .stats import UMethod
from .train import TrainConfig, train, write_train_report

PROB_COLUMNS = ("p_walking", "p_running", "p_stairs", "p_standing",
                "p_sitlying", "p_sit2stand")
SEGMENT_HEADER = ("recording_id", "t_start", "t_end") + PROB_COLUMNS + (
    "label", "label_filtered")
BOUT_HEADER = ("recording_id", "group", "t_start", "t_end", "duration")
MEANS_HEADER = ("subject_id", "group_tag", "n_gait_bouts", "mean_gait_bout_s")
STATS_HEADER = ("pair", "n1", "n2", "U", "p", "method", "significant")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def load_config_file(path: str | Path) -> dict[str, str]:
    """Flat key = value lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


class Options:
    """CLI values override config-file values override defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_cfg = load_config_file(args.config) if getattr(args, "config", None) else {}

    def get(self, name: str, cast, default):
        cli = getattr(self.args, name, None)
        if cli is not None:
            return cli
        if name in self.file_cfg:
            raw = self.file_cfg[name]
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes")
            return cast(raw)
        return default


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise PipelineError(f"{what} not found: {path}")
    return path


# --- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    opt = Options(args)
    outdir = Path(args.outdir)
    per_class = opt.get("per_class", int, 2)
    duration = opt.get("duration", float, 60.0)
    seed = opt.get("seed", int, 0)
    group_tag = opt.get("group_tag", str, "synthetic")
    spec = SynthSpec(
        per_class={label: per_class for label in ActivityLabel},
        duration_s=duration,
        seed=seed,
    )
    recordings = dataio.synth_generate(spec)
    rec_dir = outdir / "recordings"
    rec_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in recordings:
        rec_path = rec_dir / f"{rec.recording_id}.csv"
        dataio.serialize_recording(rec, rec_path)
        entries.append(ManifestEntry(
            recording_id=rec.recording_id,
            subject_id=rec.subject_id,
            device_location=rec.device_location,
            path=rec_path,
            group_tag=group_tag,
            walking_aid=None,
        ))
    dataio.write_manifest(entries, outdir / "manifest.csv")
    print(f"wrote {len(recordings)} recordings under {outdir}")
    return 0


# --- split ------------------------------------------------------------------

def _read_split(path: Path) -> dict[str, SplitSet]:
    out: dict[str, SplitSet] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["subject_id", "assignment"]:
            raise MissingColumn(f"{path}: expected header subject_id,assignment")
        for row in reader:
            if row:
                out[row[0]] = SplitSet(row[1])
    return out


def _read_folds(path: Path) -> list[dict[str, SplitSet]]:
    folds: dict[int, dict[str, SplitSet]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["fold", "subject_id", "assignment"]:
            raise MissingColumn(f"{path}: expected header fold,subject_id,assignment")
        for row in reader:
            if row:
                folds.setdefault(int(row[0]), {})[row[1]] = SplitSet(row[2])
    return [folds[i] for i in sorted(folds)]


def cmd_split(args) -> int:
    opt = Options(args)
    manifest = dataio.read_manifest(_require(Path(args.manifest), "manifest"))
    subjects = sorted({e.subject_id for e in manifest})
    seed = opt.get("seed", int, 0)
    out_path = Path(args.out)
    policy_name = opt.get("policy", str, "ratios")
    if policy_name == "ratios":
        ratios = tuple(float(x) for x in opt.get("ratios", str, "0.6,0.2,0.2").split(","))
        if len(ratios) != 3:
            raise InvalidSpec("ratios must be three comma-separated numbers")
        assignment = dataio.subject_split(subjects, ratios, seed)
        rows = [(s, assignment[s].value) for s in sorted(assignment)]
        _write_csv(out_path, ("subject_id", "assignment"), rows)
    else:
        if policy_name == "loo":
            policy = FoldPolicy.leave_one_out(opt.get("val_fraction", float, 0.2))
        elif policy_name == "loo-train-pair":
            policy = FoldPolicy.leave_one_out_train_pair()
        elif policy_name == "kfold":
            policy = FoldPolicy.kfold(opt.get("k", int, 5))
        else:
            raise InvalidSpec(f"unknown policy {policy_name!r}")
        plan = dataio.make_folds(subjects, policy, seed)
        rows = []
        for i, fold in enumerate(plan.folds):
            for s in sorted(fold):
                rows.append((i, s, fold[s].value))
        _write_csv(out_path, ("fold", "subject_id", "assignment"), rows)
    print(f"wrote {out_path}")
    return 0


# --- train ------------------------------------------------------------------

def _collect_windows(
    manifest: list[ManifestEntry],
    assignment: dict[str, SplitSet],
    wanted: SplitSet,
    model_cfg: HarModelConfig,
    stride_seconds: float,
) -> list[Window]:
    windows: list[Window] = []
    for entry in manifest:
        if assignment.get(entry.subject_id) is not wanted:
            continue
        rec = dataio.load_recording(entry)
        if rec.labels is None:
            print(f"note: skipping unlabeled recording {entry.recording_id} "
                  f"(unlabeled data never trains)", file=sys.stderr)
            continue
        rec = resample_recording(rec, model_cfg.target_hz)
        windows.extend(labeled_windows(window_stream(
            rec, model_cfg.window_seconds, stride_seconds)))
    return windows


def _model_config_from(opt: Options, seed: int) -> HarModelConfig:
    return HarModelConfig(
        window_seconds=opt.get("window_seconds", float, 6.0),
        target_hz=opt.get("target_hz", float, 20.0),
        kernel=opt.get("kernel", int, 3),
        block_widths=opt.get("widths", _int_tuple, (32, 64, 128)),
        block_dilations=opt.get("dilations", _int_tuple, (1, 2, 4)),
        seed=seed,
    )


def _train_config_from(opt: Options, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=opt.get("epochs", int, 350),
        batch_size=opt.get("batch_size", int, 64),
        max_lr=opt.get("max_lr", float, 1e-3),
        warmup_fraction=opt.get("warmup_fraction", float, 0.3),
        div_factor=opt.get("div_factor", float, 25.0),
        final_div_factor=opt.get("final_div_factor", float, 1e4),
        momentum=opt.get("momentum", float, 0.0),
        weight_decay=opt.get("weight_decay", float, 0.0),
        augment=opt.get("augment", bool, True),
        seed=seed,
    )


def _train_one(manifest_path: Path, assignment: dict[str, SplitSet],
               model_cfg: HarModelConfig, train_cfg: TrainConfig,
               stride_seconds: float, outdir: Path) -> None:
    manifest = dataio.read_manifest(manifest_path)
    train_w = _collect_windows(manifest, assignment, SplitSet.TRAIN,
                               model_cfg, stride_seconds)
    val_w = _collect_windows(manifest, assignment, SplitSet.VALIDATION,
                             model_cfg, stride_seconds)
    params, report = train(model_cfg, train_cfg, train_w, val_w)
    outdir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, model_cfg, outdir / "model.ckpt")
    write_train_report(report, outdir / "train_report.csv")


def _fold_worker(job) -> str:
    manifest_path, fold, model_cfg, train_cfg, stride_seconds, outdir = job
    _train_one(Path(manifest_path), fold, model_cfg, train_cfg,
               stride_seconds, Path(outdir))
    return str(outdir)


def cmd_train(args) -> int:
    opt = Options(args)
    manifest_path = _require(Path(args.manifest), "manifest")
    outdir = Path(args.outdir)
    seed = opt.get("seed", int, 0)
    stride_seconds = opt.get("stride_seconds", float, 2.0)
    model_cfg = _model_config_from(opt, seed)
    train_cfg = _train_config_from(opt, seed)

    if args.folds:
        folds = _read_folds(_require(Path(args.folds), "folds file"))
        jobs = []
        for i, fold in enumerate(folds):
            fold_model = HarModelConfig(
                in_channels=model_cfg.in_channels,
                num_classes=model_cfg.num_classes,
                window_seconds=model_cfg.window_seconds,
                target_hz=model_cfg.target_hz,
                kernel=model_cfg.kernel,
                block_widths=model_cfg.block_widths,
                block_dilations=model_cfg.block_dilations,
                seed=seed + i,
            )
            fold_train = TrainConfig(
                epochs=train_cfg.epochs, batch_size=train_cfg.batch_size,
                max_lr=train_cfg.max_lr,
                warmup_fraction=train_cfg.warmup_fraction,
                div_factor=train_cfg.div_factor,
                final_div_factor=train_cfg.final_div_factor,
                momentum=train_cfg.momentum,
                weight_decay=train_cfg.weight_decay,
                augment=train_cfg.augment, seed=seed + i,
            )
            jobs.append((str(manifest_path), fold, fold_model, fold_train,
                         stride_seconds, str(outdir / f"fold_{i:02d}")))
        n_jobs = opt.get("jobs", int, 1)
        if n_jobs > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                for done in pool.map(_fold_worker, jobs):
                    print(f"finished {done}")
        else:
            for job in jobs:
                print(f"finished {_fold_worker(job)}")
        return 0

    if args.split:
        assignment = _read_split(_require(Path(args.split), "split file"))
    else:
        subjects = sorted({e.subject_id for e in dataio.read_manifest(manifest_path)})
        ratios = tuple(float(x) for x in opt.get("ratios", str, "0.6,0.2,0.2").split(","))
        assignment = dataio.subject_split(subjects, ratios, seed)
    _train_one(manifest_path, assignment, model_cfg, train_cfg,
               stride_seconds, outdir)
    print(f"wrote {outdir / 'model.ckpt'}")
    return 0


# --- predict ------------------------------------------------------------------

def _segments_for_recording(
    params, rec: Recording, window_seconds: float, stride_seconds: float,
    filter_variant: str,
) -> tuple[list[Window], list[SegmentPrediction], list[SegmentPrediction]]:
    """Windows, raw segments, and filtered segments for one recording."""
    rec = resample_recording(rec, params.config.target_hz)
    windows = window_stream(rec, window_seconds, stride_seconds)
    if not windows:
        return [], [], []
    probs = predict_probs(params, np.stack([w.data for w in windows]))
    raw = [
        SegmentPrediction(
            span=w.central_span,
            probs=probs[i],
            label=ActivityLabel(int(np.argmax(probs[i]))),
        )
        for i, w in enumerate(windows)
    ]
    filtered = postprocess.majority_filter(
        raw, window_seconds, stride_seconds, variant=filter_variant)
    return windows, raw, filtered


def cmd_predict(args) -> int:
    opt = Options(args)
    ckpt_path = _require(Path(args.checkpoint), "checkpoint")
    manifest = dataio.read_manifest(_require(Path(args.manifest), "manifest"))
    params, config = load_checkpoint(ckpt_path)
    if config.num_classes != len(ActivityLabel):
        raise InvalidConfig(
            f"checkpoint predicts {config.num_classes} classes; the segment "
            f"schema needs {len(ActivityLabel)}")
    stride_seconds = opt.get("stride_seconds", float, 2.0)
    variant = opt.get("filter", str, "majority")
    rows = []
    for entry in manifest:
        rec = dataio.load_recording(entry)
        _, raw, filtered = _segments_for_recording(
            params, rec, config.window_seconds, stride_seconds, variant)
        for seg, smoothed in zip(raw, filtered):
            rows.append((entry.recording_id, seg.span[0], seg.span[1],
                         *[float(p) for p in seg.probs],
                         seg.label.tag, smoothed.label.tag))
    _write_csv(Path(args.out), SEGMENT_HEADER, rows)
    print(f"wrote {args.out} ({len(rows)} segments)")
    return 0


def read_segments(path: Path) -> dict[str, list[dict]]:
    """Segments CSV grouped by recording, preserving order."""
    out: dict[str, list[dict]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SEGMENT_HEADER:
            raise MissingColumn(f"{path}: unexpected segment header {header}")
        for row in reader:
            if not row:
                continue
            rec = {
                "recording_id": row[0],
                "t_start": float(row[1]),
                "t_end": float(row[2]),
                "probs": np.array([float(x) for x in row[3:9]]),
                "label": parse_label(row[9]),
                "label_filtered": parse_label(row[10]),
            }
            out.setdefault(row[0], []).append(rec)
    return out


# --- evaluate ------------------------------------------------------------------

def _truth_segments(entry: ManifestEntry, window_seconds: float,
                    stride_seconds: float, target_hz: float) -> dict[float, ActivityLabel]:
    rec = dataio.load_recording(entry)
    if rec.labels is None:
        return {}
    rec = resample_recording(rec, target_hz)
    truth = {}
    for w in window_stream(rec, window_seconds, stride_seconds):
        if w.label is not None:
            truth[round(w.central_span[0], 6)] = w.label
    return truth


def _scored_segments_from_csv(
    manifest: list[ManifestEntry], segments: dict[str, list[dict]],
    window_seconds: float, stride_seconds: float, target_hz: float,
    use_filtered: bool,
) -> list[metrics.ScoredSegment]:
    scored: list[metrics.ScoredSegment] = []
    by_id = {e.recording_id: e for e in manifest}
    for rec_id, segs in segments.items():
        entry = by_id.get(rec_id)
        if entry is None:
            raise PipelineError(f"recording {rec_id!r} not in manifest")
        truth = _truth_segments(entry, window_seconds, stride_seconds, target_hz)
        if not truth:
            continue
        for seg in segs:
            label = truth.get(round(seg["t_start"], 6))
            if label is None:
                continue
            scored.append(metrics.ScoredSegment(
                truth=label,
                pred=seg["label_filtered"] if use_filtered else seg["label"],
                subject_id=entry.subject_id,
                device_location=entry.device_location,
                group_tag=entry.group_tag,
                recording_id=rec_id,
            ))
    return scored


def _scored_segments_inprocess(
    params, manifest: list[ManifestEntry], window_seconds: float,
    stride_seconds: float, filter_variant: str, use_filtered: bool,
) -> list[metrics.ScoredSegment]:
    scored: list[metrics.ScoredSegment] = []
    for entry in manifest:
        rec = dataio.load_recording(entry)
        if rec.labels is None:
            continue
        windows, raw, filtered = _segments_for_recording(
            params, rec, window_seconds, stride_seconds, filter_variant)
        chosen = filtered if use_filtered else raw
        for w, seg in zip(windows, chosen):
            if w.label is None:
                continue
            scored.append(metrics.ScoredSegment(
                truth=w.label,
                pred=seg.label,
                subject_id=entry.subject_id,
                device_location=entry.device_location,
                group_tag=entry.group_tag,
                recording_id=entry.recording_id,
            ))
    return scored


def _metric_rows(report: metrics.MetricsReport, scored) -> list[tuple]:
    mean, sd, n_subjects = metrics.subject_mean_accuracy(scored)
    rows = [
        ("accuracy_pooled", report.accuracy),
        ("accuracy_subject_mean", mean),
        ("accuracy_subject_sd", sd if sd is not None else ""),
        ("macro_precision", report.macro_precision),
        ("macro_recall", report.macro_recall),
        ("macro_f1", report.macro_f1),
        ("micro_precision", report.micro_precision),
        ("micro_recall", report.micro_recall),
        ("micro_f1", report.micro_f1),
        ("n_segments", len(scored)),
        ("n_subjects", n_subjects),
    ]
    for cls, m in report.per_class.items():
        tag = getattr(cls, "tag", str(cls))
        rows.append((f"precision_{tag}", m.precision))
        rows.append((f"recall_{tag}", m.recall))
        rows.append((f"f1_{tag}", m.f1))
        rows.append((f"support_{tag}", m.support))
    return rows


def cmd_evaluate(args) -> int:
    opt = Options(args)
    manifest = dataio.read_manifest(_require(Path(args.manifest), "manifest"))
    outdir = Path(args.outdir)
    window_seconds = opt.get("window_seconds", float, 6.0)
    stride_seconds = opt.get("stride_seconds", float, 2.0)
    use_filtered = bool(args.use_filtered)

    if args.pred:
        segments = read_segments(_require(Path(args.pred), "predictions file"))
        target_hz = opt.get("target_hz", float, 20.0)
        scored = _scored_segments_from_csv(
            manifest, segments, window_seconds, stride_seconds, target_hz,
            use_filtered)
    elif args.checkpoint:
        params, config = load_checkpoint(_require(Path(args.checkpoint), "checkpoint"))
        if config.num_classes != len(ActivityLabel):
            raise InvalidConfig(
                f"checkpoint predicts {config.num_classes} classes; "
                f"evaluation needs {len(ActivityLabel)}")
        variant = opt.get("filter", str, "majority")
        scored = _scored_segments_inprocess(
            params, manifest, config.window_seconds, stride_seconds, variant,
            use_filtered)
    else:
        raise InvalidSpec("evaluate needs --pred or --checkpoint")

    if not scored:
        raise PipelineError("no labeled segments to evaluate")
    classes = list(ActivityLabel)
    cm = metrics.confusion_matrix([s.truth for s in scored],
                                  [s.pred for s in scored], classes)
    report = metrics.compute_metrics(cm)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "metrics.csv", ("metric", "value"),
               _metric_rows(report, scored))
    (outdir / "confusion.txt").write_text(
        metrics.render_matrix(cm) + "\n", encoding="utf-8")

    if args.gait_view:
        gait_classes = [GaitGroup.GAIT, GaitGroup.NON_GAIT]
        merged = metrics.merge_matrix(cm, postprocess.map_gait, gait_classes)
        gait_report = metrics.compute_metrics(merged, positive=GaitGroup.GAIT)
        rows = [
            ("accuracy", gait_report.accuracy),
            ("precision_gait", gait_report.binary_precision),
            ("recall_gait", gait_report.binary_recall),
            ("f1_gait", gait_report.binary_f1),
            ("fpr_gait", gait_report.fpr),
        ]
        _write_csv(outdir / "gait_metrics.csv", ("metric", "value"), rows)
        (outdir / "confusion_gait.txt").write_text(
            metrics.render_matrix(merged) + "\n", encoding="utf-8")

    for key in (args.breakdown.split(",") if args.breakdown else []):
        rows = metrics.breakdown(scored, key.strip())
        _write_csv(
            outdir / f"breakdown_{key.strip()}.csv",
            ("key", "n_segments", "n_subjects", "pooled_accuracy",
             "subject_mean_accuracy", "subject_accuracy_sd"),
            [(r.key, r.n_segments, r.n_subjects, r.pooled_accuracy,
              r.subject_mean_accuracy,
              r.subject_accuracy_sd if r.subject_accuracy_sd is not None else "")
             for r in rows],
        )
    print(f"wrote evaluation under {outdir}")
    return 0


# --- bouts ------------------------------------------------------------------

def cmd_bouts(args) -> int:
    opt = Options(args)
    manifest = dataio.read_manifest(_require(Path(args.manifest), "manifest"))
    segments = read_segments(_require(Path(args.pred), "predictions file"))
    outdir = Path(args.outdir)
    window_seconds = opt.get("window_seconds", float, 6.0)
    stride_seconds = opt.get("stride_seconds", float, 2.0)
    variant = opt.get("filter", str, "majority")
    min_duration = opt.get("min_bout_seconds", float, 0.0)

    by_id = {e.recording_id: e for e in manifest}
    bout_rows = []
    per_subject_bouts: dict[str, list[postprocess.Bout]] = {}
    for rec_id, segs in segments.items():
        entry = by_id.get(rec_id)
        if entry is None:
            raise PipelineError(f"recording {rec_id!r} not in manifest")
        preds = [SegmentPrediction(span=(s["t_start"], s["t_end"]),
                                   probs=s["probs"], label=s["label"])
                 for s in segs]
        filtered = postprocess.majority_filter(
            preds, window_seconds, stride_seconds, variant=variant)
        bouts = [b for b in postprocess.extract_bouts(filtered)
                 if b.duration >= min_duration]
        per_subject_bouts.setdefault(entry.subject_id, []).extend(bouts)
        for b in bouts:
            bout_rows.append((rec_id, b.group.value, b.t_start, b.t_end,
                              b.duration))
    _write_csv(outdir / "bouts.csv", BOUT_HEADER, bout_rows)

    meta = dataio.subject_metadata(manifest)
    mean_rows = []
    for subject in sorted(per_subject_bouts):
        bouts = per_subject_bouts[subject]
        mean = postprocess.mean_bout_duration(bouts, GaitGroup.GAIT)
        n_gait = sum(1 for b in bouts if b.group is GaitGroup.GAIT)
        mean_rows.append((subject, meta[subject].group_tag, n_gait,
                          mean if mean is not None else ""))
    _write_csv(outdir / "subject_means.csv", MEANS_HEADER, mean_rows)
    print(f"wrote {outdir / 'bouts.csv'} and {outdir / 'subject_means.csv'}")
    return 0


# --- stats ------------------------------------------------------------------

def cmd_stats(args) -> int:
    opt = Options(args)
    means_path = _require(Path(args.means), "subject means file")
    per_subject: dict[str, float | None] = {}
    groups: dict[str, str] = {}
    with open(means_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != MEANS_HEADER:
            raise MissingColumn(f"{means_path}: unexpected header {header}")
        for row in reader:
            if not row:
                continue
            groups[row[0]] = row[1]
            per_subject[row[0]] = float(row[3]) if row[3] != "" else None

    pairs = []
    for chunk in args.pairs.split(","):
        if ":" not in chunk:
            raise InvalidSpec(f"pair {chunk!r} must look like tagA:tagB")
        tag_a, _, tag_b = chunk.partition(":")
        pairs.append((tag_a.strip(), tag_b.strip()))
    method = opt.get("method", str, "auto")
    if method != "auto":
        # run each pair through the requested method directly
        results = []
        for tag_a, tag_b in pairs:
            a = [per_subject[s] for s, g in groups.items()
                 if g == tag_a and per_subject[s] is not None]
            b = [per_subject[s] for s, g in groups.items()
                 if g == tag_b and per_subject[s] is not None]
            if tag_a not in groups.values() or tag_b not in groups.values():
                raise PipelineError(f"unknown tag in pair {tag_a}:{tag_b}")
            res = stats.mann_whitney_u(
                a, b,
                UMethod.EXACT if method == "exact" else UMethod.NORMAL_APPROX)
            results.append(stats.GroupComparison(
                tag_a, tag_b, res, res.p_two_sided < stats.SIGNIFICANCE_LEVEL))
    else:
        results = stats.compare_bout_groups(per_subject, groups, pairs)

    rows = [(f"{r.tag_a}:{r.tag_b}", r.result.n1, r.result.n2,
             r.result.u_statistic, r.result.p_two_sided,
             r.result.method.value, r.significant) for r in results]
    _write_csv(Path(args.out), STATS_HEADER, rows)
    print(f"wrote {args.out}")
    return 0


# --- argument surface ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="har",
        description="Activity recognition pipeline: train a 1-D residual "
                    "classifier on accelerometer windows, smooth its "
                    "predictions, extract gait bouts, and compare groups.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("synth", help="generate labeled synthetic recordings")
    common(p)
    p.add_argument("--outdir", required=True)
    p.add_argument("--per-class", dest="per_class", type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--group-tag", dest="group_tag", default=None)

    p = sub.add_parser("split", help="subject-level split or fold plan")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=["ratios", "loo", "loo-train-pair", "kfold"],
                   default=None)
    p.add_argument("--ratios", default=None, help="train,val,eval e.g. 0.6,0.2,0.2")
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=None)
    p.add_argument("--k", type=int, default=None)

    p = sub.add_parser("train", help="fit the classifier, write checkpoint + report")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--split", help="subject_id,assignment CSV from `har split`")
    p.add_argument("--folds", help="fold,subject_id,assignment CSV; trains per fold")
    p.add_argument("--jobs", type=int, default=None, help="parallel fold workers")
    p.add_argument("--ratios", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--max-lr", dest="max_lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--augment", dest="augment", action="store_true", default=None)
    p.add_argument("--no-augment", dest="augment", action="store_false")
    p.add_argument("--window-seconds", dest="window_seconds", type=float, default=None)
    p.add_argument("--stride-seconds", dest="stride_seconds", type=float, default=None)
    p.add_argument("--target-hz", dest="target_hz", type=float, default=None)
    p.add_argument("--kernel", type=int, default=None)
    p.add_argument("--widths", type=_int_tuple, default=None)
    p.add_argument("--dilations", type=_int_tuple, default=None)

    p = sub.add_parser("predict", help="checkpoint -> per-segment predictions CSV")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride-seconds", dest="stride_seconds", type=float, default=None)
    p.add_argument("--filter", choices=["majority", "max-confidence"], default=None)

    p = sub.add_parser("evaluate", help="metrics and confusion matrices")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--pred", help="segments CSV from `har predict`")
    p.add_argument("--checkpoint", help="evaluate a checkpoint in process")
    p.add_argument("--use-filtered", dest="use_filtered", action="store_true")
    p.add_argument("--gait-view", dest="gait_view", action="store_true")
    p.add_argument("--breakdown", default=None,
                   help="comma list of device_location,activity,group_tag,subject")
    p.add_argument("--filter", choices=["majority", "max-confidence"], default=None)
    p.add_argument("--window-seconds", dest="window_seconds", type=float, default=None)
    p.add_argument("--stride-seconds", dest="stride_seconds", type=float, default=None)
    p.add_argument("--target-hz", dest="target_hz", type=float, default=None)

    p = sub.add_parser("bouts", help="filter labels, extract bouts, subject means")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--filter", choices=["majority", "max-confidence"], default=None)
    p.add_argument("--window-seconds", dest="window_seconds", type=float, default=None)
    p.add_argument("--stride-seconds", dest="stride_seconds", type=float, default=None)
    p.add_argument("--min-bout-seconds", dest="min_bout_seconds", type=float,
                   default=None)

    p = sub.add_parser("stats", help="compare per-subject bout durations")
    common(p)
    p.add_argument("--means", required=True)
    p.add_argument("--pairs", required=True, help="tagA:tagB[,tagC:tagD...]")
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["auto", "exact", "normal"], default=None)

    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "bouts": cmd_bouts,
    "stats": cmd_stats,
}


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
