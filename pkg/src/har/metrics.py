"""Confusion matrices, classification metrics, and metadata breakdowns.

Rows of a confusion matrix are truth, columns are prediction. Micro
metrics pool true/false positives over classes, so for single-label
multiclass scoring micro precision = micro recall = micro F1 = accuracy.
Classes with a zero denominator score 0 and are flagged in the report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import EmptyMatrix, LengthMismatch, MissingMetadata, UnknownLabel


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[Hashable, ...]
    counts: np.ndarray  # (C, C) int64, rows = truth

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.classes), len(self.classes)):
            raise LengthMismatch("counts must be square in the class count")
        if np.any(counts < 0):
            raise LengthMismatch("counts must be non-negative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(
    truth: Sequence[Hashable],
    pred: Sequence[Hashable],
    classes: Sequence[Hashable],
) -> ConfusionMatrix:
    if len(truth) != len(pred):
        raise LengthMismatch(f"{len(truth)} truth vs {len(pred)} predictions")
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t not in index or p not in index:
            raise UnknownLabel(f"label {t!r} or {p!r} outside the class list")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(tuple(classes), counts)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    per_class: dict[Hashable, ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    positive: Hashable | None = None
    binary_precision: float | None = None
    binary_recall: float | None = None
    binary_f1: float | None = None
    fpr: float | None = None
    zero_division_classes: tuple[Hashable, ...] = ()


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def compute_metrics(cm: ConfusionMatrix, positive: Hashable | None = None) -> MetricsReport:
    """Accuracy plus per-class, macro, micro, and optional binary metrics."""
    if cm.total == 0:
        raise EmptyMatrix("cannot compute metrics on an empty confusion matrix")
    counts = cm.counts
    trace = int(np.trace(counts))
    accuracy = trace / cm.total

    per_class: dict[Hashable, ClassMetrics] = {}
    flagged: list[Hashable] = []
    for i, cls in enumerate(cm.classes):
        tp = int(counts[i, i])
        col = int(counts[:, i].sum())
        row = int(counts[i, :].sum())
        precision, p_zero = _safe_div(tp, col)
        recall, r_zero = _safe_div(tp, row)
        f1, f_zero = _safe_div(2.0 * precision * recall, precision + recall)
        if p_zero or r_zero or f_zero:
            flagged.append(cls)
        per_class[cls] = ClassMetrics(precision, recall, f1, support=row)

    k = len(cm.classes)
    macro_p = sum(m.precision for m in per_class.values()) / k
    macro_r = sum(m.recall for m in per_class.values()) / k
    macro_f = sum(m.f1 for m in per_class.values()) / k

    # pooled counts: every off-diagonal entry is one FP and one FN
    micro_tp = trace
    micro_fp = cm.total - trace
    micro_fn = cm.total - trace
    micro_p = micro_tp / (micro_tp + micro_fp)
    micro_r = micro_tp / (micro_tp + micro_fn)
    micro_f, _ = _safe_div(2.0 * micro_p * micro_r, micro_p + micro_r)

    report = MetricsReport(
        accuracy=accuracy,
        per_class=per_class,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f,
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_f1=micro_f,
        zero_division_classes=tuple(flagged),
    )
    if positive is None:
        return report
    if positive not in cm.classes:
        raise UnknownLabel(f"positive class {positive!r} not in matrix")
    i = cm.classes.index(positive)
    tp = int(counts[i, i])
    fn = int(counts[i, :].sum()) - tp
    fp = int(counts[:, i].sum()) - tp
    tn = cm.total - tp - fn - fp
    b_prec, _ = _safe_div(tp, tp + fp)
    b_rec, _ = _safe_div(tp, tp + fn)
    b_f1, _ = _safe_div(2.0 * b_prec * b_rec, b_prec + b_rec)
    fpr, _ = _safe_div(fp, fp + tn)
    return MetricsReport(
        accuracy=report.accuracy,
        per_class=report.per_class,
        macro_precision=report.macro_precision,
        macro_recall=report.macro_recall,
        macro_f1=report.macro_f1,
        micro_precision=report.micro_precision,
        micro_recall=report.micro_recall,
        micro_f1=report.micro_f1,
        positive=positive,
        binary_precision=b_prec,
        binary_recall=b_rec,
        binary_f1=b_f1,
        fpr=fpr,
        zero_division_classes=report.zero_division_classes,
    )


def merge_matrix(cm: ConfusionMatrix, mapping, classes: Sequence[Hashable]) -> ConfusionMatrix:
    """Collapse classes through `mapping` (e.g. six activities to gait)."""
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for i, truth_cls in enumerate(cm.classes):
        for j, pred_cls in enumerate(cm.classes):
            counts[index[mapping(truth_cls)], index[mapping(pred_cls)]] += cm.counts[i, j]
    return ConfusionMatrix(tuple(classes), counts)


# --- metadata breakdowns ----------------------------------------------------

@dataclass(frozen=True)
class ScoredSegment:
    truth: Hashable
    pred: Hashable
    subject_id: str
    device_location: str
    group_tag: str
    recording_id: str


@dataclass(frozen=True)
class BreakdownRow:
    key: str
    n_segments: int
    n_subjects: int
    pooled_accuracy: float
    subject_mean_accuracy: float
    subject_accuracy_sd: float | None
    metrics: MetricsReport | None = None


_GROUP_KEYS = ("device_location", "activity", "group_tag", "subject")


def _segment_key(seg: ScoredSegment, group_by: str) -> str:
    if group_by == "device_location":
        value = seg.device_location
    elif group_by == "activity":
        value = getattr(seg.truth, "tag", str(seg.truth))
    elif group_by == "group_tag":
        value = seg.group_tag
    elif group_by == "subject":
        value = seg.subject_id
    else:
        raise MissingMetadata(f"group_by must be one of {_GROUP_KEYS}")
    if value == "":
        raise MissingMetadata(f"segment lacks {group_by} metadata")
    return str(value)


def subject_mean_accuracy(
    segments: Iterable[ScoredSegment],
) -> tuple[float, float | None, int]:
    """Mean and sample SD of per-subject accuracies (SD None for n < 2)."""
    per_subject: dict[str, list[int]] = {}
    for seg in segments:
        per_subject.setdefault(seg.subject_id, []).append(int(seg.truth == seg.pred))
    accs = [sum(v) / len(v) for v in per_subject.values()]
    mean = sum(accs) / len(accs)
    if len(accs) < 2:
        return mean, None, len(accs)
    var = sum((a - mean) ** 2 for a in accs) / (len(accs) - 1)
    return mean, math.sqrt(var), len(accs)


def breakdown(
    segments: Sequence[ScoredSegment],
    group_by: str,
    classes: Sequence[Hashable] | None = None,
    with_metrics: bool = False,
) -> list[BreakdownRow]:
    """Per-group accuracy rows, sorted by key.

    Pooled accuracy counts every segment alike; the subject columns report
    the mean (and sample SD) of per-subject accuracies inside the group,
    which differs from pooled when subjects contribute unequal counts.
    """
    if not segments:
        raise EmptyMatrix("no scored segments to break down")
    grouped: dict[str, list[ScoredSegment]] = {}
    for seg in segments:
        grouped.setdefault(_segment_key(seg, group_by), []).append(seg)
    rows = []
    for key in sorted(grouped):
        segs = grouped[key]
        pooled = sum(1 for s in segs if s.truth == s.pred) / len(segs)
        mean, sd, n_subjects = subject_mean_accuracy(segs)
        metrics = None
        if with_metrics:
            if classes is None:
                raise MissingMetadata("classes required when with_metrics=True")
            cm = confusion_matrix([s.truth for s in segs],
                                  [s.pred for s in segs], classes)
            metrics = compute_metrics(cm)
        rows.append(BreakdownRow(
            key=key,
            n_segments=len(segs),
            n_subjects=n_subjects,
            pooled_accuracy=pooled,
            subject_mean_accuracy=mean,
            subject_accuracy_sd=sd,
            metrics=metrics,
        ))
    return rows


def render_matrix(cm: ConfusionMatrix) -> str:
    """Plain-text confusion matrix with truth on rows."""
    names = [getattr(c, "tag", None) or getattr(c, "value", None) or str(c)
             for c in cm.classes]
    width = max(12, max(len(n) for n in names) + 2)
    header = " " * width + "".join(f"{n:>{width}}" for n in names)
    lines = ["truth \\ pred".ljust(width) + header[width:]]
    for i, n in enumerate(names):
        cells = "".join(f"{int(v):>{width}}" for v in cm.counts[i])
        lines.append(f"{n:<{width}}" + cells)
    return "\n".join(lines)
