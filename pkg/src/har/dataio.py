"""Recording ingestion, manifests, subject splits, and synthetic data.

The on-disk time-series format is a CSV with header ``t,ax,ay,az`` or
``t,ax,ay,az,label`` (seconds and m/s^2, UTF-8, decimal point). Dataset
metadata lives in a separate manifest CSV so the signal files stay plain.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    InvalidSpec,
    MalformedRow,
    MissingColumn,
    NonMonotoneTime,
    RateMismatch,
    TooFewSubjects,
    UnknownLabel,
)

GRAVITY = 9.81  # m/s^2


class ActivityLabel(enum.IntEnum):
    """The six activity classes, in fixed confusion-matrix order."""

    WALKING = 0
    RUNNING = 1
    STAIRS = 2
    STANDING = 3
    SITTING_LYING = 4
    SIT_TO_STAND = 5

    @property
    def tag(self) -> str:
        return _LABEL_TAGS[self]


_LABEL_TAGS = {
    ActivityLabel.WALKING: "walking",
    ActivityLabel.RUNNING: "running",
    ActivityLabel.STAIRS: "stairs",
    ActivityLabel.STANDING: "standing",
    ActivityLabel.SITTING_LYING: "sitting_lying",
    ActivityLabel.SIT_TO_STAND: "sit_to_stand",
}

# Accepted spellings on input; serialization always uses the canonical tag.
_TAG_ALIASES = {
    "sitlying": ActivityLabel.SITTING_LYING,
    "sitting/lying": ActivityLabel.SITTING_LYING,
    "sit2stand": ActivityLabel.SIT_TO_STAND,
}


def parse_label(text: str) -> ActivityLabel:
    key = text.strip().lower()
    for label, tag in _LABEL_TAGS.items():
        if key == tag:
            return label
    if key in _TAG_ALIASES:
        return _TAG_ALIASES[key]
    raise UnknownLabel(f"unknown activity label {text!r}")


@dataclass(frozen=True)
class Recording:
    """One subject x device acceleration time series.

    ``t`` is shape (n,) seconds, strictly increasing; ``acc`` is shape
    (3, n) in m/s^2 (rows ax, ay, az); ``labels`` is an optional (n,)
    array of ActivityLabel codes.
    """

    recording_id: str
    subject_id: str
    device_location: str
    sample_rate_hz: float
    t: np.ndarray
    acc: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        acc = np.asarray(self.acc, dtype=np.float64)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "acc", acc)
        if acc.shape != (3, t.shape[0]):
            raise MalformedRow(
                f"acc must be (3, {t.shape[0]}), got {acc.shape}"
            )
        if t.size >= 2:
            dt = np.diff(t)
            if np.any(dt <= 0):
                raise NonMonotoneTime("timestamps must be strictly increasing")
            measured = 1.0 / float(np.median(dt))
            if abs(measured - self.sample_rate_hz) > 0.1 * measured:
                raise RateMismatch(
                    f"declared rate {self.sample_rate_hz:g} Hz is >10% off "
                    f"the measured median rate {measured:g} Hz"
                )
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != t.shape:
                raise MalformedRow("one label per sample required")
            object.__setattr__(self, "labels", labels)
            labels.flags.writeable = False
        if self.sample_rate_hz <= 0:
            raise RateMismatch("sample_rate_hz must be positive")
        t.flags.writeable = False
        acc.flags.writeable = False

    @property
    def n_samples(self) -> int:
        return int(self.t.shape[0])

    @property
    def duration_s(self) -> float:
        if self.n_samples < 2:
            return 0.0
        return float(self.t[-1] - self.t[0])


_HEADER = ["t", "ax", "ay", "az"]


def parse_recording(
    path: str | Path,
    expected_hz: float | None = None,
    recording_id: str | None = None,
    subject_id: str = "",
    device_location: str = "",
) -> Recording:
    """Read a recording CSV, validating schema, ordering, and rate."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [cell.strip() for cell in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        if header == _HEADER:
            labeled = False
        elif header == _HEADER + ["label"]:
            labeled = True
        else:
            raise MissingColumn(
                f"{path}: header must be 't,ax,ay,az[,label]', got {header}"
            )
        ts, xs, ys, zs, labels = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(f"{path}:{lineno}: expected {len(header)} cells")
            try:
                ts.append(float(row[0]))
                xs.append(float(row[1]))
                ys.append(float(row[2]))
                zs.append(float(row[3]))
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from None
            if labeled:
                labels.append(int(parse_label(row[4])))

    t = np.asarray(ts)
    if t.size >= 2 and np.any(np.diff(t) <= 0):
        raise NonMonotoneTime(f"{path}: timestamps not strictly increasing")
    measured = 1.0 / float(np.median(np.diff(t))) if t.size >= 2 else (expected_hz or 1.0)
    if expected_hz is not None and abs(measured - expected_hz) > 0.1 * expected_hz:
        raise RateMismatch(
            f"{path}: measured rate {measured:g} Hz deviates >10% from "
            f"expected {expected_hz:g} Hz"
        )
    return Recording(
        recording_id=recording_id if recording_id is not None else path.stem,
        subject_id=subject_id or path.stem,
        device_location=device_location or "unknown",
        sample_rate_hz=expected_hz if expected_hz is not None else measured,
        t=t,
        acc=np.vstack([xs, ys, zs]),
        labels=np.asarray(labels, dtype=np.int64) if labeled else None,
    )


def serialize_recording(rec: Recording, path: str | Path) -> None:
    """Write a recording CSV; floats use shortest round-trip formatting."""
    path = Path(path)
    labeled = rec.labels is not None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER + (["label"] if labeled else []))
        for i in range(rec.n_samples):
            row = [
                repr(float(rec.t[i])),
                repr(float(rec.acc[0, i])),
                repr(float(rec.acc[1, i])),
                repr(float(rec.acc[2, i])),
            ]
            if labeled:
                row.append(ActivityLabel(int(rec.labels[i])).tag)
            writer.writerow(row)


# --- manifests ------------------------------------------------------------

_MANIFEST_HEADER = [
    "recording_id",
    "subject_id",
    "device_location",
    "path",
    "group_tag",
    "walking_aid",
]


@dataclass(frozen=True)
class ManifestEntry:
    recording_id: str
    subject_id: str
    device_location: str
    path: Path
    group_tag: str
    walking_aid: bool | None


@dataclass(frozen=True)
class SubjectMetadata:
    subject_id: str
    group_tag: str
    walking_aid: bool | None


def _parse_bool(text: str) -> bool | None:
    key = text.strip().lower()
    if key == "":
        return None
    if key in ("1", "true", "yes"):
        return True
    if key in ("0", "false", "no"):
        return False
    raise MalformedRow(f"walking_aid must be boolean-like or empty, got {text!r}")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a dataset manifest; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [cell.strip() for cell in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty manifest") from None
        if header != _MANIFEST_HEADER:
            raise MissingColumn(
                f"{path}: manifest header must be {','.join(_MANIFEST_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_MANIFEST_HEADER):
                raise MalformedRow(f"{path}:{lineno}: expected 6 cells")
            rec_path = Path(row[3])
            if not rec_path.is_absolute():
                rec_path = base / rec_path
            entries.append(
                ManifestEntry(
                    recording_id=row[0],
                    subject_id=row[1],
                    device_location=row[2],
                    path=rec_path,
                    group_tag=row[4],
                    walking_aid=_parse_bool(row[5]),
                )
            )
    return entries


def write_manifest(entries: Iterable[ManifestEntry], path: str | Path) -> None:
    path = Path(path)
    base = path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_HEADER)
        for e in entries:
            rec_path = e.path
            try:
                rec_path = rec_path.relative_to(base)
            except ValueError:
                pass
            aid = "" if e.walking_aid is None else ("true" if e.walking_aid else "false")
            writer.writerow(
                [e.recording_id, e.subject_id, e.device_location,
                 rec_path.as_posix(), e.group_tag, aid]
            )


def subject_metadata(entries: Iterable[ManifestEntry]) -> dict[str, SubjectMetadata]:
    """Collapse manifest rows to one metadata record per subject."""
    out: dict[str, SubjectMetadata] = {}
    for e in entries:
        meta = SubjectMetadata(e.subject_id, e.group_tag, e.walking_aid)
        prior = out.get(e.subject_id)
        if prior is not None and prior != meta:
            raise InvalidSpec(
                f"conflicting metadata for subject {e.subject_id!r}: "
                f"{prior} vs {meta}"
            )
        out[e.subject_id] = meta
    return out


def load_recording(entry: ManifestEntry, expected_hz: float | None = None) -> Recording:
    return parse_recording(
        entry.path,
        expected_hz=expected_hz,
        recording_id=entry.recording_id,
        subject_id=entry.subject_id,
        device_location=entry.device_location,
    )


# --- subject-level splits and folds ---------------------------------------

class SplitSet(enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    EVALUATION = "evaluation"


SplitAssignment = dict[str, SplitSet]


def _rounded_targets(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of n*ratios so the sizes sum to n."""
    raw = [n * r for r in ratios]
    sizes = [int(math.floor(x)) for x in raw]
    short = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: raw[i] - sizes[i], reverse=True)
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def subject_split(
    subjects: Iterable[str],
    ratios: tuple[float, float, float],
    seed: int,
) -> SplitAssignment:
    """Disjoint, exhaustive train/validation/evaluation subject partition."""
    names = sorted(set(subjects))
    if len(names) < 3:
        raise TooFewSubjects(f"need >=3 subjects, got {len(names)}")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidSpec(f"ratios must be >=0 and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = [names[i] for i in rng.permutation(len(names))]
    n_train, n_val, _ = _rounded_targets(len(names), ratios)
    assignment: SplitAssignment = {}
    for i, s in enumerate(order):
        if i < n_train:
            assignment[s] = SplitSet.TRAIN
        elif i < n_train + n_val:
            assignment[s] = SplitSet.VALIDATION
        else:
            assignment[s] = SplitSet.EVALUATION
    return assignment


@dataclass(frozen=True)
class FoldPolicy:
    """How evaluation folds are formed from the subject pool.

    kind is one of "kfold", "leave_one_out", "leave_one_out_train_pair".
    val_fraction controls how many non-evaluation subjects validate
    (at least one), except under the train-pair policy where training
    takes exactly two seeded-random subjects and validation the rest.
    """

    kind: str
    k: int = 0
    val_fraction: float = 0.2

    @classmethod
    def kfold(cls, k: int) -> "FoldPolicy":
        return cls(kind="kfold", k=k)

    @classmethod
    def leave_one_out(cls, val_fraction: float = 0.2) -> "FoldPolicy":
        return cls(kind="leave_one_out", val_fraction=val_fraction)

    @classmethod
    def leave_one_out_train_pair(cls) -> "FoldPolicy":
        return cls(kind="leave_one_out_train_pair")


@dataclass(frozen=True)
class FoldPlan:
    policy: FoldPolicy
    folds: tuple[SplitAssignment, ...]

    def evaluation_subjects(self, fold: int) -> list[str]:
        return sorted(
            s for s, v in self.folds[fold].items() if v is SplitSet.EVALUATION
        )


def _split_rest(rest: list[str], val_fraction: float, rng) -> SplitAssignment:
    order = [rest[i] for i in rng.permutation(len(rest))]
    n_val = max(1, int(round(val_fraction * len(rest))))
    n_val = min(n_val, len(rest) - 1)
    out: SplitAssignment = {}
    for i, s in enumerate(order):
        out[s] = SplitSet.VALIDATION if i < n_val else SplitSet.TRAIN
    return out


def make_folds(subjects: Iterable[str], policy: FoldPolicy, seed: int) -> FoldPlan:
    """Build a cross-validation plan; every fold covers all subjects."""
    names = sorted(set(subjects))
    n = len(names)
    rng = np.random.default_rng(seed)
    folds: list[SplitAssignment] = []

    if policy.kind == "leave_one_out":
        if n < 3:
            raise TooFewSubjects(f"leave-one-out needs >=3 subjects, got {n}")
        for held in names:
            rest = [s for s in names if s != held]
            fold = _split_rest(rest, policy.val_fraction, rng)
            fold[held] = SplitSet.EVALUATION
            folds.append(fold)
    elif policy.kind == "leave_one_out_train_pair":
        if n < 4:
            raise TooFewSubjects(f"train-pair folds need >=4 subjects, got {n}")
        for held in names:
            rest = [s for s in names if s != held]
            order = [rest[i] for i in rng.permutation(len(rest))]
            fold = {held: SplitSet.EVALUATION}
            for i, s in enumerate(order):
                fold[s] = SplitSet.TRAIN if i < 2 else SplitSet.VALIDATION
            folds.append(fold)
    elif policy.kind == "kfold":
        if policy.k < 2 or policy.k > n:
            raise TooFewSubjects(f"kfold needs 2 <= k <= {n}, got k={policy.k}")
        if n < 3:
            raise TooFewSubjects(f"kfold needs >=3 subjects, got {n}")
        order = [names[i] for i in rng.permutation(n)]
        groups: list[list[str]] = [[] for _ in range(policy.k)]
        for i, s in enumerate(order):
            groups[i % policy.k].append(s)
        for g in groups:
            rest = [s for s in names if s not in g]
            fold = _split_rest(rest, policy.val_fraction, rng)
            for s in g:
                fold[s] = SplitSet.EVALUATION
            folds.append(fold)
    else:
        raise InvalidSpec(f"unknown fold policy {policy.kind!r}")

    return FoldPlan(policy=policy, folds=tuple(folds))


# --- synthetic recordings --------------------------------------------------

@dataclass(frozen=True)
class Archetype:
    """Parametric signal family for one activity class.

    kind "periodic": gravity + amplitude * (sin(2*pi*f*t + phase) +
    harmonic_ratio * sin(4*pi*f*t + 2*phase)) along `axis`.
    kind "transient": gravity + amplitude * raised-cosine ramp cycling
    at `fundamental_hz` along `axis`.
    kind "static": gravity only. All kinds add N(0, noise_sigma) per axis.
    """

    kind: str
    fundamental_hz: float
    amplitude: float
    axis: tuple[float, float, float]
    gravity: tuple[float, float, float]
    noise_sigma: float
    harmonic_ratio: float = 0.0


ARCHETYPES: dict[ActivityLabel, Archetype] = {
    ActivityLabel.WALKING: Archetype(
        "periodic", 2.0, 3.0, (0.45, 0.76, 0.47), (0.0, 0.0, GRAVITY), 0.30, 0.4),
    ActivityLabel.RUNNING: Archetype(
        "periodic", 2.8, 8.0, (0.70, 0.40, 0.59), (0.0, 0.0, GRAVITY), 0.50, 0.3),
    ActivityLabel.STAIRS: Archetype(
        "periodic", 1.5, 4.5, (0.28, 0.56, 0.78), (0.0, 0.0, GRAVITY), 0.35, 0.5),
    ActivityLabel.STANDING: Archetype(
        "static", 0.0, 0.0, (0.0, 0.0, 1.0), (0.0, 0.0, GRAVITY), 0.05),
    # sway axis has a strong component along gravity so the vector norm
    # oscillates visibly; orientation alone is erased by augmentation
    ActivityLabel.SITTING_LYING: Archetype(
        "periodic", 0.5, 1.2, (0.8, 0.36, 0.48), (GRAVITY, 0.0, 0.0), 0.25),
    ActivityLabel.SIT_TO_STAND: Archetype(
        "transient", 0.25, 3.2, (0.53, 0.27, 0.80), (0.0, 0.0, GRAVITY), 0.20),
}

# Per-recording fundamental jitter, kept well inside the +-0.1 Hz band the
# spectral check allows.
_FREQ_JITTER_HZ = 0.04


@dataclass(frozen=True)
class SynthSpec:
    per_class: Mapping[ActivityLabel, int]
    duration_s: float
    seed: int
    sample_rate_hz: float = 50.0


def _synth_channels(arch: Archetype, t: np.ndarray, rng) -> np.ndarray:
    axis = np.asarray(arch.axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm > 0:
        axis = axis / norm
    gravity = np.asarray(arch.gravity, dtype=np.float64)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    freq = arch.fundamental_hz
    if arch.kind != "static":
        freq = freq + rng.uniform(-_FREQ_JITTER_HZ, _FREQ_JITTER_HZ)
    if arch.kind == "periodic":
        wave = np.sin(2.0 * math.pi * freq * t + phase)
        if arch.harmonic_ratio:
            wave = wave + arch.harmonic_ratio * np.sin(
                4.0 * math.pi * freq * t + 2.0 * phase)
        dyn = arch.amplitude * np.outer(axis, wave)
    elif arch.kind == "transient":
        cycle = (freq * t + phase / (2.0 * math.pi)) % 1.0
        ramp = 0.5 * (1.0 - np.cos(2.0 * math.pi * cycle))
        dyn = arch.amplitude * np.outer(axis, ramp)
    else:
        dyn = np.zeros((3, t.size))
    noise = rng.normal(0.0, arch.noise_sigma, size=(3, t.size))
    return gravity[:, None] + dyn + noise


def synth_generate(spec: SynthSpec) -> list[Recording]:
    """Generate fully labeled recordings, one synthetic subject each."""
    if spec.duration_s < 6.0:
        raise InvalidSpec(f"duration must be >= 6 s, got {spec.duration_s}")
    if spec.sample_rate_hz <= 0:
        raise InvalidSpec("sample rate must be positive")
    if not spec.per_class:
        raise InvalidSpec("at least one class count required")
    for label, count in spec.per_class.items():
        if count <= 0:
            raise InvalidSpec(f"count for {label.tag} must be positive, got {count}")

    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s * spec.sample_rate_hz))
    t = np.arange(n) / spec.sample_rate_hz
    recordings: list[Recording] = []
    subject = 0
    for label in ActivityLabel:
        count = spec.per_class.get(label, 0)
        for k in range(count):
            acc = _synth_channels(ARCHETYPES[label], t, rng)
            recordings.append(
                Recording(
                    recording_id=f"{label.tag}_{k:02d}",
                    subject_id=f"synth{subject:02d}",
                    device_location="belt",
                    sample_rate_hz=spec.sample_rate_hz,
                    t=t,
                    acc=acc,
                    labels=np.full(n, int(label), dtype=np.int64),
                )
            )
            subject += 1
    return recordings
