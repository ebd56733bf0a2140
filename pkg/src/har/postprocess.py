"""Label smoothing, gait grouping, and ambulatory bout extraction.

Each 2-second segment is re-labeled by a vote over the windows whose span
covers it (three windows at the 6 s / 2 s defaults). Smoothed labels map
to gait / non-gait, and maximal contiguous runs become bouts. A timestamp
gap always terminates a bout; bouts are never merged across gaps.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .dataio import ActivityLabel
from .errors import NonContiguousSegments

_GAP_TOLERANCE_S = 1e-6


class GaitGroup(enum.Enum):
    GAIT = "gait"
    NON_GAIT = "non_gait"


@dataclass(frozen=True)
class SegmentPrediction:
    """One scored central segment: a span, six probabilities, a label.

    The label equals argmax(probs) as produced by the model; after
    filtering it may differ while probs stay untouched for audit.
    """

    span: tuple[float, float]
    probs: np.ndarray
    label: ActivityLabel

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def confidence(self) -> float:
        return float(np.max(self.probs))


@dataclass(frozen=True)
class Bout:
    group: GaitGroup
    t_start: float
    t_end: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


def _check_contiguous(segments: list[SegmentPrediction]) -> None:
    for prev, cur in zip(segments, segments[1:]):
        if abs(cur.span[0] - prev.span[1]) > _GAP_TOLERANCE_S:
            raise NonContiguousSegments(
                f"segment starting at {cur.span[0]:g} does not abut the "
                f"previous segment ending at {prev.span[1]:g}")


def _voting_reach(window_seconds: float, stride_seconds: float) -> int:
    # window j covers segment i iff |j - i| <= (window - stride) / (2*stride)
    return int((window_seconds - stride_seconds) / (2.0 * stride_seconds) + 1e-9)


def majority_filter(
    segments: list[SegmentPrediction],
    window_seconds: float = 6.0,
    stride_seconds: float = 2.0,
    variant: str = "majority",
) -> list[SegmentPrediction]:
    """Relabel each segment from the windows covering it.

    "majority": most frequent label among covering windows; ties prefer
    the tied label with the highest single-window confidence, then the
    window centered nearest the segment (earlier on equal distance).
    "max-confidence": the covering window with the highest confidence wins
    outright. Probabilities are never modified.
    """
    if variant not in ("majority", "max-confidence"):
        raise ValueError(f"unknown filter variant {variant!r}")
    _check_contiguous(segments)
    n = len(segments)
    reach = _voting_reach(window_seconds, stride_seconds)
    out: list[SegmentPrediction] = []
    for i, seg in enumerate(segments):
        voters = list(range(max(0, i - reach), min(n, i + reach + 1)))
        # nearest center first, earlier window on equal distance
        by_distance = sorted(voters, key=lambda j: (abs(j - i), j))
        if variant == "max-confidence":
            winner = max(by_distance, key=lambda j: segments[j].confidence)
            # max() keeps the first maximum, i.e. the nearest-center window
            out.append(replace(seg, label=segments[winner].label))
            continue
        counts = Counter(segments[j].label for j in voters)
        top = max(counts.values())
        tied = {label for label, c in counts.items() if c == top}
        if len(tied) == 1:
            (label,) = tied
        else:
            best_conf = {
                label: max(segments[j].confidence for j in voters
                           if segments[j].label == label)
                for label in tied
            }
            peak = max(best_conf.values())
            tied = {label for label in tied if best_conf[label] == peak}
            label = next(segments[j].label for j in by_distance
                         if segments[j].label in tied)
        out.append(replace(seg, label=label))
    return out


def map_gait(label: ActivityLabel) -> GaitGroup:
    """Walking, running, and stairs count as gait; the rest do not."""
    if label in (ActivityLabel.WALKING, ActivityLabel.RUNNING,
                 ActivityLabel.STAIRS):
        return GaitGroup.GAIT
    return GaitGroup.NON_GAIT


def extract_bouts(segments: list[SegmentPrediction]) -> list[Bout]:
    """Maximal runs of same-group segments; a recording gap ends a run."""
    bouts: list[Bout] = []
    run_group: GaitGroup | None = None
    run_start = run_end = 0.0
    for seg in segments:
        group = map_gait(seg.label)
        gap = run_group is not None and abs(seg.span[0] - run_end) > _GAP_TOLERANCE_S
        if group is run_group and not gap:
            run_end = seg.span[1]
            continue
        if run_group is not None:
            bouts.append(Bout(run_group, run_start, run_end))
        run_group = group
        run_start, run_end = seg.span
    if run_group is not None:
        bouts.append(Bout(run_group, run_start, run_end))
    return bouts


def mean_bout_duration(bouts: list[Bout], group: GaitGroup) -> float | None:
    """Arithmetic mean duration for the group; None when no bouts exist."""
    durations = [b.duration for b in bouts if b.group is group]
    if not durations:
        return None
    return sum(durations) / len(durations)
