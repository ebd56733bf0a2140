"""Resampling, rotation augmentation, and sliding-window extraction.

Recordings are brought onto a uniform grid with a not-a-knot cubic spline,
optionally rotated in 3D (augmentation), and cut into fixed-length windows
whose central segment carries the label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import ActivityLabel, Recording
from .errors import NonMonotoneTime, RateMismatch, ShapeMismatch, TooFewSamples


@dataclass(frozen=True)
class Window:
    """A (3, L) block of uniformly sampled acceleration.

    ``span`` covers the whole window, ``central_span`` the stride-long
    segment in its middle that predictions are attributed to. ``label``
    is the strict-majority label of the central segment, or None.
    """

    data: np.ndarray
    label: ActivityLabel | None
    subject_id: str
    device_location: str
    recording_id: str
    span: tuple[float, float]
    central_span: tuple[float, float]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != 3:
            raise ShapeMismatch(f"window data must be (3, L), got {data.shape}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)


# --- not-a-knot cubic spline ------------------------------------------------

def _thomas(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray,
            rhs: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system in place (standard forward/back sweep)."""
    n = diag.size
    c = sup.copy()
    d = rhs.copy()
    b = diag.copy()
    for i in range(1, n):
        w = sub[i] / b[i - 1]
        b[i] -= w * c[i - 1]
        d[i] -= w * d[i - 1]
    x = np.empty(n)
    x[-1] = d[-1] / b[-1]
    for i in range(n - 2, -1, -1):
        x[i] = (d[i] - c[i] * x[i + 1]) / b[i]
    return x


def _spline_moments(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second derivatives of the not-a-knot cubic spline at the knots.

    The two not-a-knot conditions (third derivative continuous across the
    second and second-to-last knots) are eliminated into the first and last
    interior equations, leaving a tridiagonal system for M[1..n-1].
    """
    n = x.size - 1  # number of intervals, >= 3
    h = np.diff(x)
    slope = np.diff(y) / h
    d = 6.0 * np.diff(slope)  # rhs for interior knots 1..n-1

    m = n - 1
    sub = np.zeros(m)
    diag = np.zeros(m)
    sup = np.zeros(m)
    for j in range(m):
        i = j + 1  # knot index
        sub[j] = h[i - 1]
        diag[j] = 2.0 * (h[i - 1] + h[i])
        sup[j] = h[i]
    diag[0] = 3.0 * h[0] + 2.0 * h[1] + h[0] ** 2 / h[1]
    sup[0] = (h[1] ** 2 - h[0] ** 2) / h[1]
    diag[-1] = 3.0 * h[n - 1] + 2.0 * h[n - 2] + h[n - 1] ** 2 / h[n - 2]
    sub[-1] = (h[n - 2] ** 2 - h[n - 1] ** 2) / h[n - 2]

    interior = _thomas(sub, diag, sup, d)
    moments = np.empty(n + 1)
    moments[1:n] = interior
    moments[0] = ((h[0] + h[1]) * moments[1] - h[0] * moments[2]) / h[1]
    moments[n] = ((h[n - 1] + h[n - 2]) * moments[n - 1]
                  - h[n - 1] * moments[n - 2]) / h[n - 2]
    return moments


def _spline_eval(x: np.ndarray, y: np.ndarray, moments: np.ndarray,
                 xq: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, x.size - 2)
    h = x[idx + 1] - x[idx]
    a = (x[idx + 1] - xq) / h
    b = (xq - x[idx]) / h
    return (
        a * y[idx]
        + b * y[idx + 1]
        + ((a ** 3 - a) * moments[idx] + (b ** 3 - b) * moments[idx + 1])
        * h ** 2 / 6.0
    )


def resample_cubic(
    t: np.ndarray, values: np.ndarray, target_hz: float
) -> tuple[np.ndarray, np.ndarray]:
    """Resample one channel onto the uniform grid t[0], t[0]+1/hz, ...

    The interpolant is the not-a-knot cubic spline through the input
    points; the grid never extends past the input span.
    """
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if t.ndim != 1 or t.shape != values.shape:
        raise ShapeMismatch("t and values must be equal-length 1-D arrays")
    if t.size < 4:
        raise TooFewSamples(f"cubic resampling needs >=4 samples, got {t.size}")
    if np.any(np.diff(t) <= 0):
        raise NonMonotoneTime("timestamps must be strictly increasing")
    if target_hz <= 0:
        raise RateMismatch("target_hz must be positive")
    count = int(math.floor((t[-1] - t[0]) * target_hz + 1e-9)) + 1
    grid = t[0] + np.arange(count) / target_hz
    grid = np.minimum(grid, t[-1])  # guard the last point against roundoff
    moments = _spline_moments(t, values)
    return grid, _spline_eval(t, values, moments, grid)


def resample_recording(rec: Recording, target_hz: float) -> Recording:
    """Spline-resample all three channels; labels follow the nearest sample."""
    grid = None
    channels = []
    for c in range(3):
        grid, vals = resample_cubic(rec.t, rec.acc[c], target_hz)
        channels.append(vals)
    labels = None
    if rec.labels is not None:
        pos = np.searchsorted(rec.t, grid)
        pos = np.clip(pos, 1, rec.t.size - 1)
        left = pos - 1
        # nearest input timestamp; ties resolve to the earlier sample
        use_left = (grid - rec.t[left]) <= (rec.t[pos] - grid)
        nearest = np.where(use_left, left, pos)
        labels = rec.labels[nearest]
    return Recording(
        recording_id=rec.recording_id,
        subject_id=rec.subject_id,
        device_location=rec.device_location,
        sample_rate_hz=target_hz,
        t=grid,
        acc=np.vstack(channels),
        labels=labels,
    )


# --- 3-D rotation augmentation ----------------------------------------------

def rotation_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rz(gamma) @ Ry(beta) @ Rx(alpha), angles in radians."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    cg, sg = math.cos(gamma), math.sin(gamma)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz = np.array([[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def sample_rotation(rng: np.random.Generator) -> np.ndarray:
    """Random rotation with each of the three angles uniform on [0, 180] deg."""
    alpha, beta, gamma = rng.uniform(0.0, math.pi, size=3)
    return rotation_matrix(alpha, beta, gamma)


def apply_rotation(window: Window, rotation: np.ndarray) -> Window:
    """Rotate every (ax, ay, az) sample; label and metadata are untouched."""
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise ShapeMismatch(f"rotation must be 3x3, got {rotation.shape}")
    return Window(
        data=rotation @ window.data,
        label=window.label,
        subject_id=window.subject_id,
        device_location=window.device_location,
        recording_id=window.recording_id,
        span=window.span,
        central_span=window.central_span,
    )


# --- sliding windows ----------------------------------------------------------

def _check_uniform(rec: Recording) -> None:
    if rec.n_samples >= 2:
        dt = np.diff(rec.t)
        if np.max(np.abs(dt - 1.0 / rec.sample_rate_hz)) > 1e-6:
            raise RateMismatch(
                f"recording {rec.recording_id!r} is not uniformly sampled at "
                f"{rec.sample_rate_hz:g} Hz"
            )


def _exact_samples(seconds: float, hz: float, what: str) -> int:
    n = seconds * hz
    if abs(n - round(n)) > 1e-9:
        raise RateMismatch(f"{what} ({seconds:g} s) is not a whole number of "
                           f"samples at {hz:g} Hz")
    return int(round(n))


def window_stream(
    rec: Recording,
    window_seconds: float = 6.0,
    stride_seconds: float = 2.0,
) -> list[Window]:
    """Cut windows starting every stride; count = floor((n-L)/S) + 1.

    For labeled recordings the central segment's strict-majority label is
    attached; windows whose central segment has no strict majority keep
    label None and are skipped by labeled-only consumers.
    """
    _check_uniform(rec)
    hz = rec.sample_rate_hz
    length = _exact_samples(window_seconds, hz, "window length")
    step = _exact_samples(stride_seconds, hz, "stride")
    if step <= 0 or length <= 0:
        raise RateMismatch("window and stride must be positive")
    if (length - step) % 2 != 0:
        raise RateMismatch(
            "window minus stride must be an even number of samples so the "
            "central segment sits symmetrically")
    margin = (length - step) // 2
    n = rec.n_samples
    if n < length:
        return []
    windows: list[Window] = []
    count = (n - length) // step + 1
    for k in range(count):
        i0 = k * step
        t_start = float(rec.t[i0])
        label = None
        if rec.labels is not None:
            central = rec.labels[i0 + margin:i0 + margin + step]
            counts = np.bincount(central, minlength=len(ActivityLabel))
            top = int(np.argmax(counts))
            if counts[top] * 2 > step:
                label = ActivityLabel(top)
        windows.append(
            Window(
                data=rec.acc[:, i0:i0 + length],
                label=label,
                subject_id=rec.subject_id,
                device_location=rec.device_location,
                recording_id=rec.recording_id,
                span=(t_start, t_start + window_seconds),
                central_span=(
                    t_start + margin / hz,
                    t_start + (margin + step) / hz,
                ),
            )
        )
    return windows


def labeled_windows(windows: list[Window]) -> list[Window]:
    return [w for w in windows if w.label is not None]
