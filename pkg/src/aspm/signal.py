"""Recording ingestion and preprocessing into labeled 60-second periods.

The pipeline is ``resample_1hz -> standardize -> baseline_adjust (optional)
-> segment_periods``.  Every function is pure: inputs are never mutated.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PERIOD_SECONDS = 60
MIN_EVENT_SECONDS = 10.0
SD_FLOOR = 1e-12


class SignalError(ValueError):
    """Base class for input problems in this module."""


class ParseError(SignalError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class StructuralError(SignalError):
    """Well-formed data that violates a structural invariant."""


class Device(str, enum.Enum):
    LOW_QUALITY = "low_quality"
    HIGH_QUALITY = "high_quality"


class EventKind(str, enum.Enum):
    APNEA = "apnea"
    HYPOPNEA = "hypopnea"
    ARTIFACT = "artifact"


RESPIRATORY_KINDS = (EventKind.APNEA, EventKind.HYPOPNEA)


@dataclass(frozen=True)
class Recording:
    """One subject-night of timestamped samples from one device."""

    subject_id: str
    device: Device
    timestamps: np.ndarray
    values: np.ndarray
    nominal_rate: float
    recording_id: str = ""

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamps, dtype=np.float64)
        vs = np.ascontiguousarray(self.values, dtype=np.float64)
        if ts.ndim != 1 or ts.shape != vs.shape:
            raise StructuralError("timestamps and values must be 1-D and of equal length")
        if not (self.nominal_rate > 0 and math.isfinite(self.nominal_rate)):
            raise StructuralError(f"nominal_rate must be positive, got {self.nominal_rate}")
        if not np.all(np.isfinite(ts)) or not np.all(np.isfinite(vs)):
            raise StructuralError("timestamps and values must be finite")
        if ts.size > 1:
            bad = np.flatnonzero(np.diff(ts) <= 0)
            if bad.size:
                i = int(bad[0]) + 1
                raise StructuralError(
                    f"timestamps must be strictly increasing (sample {i}: "
                    f"{ts[i]!r} after {ts[i - 1]!r})"
                )
        ts.setflags(write=False)
        vs.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vs)
        object.__setattr__(self, "device", Device(self.device))
        if not self.recording_id:
            object.__setattr__(self, "recording_id", f"{self.subject_id}/{self.device.value}")

    def __len__(self):
        return self.timestamps.size

    @property
    def duration(self) -> float:
        """Covered time span in seconds, counting the last sample's own interval."""
        if self.timestamps.size == 0:
            return 0.0
        return float(self.timestamps[-1] - self.timestamps[0]) + 1.0 / self.nominal_rate


@dataclass(frozen=True)
class Event:
    start: float
    end: float
    kind: EventKind

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class EventAnnotation:
    """Expert-scored intervals on a recording's timeline.

    Same-kind events that overlap or touch are merged on construction, so
    ``events`` is always sorted and non-overlapping within each kind.
    """

    recording_id: str
    events: tuple = ()

    def __post_init__(self):
        evs = []
        for ev in self.events:
            if not isinstance(ev, Event):
                ev = Event(float(ev[0]), float(ev[1]), EventKind(ev[2]))
            else:
                ev = Event(float(ev.start), float(ev.end), EventKind(ev.kind))
            if not (math.isfinite(ev.start) and math.isfinite(ev.end)):
                raise StructuralError(f"non-finite event bounds: {ev}")
            if ev.end <= ev.start:
                raise StructuralError(f"event end must exceed start: {ev}")
            if ev.kind in RESPIRATORY_KINDS and ev.duration < MIN_EVENT_SECONDS:
                raise StructuralError(
                    f"{ev.kind.value} event shorter than {MIN_EVENT_SECONDS:g} s: {ev}"
                )
            evs.append(ev)
        object.__setattr__(self, "events", tuple(_merge_same_kind(evs)))

    def of_kind(self, *kinds: EventKind) -> list[Event]:
        return [ev for ev in self.events if ev.kind in kinds]

    @property
    def n_respiratory(self) -> int:
        return len(self.of_kind(*RESPIRATORY_KINDS))


def _merge_same_kind(events: Iterable[Event]) -> list[Event]:
    merged: list[Event] = []
    for kind in EventKind:
        same = sorted((ev for ev in events if ev.kind == kind), key=lambda e: e.start)
        cur = None
        for ev in same:
            if cur is not None and ev.start <= cur.end:
                cur = Event(cur.start, max(cur.end, ev.end), kind)
            else:
                if cur is not None:
                    merged.append(cur)
                cur = ev
        if cur is not None:
            merged.append(cur)
    merged.sort(key=lambda e: (e.start, e.end, e.kind.value))
    return merged


def _union(intervals: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


@dataclass(frozen=True)
class UniformSeries:
    recording_id: str
    subject_id: str
    device: Device
    values: np.ndarray
    start_time: float

    def __post_init__(self):
        vs = np.ascontiguousarray(self.values, dtype=np.float64)
        if vs.ndim != 1:
            raise StructuralError("series values must be 1-D")
        if not np.all(np.isfinite(vs)):
            raise StructuralError("series values must be finite")
        vs.setflags(write=False)
        object.__setattr__(self, "values", vs)

    def __len__(self):
        return self.values.size

    def with_values(self, values: np.ndarray) -> "UniformSeries":
        return UniformSeries(self.recording_id, self.subject_id, self.device, values, self.start_time)


@dataclass
class PeriodSet:
    """Labeled 60-sample period vectors with provenance.

    Columns are parallel numpy arrays; ``x`` has shape ``(n, 60)`` and ``y``
    holds 0 (normal) or 1 (apneic).
    """

    x: np.ndarray
    y: np.ndarray
    subject_id: np.ndarray
    recording_id: np.ndarray
    index: np.ndarray
    device: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, PERIOD_SECONDS)
        n = self.x.shape[0]
        self.y = np.asarray(self.y, dtype=np.int64).reshape(n)
        self.subject_id = np.asarray(self.subject_id, dtype=object).reshape(n)
        self.recording_id = np.asarray(self.recording_id, dtype=object).reshape(n)
        self.index = np.asarray(self.index, dtype=np.int64).reshape(n)
        if self.device is None:
            self.device = np.full(n, Device.LOW_QUALITY.value, dtype=object)
        self.device = np.asarray(self.device, dtype=object).reshape(n)
        if not np.all(np.isfinite(self.x)):
            raise StructuralError("period vectors must be finite")
        if n and not np.isin(self.y, (0, 1)).all():
            raise StructuralError("period labels must be 0 or 1")

    def __len__(self):
        return self.x.shape[0]

    @classmethod
    def empty(cls) -> "PeriodSet":
        return cls(np.empty((0, PERIOD_SECONDS)), [], [], [], [])

    @classmethod
    def concat(cls, sets: Sequence["PeriodSet"]) -> "PeriodSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(
            np.concatenate([s.x for s in sets]),
            np.concatenate([s.y for s in sets]),
            np.concatenate([s.subject_id for s in sets]),
            np.concatenate([s.recording_id for s in sets]),
            np.concatenate([s.index for s in sets]),
            np.concatenate([s.device for s in sets]),
        )

    def take(self, idx) -> "PeriodSet":
        idx = np.asarray(idx)
        return PeriodSet(
            self.x[idx], self.y[idx], self.subject_id[idx],
            self.recording_id[idx], self.index[idx], self.device[idx],
        )

    def class_counts(self) -> tuple[int, int]:
        """Return ``(n_normal, n_apneic)``."""
        n_pos = int(self.y.sum())
        return len(self) - n_pos, n_pos

    def subjects(self) -> list[str]:
        """Subject ids in order of first appearance."""
        return list(dict.fromkeys(self.subject_id.tolist()))


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------

def _iter_rows(path, n_fields: int):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n_fields:
                raise ParseError(path, line_no, f"expected {n_fields} fields, got {len(parts)}")
            yield line_no, [p.strip() for p in parts]


def _parse_float(path, line_no, text):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, line_no, f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, line_no, f"non-finite value: {text!r}")
    return v


def parse_recording(path, device, subject_id: str, nominal_rate: float | None = None,
                    recording_id: str | None = None) -> Recording:
    """Read a ``timestamp_seconds,value`` file.

    If ``nominal_rate`` is omitted it is estimated from the median sample
    spacing.
    """
    path = Path(path)
    ts, vs = [], []
    prev = -math.inf
    for line_no, (t_txt, v_txt) in _iter_rows(path, 2):
        t = _parse_float(path, line_no, t_txt)
        v = _parse_float(path, line_no, v_txt)
        if t <= prev:
            raise StructuralError(
                f"{path}:{line_no}: timestamp {t!r} does not increase (previous {prev!r})"
            )
        prev = t
        ts.append(t)
        vs.append(v)
    if nominal_rate is None:
        nominal_rate = 1.0 / float(np.median(np.diff(ts))) if len(ts) > 1 else 1.0
    return Recording(subject_id, Device(device), np.array(ts), np.array(vs),
                     float(nominal_rate), recording_id or path.stem)


def write_recording(rec: Recording, path) -> None:
    # repr() gives the shortest string that round-trips a float exactly
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{t!r},{v!r}\n" for t, v in zip(rec.timestamps.tolist(), rec.values.tolist()))


def parse_annotation(path, recording_id: str | None = None) -> EventAnnotation:
    path = Path(path)
    events = []
    for line_no, (s_txt, e_txt, kind_txt) in _iter_rows(path, 3):
        s = _parse_float(path, line_no, s_txt)
        e = _parse_float(path, line_no, e_txt)
        try:
            kind = EventKind(kind_txt)
        except ValueError:
            raise ParseError(path, line_no, f"unknown event kind {kind_txt!r}") from None
        try:
            events.append(Event(s, e, kind))
            EventAnnotation("", (events[-1],))
        except StructuralError as exc:
            raise ParseError(path, line_no, str(exc)) from None
    return EventAnnotation(recording_id or path.stem, tuple(events))


def write_annotation(ann: EventAnnotation, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{ev.start!r},{ev.end!r},{ev.kind.value}\n" for ev in ann.events)


PERIOD_HEADER = ["subject_id", "recording_id", "device", "index", "label",
                 *(f"v{i}" for i in range(PERIOD_SECONDS))]


def write_periods(periods: PeriodSet, path) -> None:
    """Write a period set as CSV with a header row, one period per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(PERIOD_HEADER) + "\n")
        for i in range(len(periods)):
            vals = ",".join(repr(v) for v in periods.x[i].tolist())
            fh.write(f"{periods.subject_id[i]},{periods.recording_id[i]},{periods.device[i]},"
                     f"{int(periods.index[i])},{int(periods.y[i])},{vals}\n")


def read_periods(path) -> PeriodSet:
    path = Path(path)
    rows = _iter_rows(path, len(PERIOD_HEADER))
    try:
        _, header = next(rows)
    except StopIteration:
        raise ParseError(path, 1, "missing header row") from None
    if header != PERIOD_HEADER:
        raise ParseError(path, 1, "unexpected header")
    sid, rid, dev, idx, lab, xs = [], [], [], [], [], []
    for line_no, parts in rows:
        try:
            idx.append(int(parts[3]))
            lab.append(int(parts[4]))
        except ValueError:
            raise ParseError(path, line_no, "index and label must be integers") from None
        sid.append(parts[0])
        rid.append(parts[1])
        dev.append(parts[2])
        xs.append([_parse_float(path, line_no, t) for t in parts[5:]])
    if not xs:
        return PeriodSet.empty()
    return PeriodSet(np.array(xs), lab, sid, rid, idx, dev)


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def resample_1hz(rec: Recording) -> UniformSeries:
    """Downsample to 1 Hz by averaging every sample in ``[k, k+1)``.

    Seconds without samples are linearly interpolated from the nearest
    defined seconds; leading/trailing gaps cannot occur because the first
    and last seconds always hold a sample.
    """
    if len(rec) == 0:
        raise SignalError(f"recording {rec.recording_id!r} is empty")
    sec = np.floor(rec.timestamps)
    first = sec[0]
    bucket = (sec - first).astype(np.int64)
    n = int(bucket[-1]) + 1
    counts = np.bincount(bucket, minlength=n)
    sums = np.bincount(bucket, weights=rec.values, minlength=n)
    defined = counts > 0
    out = np.empty(n)
    out[defined] = sums[defined] / counts[defined]
    if not defined.all():
        k = np.arange(n)
        out[~defined] = np.interp(k[~defined], k[defined], out[defined])
    return UniformSeries(rec.recording_id, rec.subject_id, rec.device, out, float(first))


def standardize(series: UniformSeries) -> UniformSeries:
    x = series.values
    if x.size < 2:
        raise SignalError("standardize needs at least 2 samples")
    sd = x.std()
    if sd < SD_FLOOR:
        return series.with_values(np.zeros_like(x))
    return series.with_values((x - x.mean()) / sd)


def baseline_adjust(series: UniformSeries, window: int = PERIOD_SECONDS) -> UniformSeries:
    """Sliding-window standardization (BLA).

    Sample ``i`` is standardized with the mean/sd of ``x[i-30 : i+30]``; the
    window keeps its full width near the ends by shifting inward.
    """
    x = series.values
    n = x.size
    if n < window:
        raise SignalError(f"baseline_adjust needs at least {window} samples, got {n}")
    windows = sliding_window_view(x, window)  # (n - window + 1, window)
    starts = np.clip(np.arange(n) - window // 2, 0, n - window)
    mean = windows.mean(axis=1)
    sd = windows.std(axis=1)
    m, s = mean[starts], sd[starts]
    ok = s >= SD_FLOOR
    out = np.zeros(n)
    out[ok] = (x[ok] - m[ok]) / s[ok]
    return series.with_values(out)


def segment_periods(series: UniformSeries, ann: EventAnnotation | None,
                    min_overlap: float = MIN_EVENT_SECONDS) -> PeriodSet:
    """Cut consecutive 60 s windows and label each from annotation overlap.

    A window is apneic when its overlap with the union of apnea and hypopnea
    events is at least ``min_overlap`` seconds.
    """
    n_periods = len(series) // PERIOD_SECONDS
    x = series.values[: n_periods * PERIOD_SECONDS].reshape(n_periods, PERIOD_SECONDS)
    starts = series.start_time + PERIOD_SECONDS * np.arange(n_periods, dtype=np.float64)
    ends = starts + PERIOD_SECONDS
    overlap = np.zeros(n_periods)
    if ann is not None:
        for s, e in _union([(ev.start, ev.end) for ev in ann.of_kind(*RESPIRATORY_KINDS)]):
            overlap += np.clip(np.minimum(ends, e) - np.maximum(starts, s), 0.0, None)
    y = (overlap >= min_overlap - 1e-9).astype(np.int64)
    return PeriodSet(
        x.copy(), y,
        np.full(n_periods, series.subject_id, dtype=object),
        np.full(n_periods, series.recording_id, dtype=object),
        np.arange(n_periods),
        np.full(n_periods, series.device.value, dtype=object),
    )


def artifact_fraction(rec: Recording, ann: EventAnnotation) -> float:
    if len(rec) == 0:
        return 0.0
    t0 = float(rec.timestamps[0])
    t1 = t0 + rec.duration
    covered = 0.0
    for s, e in _union([(ev.start, ev.end) for ev in ann.of_kind(EventKind.ARTIFACT)]):
        covered += max(0.0, min(e, t1) - max(s, t0))
    return covered / rec.duration


def filter_artifact_recordings(recs: Sequence[Recording], anns: Sequence[EventAnnotation],
                               threshold: float = 0.20) -> list[tuple[Recording, EventAnnotation]]:
    """Keep recordings whose artifact share is at most ``threshold``.

    Annotations are matched to recordings by ``recording_id``.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    by_id = {a.recording_id: a for a in anns}
    kept = []
    for rec in recs:
        ann = by_id.get(rec.recording_id, EventAnnotation(rec.recording_id))
        if artifact_fraction(rec, ann) <= threshold + 1e-12:
            kept.append((rec, ann))
    return kept


def preprocess(rec: Recording, ann: EventAnnotation | None, bla: bool = True) -> PeriodSet:
    """Full chain: resample, standardize, optional BLA, segment."""
    series = standardize(resample_1hz(rec))
    if bla:
        series = baseline_adjust(series)
    return segment_periods(series, ann)
