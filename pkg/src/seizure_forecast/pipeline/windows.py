"""Sample containers and labelled window extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DegenerateDataError, DimensionError
from .series import MODEL_CHANNELS, ChannelSeries, SeizureAnnotation, contiguous_runs

MINUTE_MS = 60_000


@dataclass(frozen=True)
class WindowParams:
    window_seconds: float = 30.0
    stride_seconds: float = 30.0
    common_rate: float = 4.0
    preictal_horizon_minutes: float = 60.0
    interictal_exclusion_minutes: float = 240.0
    ictal_minutes: float = 2.0
    postictal_buffer_minutes: float = 60.0
    max_gap_fraction: float = 0.10

    def __post_init__(self):
        if self.window_seconds <= 0 or self.stride_seconds <= 0 or self.common_rate <= 0:
            raise ConfigError("window_seconds, stride_seconds and common_rate must be positive")
        if not 0 < self.preictal_horizon_minutes <= 120:
            raise ConfigError("preictal_horizon_minutes must lie in (0, 120]")
        rows = self.window_seconds * self.common_rate
        if abs(rows - round(rows)) > 1e-9:
            raise ConfigError("window_seconds * common_rate must be a whole number of rows")
        stride = self.stride_seconds * self.common_rate
        if abs(stride - round(stride)) > 1e-9:
            raise ConfigError("stride_seconds * common_rate must be a whole number of rows")

    @property
    def window_rows(self) -> int:
        return int(round(self.window_seconds * self.common_rate))

    @property
    def stride_rows(self) -> int:
        return int(round(self.stride_seconds * self.common_rate))

    @classmethod
    def from_dict(cls, d) -> "WindowParams":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown window options: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Sample:
    window: np.ndarray
    label: int
    patient_id: str
    window_start_time: int
    source_segment_id: int


@dataclass
class SampleSet:
    """Column-oriented collection of samples; ``windows`` is ``[N, T, 5]``."""

    windows: np.ndarray
    labels: np.ndarray
    patient_ids: np.ndarray
    window_start_ms: np.ndarray
    segment_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.patient_ids = np.asarray(self.patient_ids, dtype=object)
        self.window_start_ms = np.asarray(self.window_start_ms, dtype=np.int64)
        if self.segment_ids is None:
            self.segment_ids = np.zeros(len(self.labels), dtype=np.int64)
        self.segment_ids = np.asarray(self.segment_ids, dtype=np.int64)
        n = len(self.labels)
        if self.windows.ndim != 3 and not (n == 0 and self.windows.size == 0):
            raise DimensionError(f"windows must be [N, T, C], got shape {self.windows.shape}")
        if not len(self.windows) == len(self.patient_ids) == len(self.window_start_ms) == len(self.segment_ids) == n:
            raise DimensionError("sample columns have different lengths")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.windows[i], int(self.labels[i]), str(self.patient_ids[i]),
                      int(self.window_start_ms[i]), int(self.segment_ids[i]))

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(self.windows[idx], self.labels[idx], self.patient_ids[idx],
                         self.window_start_ms[idx], self.segment_ids[idx])

    def where_patient(self, patient_id: str, include: bool = True) -> "SampleSet":
        mask = self.patient_ids == patient_id
        return self.subset(np.flatnonzero(mask if include else ~mask))

    def keys(self) -> list[tuple[str, int]]:
        return list(zip(self.patient_ids.tolist(), self.window_start_ms.tolist()))

    def canonical_order(self) -> np.ndarray:
        return np.lexsort((self.window_start_ms, self.patient_ids.astype(str)))

    @property
    def patients(self) -> list[str]:
        return sorted(set(self.patient_ids.tolist()))

    @classmethod
    def empty(cls, rows: int = 0, channels: int = len(MODEL_CHANNELS)) -> "SampleSet":
        return cls(np.zeros((0, rows, channels)), [], [], [], [])

    @classmethod
    def concat(cls, sets: list["SampleSet"]) -> "SampleSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(
            np.concatenate([s.windows for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.patient_ids for s in sets]),
            np.concatenate([s.window_start_ms for s in sets]),
            np.concatenate([s.segment_ids for s in sets]),
        )


def align_channels(series: dict[str, ChannelSeries], rate: float) -> tuple[int, np.ndarray]:
    """Stack the model channels into ``[rows, 5]`` on a shared grid.

    All series must already be sampled at ``rate``; the shared grid starts
    at the latest start time and stops at the earliest end.
    """
    missing = [c for c in MODEL_CHANNELS if c not in series]
    if missing:
        raise DimensionError(f"channels missing for alignment: {missing}")
    step = 1000.0 / rate
    origin = max(series[c].start_time for c in MODEL_CHANNELS)
    cols = []
    for c in MODEL_CHANNELS:
        s = series[c]
        if s.sample_rate != rate:
            raise DimensionError(f"channel {c} sampled at {s.sample_rate} Hz, expected {rate}")
        offset = (origin - s.start_time) / step
        if abs(offset - round(offset)) > 1e-6:
            raise DimensionError(f"channel {c} grid is not aligned with the shared origin")
        cols.append(s.values[int(round(offset)):])
    n = min(len(c) for c in cols)
    return origin, np.stack([c[:n] for c in cols], axis=1)


def _fill_small_gaps(window: np.ndarray) -> np.ndarray:
    out = window.copy()
    idx = np.arange(len(out))
    for j in range(out.shape[1]):
        col = out[:, j]
        bad = ~np.isfinite(col)
        if bad.any():
            col[bad] = np.interp(idx[bad], idx[~bad], col[~bad])
    return out


def classify_window(start_ms: float, end_ms: float, annotations: list[SeizureAnnotation], params: WindowParams) -> int | None:
    """1 for pre-ictal, 0 for interictal, None when the window is discarded."""
    ictal = params.ictal_minutes * MINUTE_MS
    post = params.postictal_buffer_minutes * MINUTE_MS
    excl = params.interictal_exclusion_minutes * MINUTE_MS
    preictal = False
    interictal = True
    for a in annotations:
        onset = a.onset_time
        if start_ms < onset + ictal + post and end_ms > onset:
            return None
        horizon = (a.horizon_minutes or params.preictal_horizon_minutes) * MINUTE_MS
        if start_ms >= onset - horizon and end_ms <= onset:
            preictal = True
        if not (end_ms <= onset - excl or start_ms >= onset + ictal + excl):
            interictal = False
    if preictal:
        return 1
    if interictal:
        return 0
    return None


def label_windows(series: dict[str, ChannelSeries], annotations: list[SeizureAnnotation],
                  params: WindowParams | None = None) -> SampleSet:
    """Cut fixed-length windows on the shared grid and label them.

    Windows start every ``stride_seconds`` from the shared origin.  A window
    entirely inside ``[onset - horizon, onset)`` is pre-ictal; one further
    than the exclusion distance from every seizure is interictal; windows
    touching an ictal or post-ictal span, or with too many gap rows, are
    dropped.  Remaining gap rows are filled by linear interpolation.
    """
    params = params or WindowParams()
    origin, matrix = align_channels(series, params.common_rate)
    patient_id = next(iter(series.values())).patient_id
    rows, stride = params.window_rows, params.stride_rows
    step_ms = 1000.0 / params.common_rate
    finite_rows = np.isfinite(matrix).all(axis=1)
    segment_of_row = np.full(len(matrix), -1, dtype=np.int64)
    for k, (a, b) in enumerate(contiguous_runs(finite_rows)):
        segment_of_row[a:b] = k

    windows, labels, starts, segments = [], [], [], []
    for r in range(0, len(matrix) - rows + 1, stride):
        start_ms = origin + r * step_ms
        label = classify_window(start_ms, start_ms + rows * step_ms, annotations, params)
        if label is None:
            continue
        w = matrix[r : r + rows]
        good = finite_rows[r : r + rows]
        if good.sum() < 2 or (1.0 - good.mean()) > params.max_gap_fraction:
            continue
        if not good.all():
            w = _fill_small_gaps(w)
        seg = segment_of_row[r : r + rows]
        windows.append(w)
        labels.append(label)
        starts.append(int(round(start_ms)))
        segments.append(int(seg[seg >= 0][0]))
    if not windows:
        raise DegenerateDataError(f"patient {patient_id}: no admissible windows")
    return SampleSet(np.stack(windows), labels, [patient_id] * len(labels), starts, segments)
