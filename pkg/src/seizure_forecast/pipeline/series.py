"""Channel series, CSV ingestion, ACC magnitude and resampling."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from ..errors import ContractError, DataError, DimensionError, IngestionError

logger = logging.getLogger(__name__)

RAW_CHANNELS = ("BVP", "EDA", "HR", "TEMP", "ACC_X", "ACC_Y", "ACC_Z", "ACC_MAG")
MODEL_CHANNELS = ("BVP", "EDA", "HR", "ACC_MAG", "TEMP")
GAP_SECONDS = 5.0


@dataclass
class ChannelSeries:
    """Uniformly sampled signal; NaN entries mark gaps."""

    patient_id: str
    channel: str
    start_time: int  # epoch milliseconds
    sample_rate: float
    values: np.ndarray

    def __post_init__(self):
        if self.channel not in RAW_CHANNELS:
            raise ContractError(f"unknown channel {self.channel!r}")
        if not self.sample_rate > 0:
            raise ContractError(f"sample_rate must be > 0, got {self.sample_rate}")
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times_ms(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.values)) * (1000.0 / self.sample_rate)

    @property
    def end_time(self) -> float:
        """Timestamp of the last sample, in ms."""
        return self.start_time + (len(self.values) - 1) * 1000.0 / self.sample_rate

    @property
    def segments(self) -> list[tuple[int, int]]:
        """Half-open index ranges of gap-free stretches."""
        return contiguous_runs(np.isfinite(self.values))


@dataclass
class SeizureAnnotation:
    patient_id: str
    seizure_id: str
    onset_time: int  # epoch milliseconds
    seizure_type: str = ""
    horizon_minutes: float | None = None


@dataclass
class PatientRecording:
    patient_id: str
    series: dict[str, ChannelSeries]
    annotations: list[SeizureAnnotation] = field(default_factory=list)


def contiguous_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def check_annotations(annotations: list[SeizureAnnotation]) -> None:
    onsets = [a.onset_time for a in annotations]
    if any(b <= a for a, b in zip(onsets, onsets[1:])):
        raise DataError("seizure onset times must be strictly increasing")


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def series_from_samples(patient_id: str, channel: str, timestamps_ms: np.ndarray, values: np.ndarray,
                        sample_rate: float, gap_seconds: float = GAP_SECONDS) -> ChannelSeries:
    """Place timestamped samples on the uniform grid of the declared rate.

    Grid points are linearly interpolated from the raw samples; grid points
    inside a raw gap longer than ``gap_seconds`` become NaN.
    """
    ts = np.asarray(timestamps_ms, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    if len(ts) == 0:
        raise IngestionError(f"channel {channel} is empty")
    if np.any(np.diff(ts) <= 0):
        bad = int(np.flatnonzero(np.diff(ts) <= 0)[0]) + 1
        raise DataError(f"channel {channel}: timestamps not strictly increasing at row {bad + 1}")
    keep = np.isfinite(vals)
    ts_ok, vals_ok = ts[keep], vals[keep]
    start = int(round(ts[0]))
    n = int(np.floor((ts[-1] - start) * sample_rate / 1000.0 + 1e-9)) + 1
    grid = start + np.arange(n) * (1000.0 / sample_rate)
    if len(ts_ok) == 0:
        return ChannelSeries(patient_id, channel, start, sample_rate, np.full(n, np.nan))
    out = np.interp(grid, ts_ok, vals_ok)
    gap_ms = gap_seconds * 1000.0
    # mark grid points that fall inside long holes (including NaN sentinel runs)
    hole = np.flatnonzero(np.diff(ts_ok) > gap_ms)
    for h in hole:
        lo, hi = ts_ok[h], ts_ok[h + 1]
        out[(grid > lo) & (grid < hi)] = np.nan
    out[(grid < ts_ok[0]) | (grid > ts_ok[-1])] = np.nan
    return ChannelSeries(patient_id, channel, start, sample_rate, out)


def read_channel_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        header = fh.readline().strip().replace(" ", "")
    if header != "timestamp_ms,value":
        raise IngestionError(f"{path}: expected header 'timestamp_ms,value', got {header!r}")
    df = pd.read_csv(path, dtype={"timestamp_ms": np.float64, "value": np.float64})
    return df["timestamp_ms"].to_numpy(), df["value"].to_numpy()


def read_annotations(path: Path, patient_id: str) -> list[SeizureAnnotation]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"seizure_id", "onset_ms", "type"} - set(reader.fieldnames or [])
        if missing:
            raise IngestionError(f"{path}: annotation file lacks columns {sorted(missing)}")
        out = []
        for row in reader:
            horizon = row.get("horizon_min") or None
            out.append(SeizureAnnotation(
                patient_id, row["seizure_id"], int(float(row["onset_ms"])), row["type"],
                float(horizon) if horizon is not None else None,
            ))
    check_annotations(out)
    return out


def load_manifest(path: Path) -> dict:
    with open(path) as fh:
        manifest = yaml.safe_load(fh)
    if not isinstance(manifest, dict) or "channels" not in manifest:
        raise IngestionError(f"{path}: manifest needs a 'channels' mapping")
    return manifest


def ingest_patient(directory: str | Path, manifest: dict | str | Path | None = None) -> PatientRecording:
    """Read one patient's channel CSVs and seizure annotations.

    ``manifest`` defaults to ``<directory>/manifest.yaml``.  It maps each
    channel to ``{path, sample_rate}`` and names the annotation CSV.
    """
    directory = Path(directory)
    if manifest is None:
        manifest = directory / "manifest.yaml"
    if not isinstance(manifest, dict):
        manifest = load_manifest(Path(manifest))
    patient_id = str(manifest.get("patient_id", directory.name))
    channels = manifest["channels"]
    required = ["BVP", "EDA", "HR", "TEMP"]
    required += ["ACC_MAG"] if "ACC_MAG" in channels else ["ACC_X", "ACC_Y", "ACC_Z"]
    series = {}
    for ch in required:
        entry = channels.get(ch)
        path = directory / entry["path"] if entry else None
        if path is None or not path.exists():
            raise IngestionError(f"channel {ch} absent")
        ts, vals = read_channel_csv(path)
        series[ch] = series_from_samples(patient_id, ch, ts, vals, float(entry["sample_rate"]))
    ann_path = manifest.get("annotations")
    if ann_path is None or not (directory / ann_path).exists():
        raise IngestionError(f"patient {patient_id}: annotation file absent")
    annotations = read_annotations(directory / ann_path, patient_id)
    return PatientRecording(patient_id, series, annotations)


def write_patient(directory: str | Path, recording: PatientRecording) -> None:
    """Write a recording in the ingestible CSV + manifest layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    channels = {}
    for ch, s in sorted(recording.series.items()):
        name = f"{ch}.csv"
        ts = np.round(s.times_ms).astype(np.int64)
        keep = np.isfinite(s.values)
        df = pd.DataFrame({"timestamp_ms": ts[keep], "value": s.values[keep]})
        df.to_csv(directory / name, index=False, float_format="%.6f", lineterminator="\n")
        channels[ch] = {"path": name, "sample_rate": float(s.sample_rate)}
    with open(directory / "seizures.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seizure_id", "onset_ms", "type", "horizon_min"])
        for a in recording.annotations:
            w.writerow([a.seizure_id, a.onset_time, a.seizure_type, "" if a.horizon_minutes is None else a.horizon_minutes])
    manifest = {"patient_id": recording.patient_id, "channels": channels, "annotations": "seizures.csv"}
    with open(directory / "manifest.yaml", "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)


# ---------------------------------------------------------------------------
# signal transforms
# ---------------------------------------------------------------------------


def acc_magnitude(x, y, z) -> np.ndarray:
    x, y, z = (np.asarray(a, dtype=np.float64) for a in (x, y, z))
    if not x.shape == y.shape == z.shape:
        raise DimensionError(f"acc axes have different lengths: {len(x)}, {len(y)}, {len(z)}")
    return np.sqrt(x * x + y * y + z * z)


def acc_magnitude_series(series: dict[str, ChannelSeries]) -> ChannelSeries:
    if "ACC_MAG" in series:
        return series["ACC_MAG"]
    sx, sy, sz = series["ACC_X"], series["ACC_Y"], series["ACC_Z"]
    n = min(len(sx), len(sy), len(sz))
    if sx.start_time != sy.start_time or sx.start_time != sz.start_time or not sx.sample_rate == sy.sample_rate == sz.sample_rate:
        raise DataError("ACC axes are not aligned")
    mag = acc_magnitude(sx.values[:n], sy.values[:n], sz.values[:n])
    return ChannelSeries(sx.patient_id, "ACC_MAG", sx.start_time, sx.sample_rate, mag)


def block_means(values: np.ndarray, block: int) -> np.ndarray:
    n = len(values) // block
    return values[: n * block].reshape(n, block).mean(axis=1)


def resample(series: ChannelSeries, target_rate: float, origin_ms: float | None = None) -> ChannelSeries:
    """Resample onto a uniform grid at ``target_rate``.

    When downsampling, consecutive blocks of ``floor(rate / target_rate)``
    samples are averaged first and placed at their centre times; the grid is
    then filled by linear interpolation (values beyond the ends are held).
    The grid starts at ``origin_ms`` (default: the series start) and ends at
    the last original sample time.
    """
    if not target_rate > 0:
        raise ContractError(f"target_rate must be > 0, got {target_rate}")
    if len(series) < 2:
        raise ContractError("resampling needs at least 2 samples")
    rate = series.sample_rate
    block = int(np.floor(rate / target_rate + 1e-9)) if rate > target_rate else 1
    if block > 1:
        values = block_means(series.values, block)
        centers = series.start_time + (np.arange(len(values)) * block + (block - 1) / 2.0) * (1000.0 / rate)
    else:
        values = series.values
        centers = series.times_ms
    origin = float(series.start_time if origin_ms is None else origin_ms)
    n = int(np.floor((series.end_time - origin) * target_rate / 1000.0 + 1e-9)) + 1
    if n < 1:
        raise ContractError("resampling grid is empty")
    grid = origin + np.arange(n) * (1000.0 / target_rate)
    out = np.interp(grid, centers, values)
    if np.isnan(values).any():
        # a grid point is a gap if its neighbouring source samples include a gap
        nan_src = np.isnan(values).astype(np.float64)
        out[np.interp(grid, centers, nan_src) > 0] = np.nan
    return ChannelSeries(series.patient_id, series.channel, int(round(origin)), target_rate, out)
