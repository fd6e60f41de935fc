"""Binary sample archive: one blob plus a sidecar CSV per split."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from .split import SplitSet
from .windows import SampleSet

MAGIC = b"PSEIZ001"
HEADER = struct.Struct("<8sII")
CHANNELS = 5


def write_blob(path: Path, windows: np.ndarray) -> None:
    n, t = (windows.shape[0], windows.shape[1]) if windows.ndim == 3 else (0, 0)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, n, t))
        fh.write(np.ascontiguousarray(windows, dtype="<f8").tobytes())


def read_blob(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise DataError(f"{path}: truncated sample blob")
    magic, n, t = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: not a sample blob (bad magic)")
    expected = HEADER.size + n * t * CHANNELS * 8
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(n, t, CHANNELS).astype(np.float64)


def write_sidecar(path: Path, samples: SampleSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "patient_id", "window_start_ms", "source_segment_id"])
        for i in range(len(samples)):
            w.writerow([int(samples.labels[i]), samples.patient_ids[i], int(samples.window_start_ms[i]),
                        int(samples.segment_ids[i])])


def read_sidecar(path: Path) -> tuple[list, list, list, list]:
    labels, pids, starts, segs = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(int(row["label"]))
            pids.append(row["patient_id"])
            starts.append(int(row["window_start_ms"]))
            segs.append(int(row["source_segment_id"]))
    return labels, pids, starts, segs


def write_archive(directory: str | Path, splits: SplitSet, metadata: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, part in splits.parts().items():
        write_blob(directory / f"{name}.bin", part.windows)
        write_sidecar(directory / f"{name}.csv", part)
        counts[name] = len(part)
    manifest = {
        "format": "PSEIZ001",
        "channels": ["BVP", "EDA", "HR", "ACC_MAG", "TEMP"],
        "split_seed": splits.split_seed,
        "counts": counts,
        "window_rows": int(splits.train.windows.shape[1]) if len(splits.train) else 0,
        **(metadata or {}),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_archive(directory: str | Path) -> tuple[SplitSet, dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{directory}: no sample archive manifest")
    manifest = json.loads(manifest_path.read_text())
    parts = {}
    for name in ("train", "validation", "test"):
        windows = read_blob(directory / f"{name}.bin")
        labels, pids, starts, segs = read_sidecar(directory / f"{name}.csv")
        if len(labels) != len(windows):
            raise DataError(f"{directory}: {name} sidecar has {len(labels)} rows for {len(windows)} windows")
        parts[name] = SampleSet(windows, labels, pids, starts, segs)
    return SplitSet(parts["train"], parts["validation"], parts["test"], int(manifest["split_seed"])), manifest
